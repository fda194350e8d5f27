#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "sda/field.hpp"
#include "sda/observation.hpp"
#include "sda/rng.hpp"

namespace sda {

namespace detail {
inline void check_series(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> obs) {
  if (pred.empty()) throw ConfigError("metric needs at least one time");
  if (pred.size() != obs.size()) throw ConfigError("prediction and observation series differ in length");
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].size() != obs[t].size())
      throw ConfigError("prediction and observation differ in length at time " + std::to_string(t));
    if (pred[t].empty()) throw ConfigError("no entries at time " + std::to_string(t));
  }
}

template <class F>
double mean_over_times(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> obs, F&& f) {
  check_series(pred, obs);
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    double s = 0.0;
    for (std::size_t k = 0; k < pred[t].size(); ++k) s += f(obs[t][k] - pred[t][k]);
    acc += s / double(pred[t].size());
  }
  return acc / double(pred.size());
}
}  // namespace detail

// Per-time vectors of predicted values at the observation locations vs. the observations.
inline double mse(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> obs) {
  return detail::mean_over_times(pred, obs, [](double e) { return e * e; });
}
inline double mae(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> obs) {
  return detail::mean_over_times(pred, obs, [](double e) { return std::abs(e); });
}
inline double rmse(std::span<const std::vector<double>> pred, std::span<const std::vector<double>> obs) {
  return std::sqrt(mse(pred, obs));
}

// Single-time conveniences.
inline double mse(const std::vector<double>& pred, const std::vector<double>& obs) {
  return mse(std::span(&pred, 1), std::span(&obs, 1));
}
inline double mae(const std::vector<double>& pred, const std::vector<double>& obs) {
  return mae(std::span(&pred, 1), std::span(&obs, 1));
}

// -----------------------------------------------------------------------------

/// Fair CRPS of R >= 2 (noise-augmented) members against y:
///   (1/R) sum_r |m_r - y|  -  1/(2R(R-1)) sum_{r != q} |m_r - m_q|
/// The pair sum uses the sorted form sum_{r != q}|a_r - a_q| = 2 sum_i (2i - R + 1) a_(i).
inline double crps_fair(std::span<const double> members, double y) {
  const std::size_t R = members.size();
  if (R < 2) throw ConfigError("crps_fair needs at least two members");
  std::vector<double> a(members.begin(), members.end());
  std::sort(a.begin(), a.end());
  double skill = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < R; ++i) {
    skill += std::abs(a[i] - y);
    pairs += (2.0 * double(i) - double(R) + 1.0) * a[i];
  }
  const double r = double(R);
  return skill / r - (2.0 * pairs) / (2.0 * r * (r - 1.0));
}

/// Bias-corrected spread ((R+1)/R) * mean_t s_t^2, with s_t^2 the unbiased member variance at time t.
inline double ensemble_spread(std::span<const std::vector<double>> members_per_time) {
  if (members_per_time.empty()) throw ConfigError("ensemble_spread needs at least one time");
  std::size_t R = members_per_time.front().size();
  double acc = 0.0;
  for (const auto& m : members_per_time) {
    if (m.size() < 2) throw ConfigError("ensemble_spread needs at least two members");
    if (m.size() != R) throw ConfigError("ensemble size changes between times");
    const double mean = std::accumulate(m.begin(), m.end(), 0.0) / double(R);
    double s2 = 0.0;
    for (double v : m) s2 += (v - mean) * (v - mean);
    acc += s2 / double(R - 1);
  }
  return (double(R) + 1.0) / double(R) * acc / double(members_per_time.size());
}

// -----------------------------------------------------------------------------

struct RankHistogram {
  std::vector<std::size_t> counts;  // R + 1 bins

  explicit RankHistogram(std::size_t ensemble_size = 0) : counts(ensemble_size + 1, 0) {}

  std::size_t ensemble_size() const noexcept { return counts.empty() ? 0 : counts.size() - 1; }
  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  /// Rank of y among the members; ties take a uniformly random position among the equal values.
  void add(std::span<const double> members, double y, Rng& rng) {
    if (members.empty()) throw ConfigError("rank histogram needs at least one member");
    if (members.size() != ensemble_size()) throw ConfigError("rank histogram ensemble size mismatch");
    std::size_t below = 0, equal = 0;
    for (double m : members) {
      if (m < y) ++below;
      else if (m == y) ++equal;
    }
    const std::size_t rank = below + (equal ? rng.uniform_index(equal + 1) : 0);
    ++counts[rank];
  }
};

inline RankHistogram rank_histogram(std::span<const std::vector<double>> members_per_point, std::span<const double> y,
                                    Rng& rng) {
  if (members_per_point.size() != y.size()) throw ConfigError("rank histogram: member/observation count mismatch");
  if (members_per_point.empty()) return RankHistogram(0);
  RankHistogram h(members_per_point.front().size());
  for (std::size_t k = 0; k < y.size(); ++k) h.add(members_per_point[k], y[k], rng);
  return h;
}

struct ChiSquareResult {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
};

/// Pearson chi-square test of the histogram against the uniform distribution.
inline ChiSquareResult chi_square_uniformity(std::span<const std::size_t> counts) {
  if (counts.size() < 2) throw ConfigError("chi-square needs at least two bins");
  const double total = double(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total <= 0.0) throw ConfigError("chi-square needs a non-empty histogram");
  const double expected = total / double(counts.size());
  ChiSquareResult r;
  for (auto c : counts) r.statistic += (double(c) - expected) * (double(c) - expected) / expected;
  r.dof = counts.size() - 1;
  boost::math::chi_squared dist(double(r.dof));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

// -----------------------------------------------------------------------------

struct ConfidenceInterval {
  double lo = 0.0, hi = 0.0;
};

/// Percentile bootstrap CI of the mean, clamped so lo <= mean <= hi.
inline ConfidenceInterval bootstrap_ci(std::span<const double> values, std::size_t iterations, double level,
                                       std::uint64_t seed) {
  if (values.size() < 2) throw ConfigError("bootstrap_ci needs at least two values");
  if (iterations == 0) throw ConfigError("bootstrap_ci needs at least one iteration");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap level must be in (0, 1)");
  const double n = double(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  Rng rng(seed);
  std::vector<double> means(iterations);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) s += values[rng.uniform_index(values.size())];
    m = s / n;
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * double(iterations - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, iterations - 1);
    return means[lo] + (pos - double(lo)) * (means[hi] - means[lo]);
  };
  const double alpha = 1.0 - level;
  ConfidenceInterval ci{quantile(alpha / 2.0), quantile(1.0 - alpha / 2.0)};
  ci.lo = std::min(ci.lo, mean);
  ci.hi = std::max(ci.hi, mean);
  return ci;
}

inline ConfidenceInterval bootstrap_ci(std::span<const double> values, std::size_t iterations = 1000,
                                       double level = 0.95) {
  return bootstrap_ci(values, iterations, level, 0);
}

// -----------------------------------------------------------------------------

struct ChannelMetrics {
  std::string channel;
  double mse_mean = 0.0, mse_single = 0.0, mae_mean = 0.0, mae_single = 0.0, crps = 0.0, var_ens = 0.0;
  std::vector<double> rmse_series;  // per time, ensemble mean
  ConfidenceInterval mse_mean_ci, crps_ci;
  std::size_t scored = 0;
};

struct EvalReport {
  std::vector<ChannelMetrics> channels;

  void validate() const {
    for (const auto& c : channels) {
      for (double v : {c.mse_mean, c.mse_single, c.mae_mean, c.mae_single, c.crps, c.var_ens})
        if (!(std::isfinite(v) && v >= 0.0)) throw NumericalError("report metric for " + c.channel + " is invalid");
    }
  }

  void write_csv(std::ostream& os) const {
    os << "channel,metric,value,ci_lo,ci_hi\n";
    os.precision(10);
    for (const auto& c : channels) {
      os << c.channel << ",mse_mean," << c.mse_mean << ',' << c.mse_mean_ci.lo << ',' << c.mse_mean_ci.hi << '\n';
      os << c.channel << ",mse_single," << c.mse_single << ",,\n";
      os << c.channel << ",mae_mean," << c.mae_mean << ",,\n";
      os << c.channel << ",mae_single," << c.mae_single << ",,\n";
      os << c.channel << ",crps," << c.crps << ',' << c.crps_ci.lo << ',' << c.crps_ci.hi << '\n';
      os << c.channel << ",var_ens," << c.var_ens << ",,\n";
      os << c.channel << ",rmse_mean," << std::sqrt(c.mse_mean) << ",,\n";
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& c : channels) {
      j[c.channel] = {{"mse_mean", c.mse_mean},
                      {"mse_single", c.mse_single},
                      {"mae_mean", c.mae_mean},
                      {"mae_single", c.mae_single},
                      {"crps", c.crps},
                      {"var_ens", c.var_ens},
                      {"rmse_series", c.rmse_series},
                      {"mse_mean_ci", {c.mse_mean_ci.lo, c.mse_mean_ci.hi}},
                      {"crps_ci", {c.crps_ci.lo, c.crps_ci.hi}},
                      {"scored", c.scored}};
    }
    return j;
  }
};

struct EvalOptions {
  std::size_t bootstrap_iterations = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
};

/// Scores an ensemble per time against the observations of that time.
/// Observation values and sigmas are in normalized model space; errors are reported in physical units.
/// Members are noise-augmented (in model space) for CRPS and spread; MSE/MAE use raw member values.
inline EvalReport evaluate_ensemble(std::span<const Ensemble> ensembles, std::span<const ObservationSet> observations,
                                    const EvalOptions& opt = {}) {
  if (ensembles.empty()) throw ConfigError("evaluate needs at least one time");
  if (ensembles.size() != observations.size()) throw ConfigError("ensemble and observation series differ in length");
  const FieldGrid& ref = ensembles.front().members.front();
  const std::size_t nc = ref.channels().size();
  Rng rng(derive_seed(opt.seed, 1));
  EvalReport report;
  for (std::size_t c = 0; c < nc; ++c) {
    const ChannelSpec& spec = ref.channels()[c];
    const double mu = ref.norm().mean[c], sd = ref.norm().std[c];
    auto phys = [&](double model) { return to_physical(model * sd + mu, spec); };

    std::vector<std::vector<double>> pm, ps, ob, aug;
    std::vector<double> crps_t;
    ChannelMetrics m;
    m.channel = spec.name;
    for (std::size_t t = 0; t < ensembles.size(); ++t) {
      const Ensemble& ens = ensembles[t];
      ens.validate();
      if (!ens.members.front().same_layout(ref)) throw ConfigError("ensemble layout changes between times");
      if (ens.size() < 2) throw ConfigError("evaluation needs at least two members");
      observations[t].validate(ref.shape());
      std::vector<double> p_mean, p_single, o;
      double crps_acc = 0.0;
      for (const auto& obs : observations[t].items) {
        if (obs.channel != c) continue;
        const std::size_t flat = ref.shape().index(obs.channel, obs.row, obs.col);
        std::vector<double> members(ens.size()), noisy(ens.size());
        for (std::size_t r = 0; r < ens.size(); ++r) {
          const double v = ens.members[r].values()[flat];
          members[r] = phys(v);
          noisy[r] = phys(v + obs.sigma * rng.normal());
        }
        p_mean.push_back(std::accumulate(members.begin(), members.end(), 0.0) / double(members.size()));
        p_single.push_back(members.front());
        o.push_back(phys(obs.value));
        crps_acc += crps_fair(noisy, o.back());
        aug.push_back(std::move(noisy));
      }
      if (o.empty()) continue;
      crps_t.push_back(crps_acc / double(o.size()));
      pm.push_back(std::move(p_mean));
      ps.push_back(std::move(p_single));
      ob.push_back(std::move(o));
      m.rmse_series.push_back(std::sqrt(mse(pm.back(), ob.back())));
      m.scored += ob.back().size();
    }
    if (ob.empty()) continue;
    m.mse_mean = mse(pm, ob);
    m.mse_single = mse(ps, ob);
    m.mae_mean = mae(pm, ob);
    m.mae_single = mae(ps, ob);
    m.crps = std::accumulate(crps_t.begin(), crps_t.end(), 0.0) / double(crps_t.size());
    m.var_ens = ensemble_spread(aug);
    if (ob.size() >= 2) {
      std::vector<double> mse_t(m.rmse_series.size());
      for (std::size_t t = 0; t < mse_t.size(); ++t) mse_t[t] = m.rmse_series[t] * m.rmse_series[t];
      m.mse_mean_ci = bootstrap_ci(mse_t, opt.bootstrap_iterations, opt.level, derive_seed(opt.seed, 10 + c));
      m.crps_ci = bootstrap_ci(crps_t, opt.bootstrap_iterations, opt.level, derive_seed(opt.seed, 1000 + c));
    } else {
      m.mse_mean_ci = {m.mse_mean, m.mse_mean};
      m.crps_ci = {m.crps, m.crps};
    }
    report.channels.push_back(std::move(m));
  }
  report.validate();
  return report;
}

// -----------------------------------------------------------------------------

struct SweepRow {
  std::size_t count = 0;  // guiding stations
  std::string channel;
  double rmse = 0.0;
  std::size_t evaluated = 0;
  bool high_variance = false;  // a single held-out station
};

/// Assimilates with k of the stations (fixed random split) and scores the model-space analysis
/// at the held-out ones. `assimilate` maps the guiding set to an analysis grid.
inline std::vector<SweepRow> station_sweep(const ObservationSet& stations, std::span<const std::size_t> counts,
                                           const std::function<FieldGrid(const ObservationSet&)>& assimilate,
                                           std::uint64_t split_seed) {
  if (stations.size() < 2) throw ConfigError("station sweep needs at least two stations");
  for (auto k : counts)
    if (k >= stations.size())
      throw ConfigError("station count " + std::to_string(k) + " leaves no held-out station (total " +
                        std::to_string(stations.size()) + ")");
  std::vector<std::size_t> order(stations.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng.engine());

  std::vector<SweepRow> rows;
  for (auto k : counts) {
    ObservationSet guide, held;
    for (std::size_t n = 0; n < order.size(); ++n) (n < k ? guide : held).items.push_back(stations.items[order[n]]);
    const FieldGrid analysis = assimilate(guide);
    held.validate(analysis.shape());
    for (std::size_t c = 0; c < analysis.channels().size(); ++c) {
      double acc = 0.0;
      std::size_t n = 0;
      for (const auto& o : held.items) {
        if (o.channel != c) continue;
        const double e = analysis.at(o.channel, o.row, o.col) - o.value;
        acc += e * e;
        ++n;
      }
      if (n == 0) continue;
      rows.push_back({k, analysis.channels()[c].name, std::sqrt(acc / double(n)), n, n == 1});
    }
  }
  return rows;
}

// -----------------------------------------------------------------------------

struct ChannelHistogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts_a, counts_b;
};

struct ClimateDiagnostics {
  std::vector<std::string> channels;
  std::vector<std::vector<double>> mean_a, mean_b, bias;  // per channel, H*W time-mean maps (b - a for bias)
  std::vector<ChannelHistogram> histograms;
  std::vector<double> mean_bias;       // spatial mean of bias
  std::vector<double> variance_ratio;  // var(b) / var(a)
};

/// Time-mean maps, shared-bin value histograms, and summary distances between two sample sets.
inline ClimateDiagnostics climate_diagnostics(std::span<const FieldGrid> a, std::span<const FieldGrid> b,
                                              std::size_t bins = 32) {
  if (a.empty() || b.empty()) throw ConfigError("climate diagnostics need non-empty sample sets");
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  const FieldGrid& ref = a.front();
  for (const auto* set : {&a, &b})
    for (const auto& g : *set)
      if (!(g.shape() == ref.shape())) throw ConfigError("climate diagnostics: sample shapes differ");
  const std::size_t nc = ref.shape().channels, plane = ref.shape().plane();

  auto time_mean = [&](std::span<const FieldGrid> set, std::size_t c) {
    std::vector<double> m(plane, 0.0);
    for (const auto& g : set) {
      auto ch = g.channel(c);
      for (std::size_t k = 0; k < plane; ++k) m[k] += ch[k];
    }
    for (auto& v : m) v /= double(set.size());
    return m;
  };
  auto variance = [&](std::span<const FieldGrid> set, std::size_t c) {
    double s = 0.0, s2 = 0.0, n = 0.0;
    for (const auto& g : set)
      for (double v : g.channel(c)) s += v, s2 += v * v, n += 1.0;
    const double mean = s / n;
    return s2 / n - mean * mean;
  };

  ClimateDiagnostics d;
  for (std::size_t c = 0; c < nc; ++c) {
    d.channels.push_back(ref.channels()[c].name);
    d.mean_a.push_back(time_mean(a, c));
    d.mean_b.push_back(time_mean(b, c));
    std::vector<double> bias(plane);
    for (std::size_t k = 0; k < plane; ++k) bias[k] = d.mean_b.back()[k] - d.mean_a.back()[k];
    d.mean_bias.push_back(std::accumulate(bias.begin(), bias.end(), 0.0) / double(plane));
    d.bias.push_back(std::move(bias));
    const double va = variance(a, c);
    d.variance_ratio.push_back(va > 0.0 ? variance(b, c) / va : std::numeric_limits<double>::infinity());

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto* set : {&a, &b})
      for (const auto& g : *set)
        for (double v : g.channel(c)) lo = std::min(lo, v), hi = std::max(hi, v);
    if (hi <= lo) hi = lo + 1.0;
    ChannelHistogram h;
    for (std::size_t k = 0; k <= bins; ++k) h.edges.push_back(lo + (hi - lo) * double(k) / double(bins));
    h.counts_a.assign(bins, 0);
    h.counts_b.assign(bins, 0);
    auto fill = [&](std::span<const FieldGrid> set, std::vector<std::size_t>& counts) {
      for (const auto& g : set)
        for (double v : g.channel(c)) {
          auto k = static_cast<std::size_t>((v - lo) / (hi - lo) * double(bins));
          ++counts[std::min(k, bins - 1)];
        }
    };
    fill(a, h.counts_a);
    fill(b, h.counts_b);
    d.histograms.push_back(std::move(h));
  }
  return d;
}

}  // namespace sda
