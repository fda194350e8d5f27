#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <thread>
#include <vector>

#include "sda/denoiser.hpp"
#include "sda/observation.hpp"
#include "sda/schedule.hpp"

namespace sda {

/// Sampling knobs. Defaults are the values used for every experiment except the missing-channel one.
struct GuidanceConfig {
  int n_steps = 64;
  int corrections = 2;
  double tau_tilde = 0.3;
  double gamma = 1e-3;
  double obs_sigma = 0.1;  // default sqrt(Sigma_y), normalized units
  std::uint64_t seed = 0;

  static GuidanceConfig defaults() { return {}; }

  static GuidanceConfig missing_channel() {
    GuidanceConfig c;
    c.n_steps = 256;
    c.corrections = 10;
    c.gamma = 1e-2;
    return c;
  }

  static GuidanceConfig preset(const std::string& name) {
    if (name == "default") return defaults();
    if (name == "missing-channel") return missing_channel();
    throw ConfigError("unknown preset '" + name + "' (expected default | missing-channel)");
  }

  void validate() const {
    if (n_steps < 2) throw ConfigError("n_steps must be >= 2");
    if (corrections < 0) throw ConfigError("corrections must be >= 0");
    if (!(tau_tilde > 0.0)) throw ConfigError("tau_tilde must be > 0");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(obs_sigma > 0.0)) throw ConfigError("obs_sigma must be > 0");
  }
};

/// Gaussian observation model y ~ N(H x, R) with diagonal R.
class LikelihoodModel {
 public:
  LikelihoodModel() = default;

  LikelihoodModel(GridShape shape, const ObservationSet& obs)
      : op_(ObsOperator::point_set(shape, obs)) {
    obs.validate(shape);
    y_.reserve(obs.size());
    r_.reserve(obs.size());
    for (const auto& o : obs.items) {
      y_.push_back(o.value);
      r_.push_back(o.sigma * o.sigma);
    }
  }

  LikelihoodModel(ObsOperator op, std::vector<double> y, std::vector<double> variance)
      : op_(std::move(op)), y_(std::move(y)), r_(std::move(variance)) {
    if (y_.size() != op_->output_dim() || r_.size() != y_.size())
      throw ConfigError("likelihood: observation vector does not match operator output dimension");
    for (std::size_t k = 0; k < r_.size(); ++k)
      if (!(r_[k] > 0.0)) throw ConfigError("likelihood: variance entry " + std::to_string(k) + " must be > 0");
  }

  bool empty() const noexcept { return !op_ || y_.empty(); }
  const ObsOperator& op() const { return *op_; }
  const std::vector<double>& y() const noexcept { return y_; }
  const std::vector<double>& variance() const noexcept { return r_; }

 private:
  std::optional<ObsOperator> op_;
  std::vector<double> y_;
  std::vector<double> r_;
};

// -----------------------------------------------------------------------------
// Scores at VP time tau for a state x~ = mu x + sigma_s eps.

namespace detail {

struct DenoisedState {
  std::vector<double> z;      // x~ / mu
  std::vector<double> x_hat;  // D(z; sigma_s / mu)
  double mu, sigma_s, sigma_edm;
};

inline DenoisedState denoise_vp(const Denoiser& d, std::span<const double> x_tau, double tau, const VPSchedule& vp) {
  if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("score requires tau in (0, 1]");
  DenoisedState s;
  s.mu = vp.mu(tau);
  s.sigma_s = vp.sigma_s(tau);
  s.sigma_edm = s.sigma_s / s.mu;
  s.z.resize(x_tau.size());
  for (std::size_t k = 0; k < x_tau.size(); ++k) s.z[k] = x_tau[k] / s.mu;
  s.x_hat = d.evaluate(s.z, s.sigma_edm);
  return s;
}

// -eps / sigma_s with eps = (z - x_hat) mu / sigma_s
inline std::vector<double> prior_score_from(const DenoisedState& s) {
  std::vector<double> out(s.z.size());
  const double scale = -s.mu / (s.sigma_s * s.sigma_s);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (s.z[k] - s.x_hat[k]) * scale;
  return out;
}

// grad_{x~} -1/2 r^T V^{-1} r with r = y - H D(x~/mu; sigma_s/mu), added into `out`.
inline void add_likelihood_score(const Denoiser& d, const DenoisedState& s, double gamma, const LikelihoodModel& lik,
                                 std::span<double> out) {
  const auto& op = lik.op();
  std::vector<double> h = op.apply(s.x_hat);
  const double inflation = (s.sigma_s * s.sigma_s) / (s.mu * s.mu) * gamma;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double r = lik.y()[k] - h[k];
    if (!std::isfinite(r)) throw NumericalError("non-finite observation residual at observation index " + std::to_string(k));
    h[k] = r / (lik.variance()[k] + inflation);
  }
  const std::vector<double> cot = op.adjoint(h);
  const std::vector<double> g = d.vjp(s.z, s.sigma_edm, cot);
  const double chain = 1.0 / s.mu;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += chain * g[k];
}

}  // namespace detail

/// Prior score grad log p(x~ at time tau) from the denoiser via the eps adapter.
inline std::vector<double> prior_score(std::span<const double> x_tau, double tau, const Denoiser& d,
                                       const VPSchedule& vp = {}) {
  return detail::prior_score_from(detail::denoise_vp(d, x_tau, tau, vp));
}

inline std::vector<double> likelihood_score(std::span<const double> x_tau, double tau, const Denoiser& d,
                                            const LikelihoodModel& lik, const GuidanceConfig& cfg,
                                            const VPSchedule& vp = {}) {
  std::vector<double> out(x_tau.size(), 0.0);
  if (lik.empty()) return out;
  detail::add_likelihood_score(d, detail::denoise_vp(d, x_tau, tau, vp), cfg.gamma, lik, out);
  return out;
}

/// Prior score plus likelihood score; exactly the prior score when there are no observations.
inline std::vector<double> posterior_score(std::span<const double> x_tau, double tau, const Denoiser& d,
                                           const LikelihoodModel& lik, const GuidanceConfig& cfg,
                                           const VPSchedule& vp = {}) {
  const auto s = detail::denoise_vp(d, x_tau, tau, vp);
  std::vector<double> out = detail::prior_score_from(s);
  if (!lik.empty()) detail::add_likelihood_score(d, s, cfg.gamma, lik, out);
  return out;
}

inline FieldGrid posterior_score(const FieldGrid& x_tau, double tau, const Denoiser& d, const LikelihoodModel& lik,
                                 const GuidanceConfig& cfg) {
  return FieldGrid::like(x_tau, posterior_score(x_tau.data(), tau, d, lik, cfg));
}

// -----------------------------------------------------------------------------

using ScoreFn = std::function<std::vector<double>(std::span<const double>, double)>;

/// C Langevin steps x <- x + delta s(x) + sqrt(2 delta) xi with delta = tau_tilde dim(s) / |s|^2,
/// recomputed from the current score each step. Returns the number of skipped (zero-score) steps.
inline int lmc_correct(std::span<double> x, double tau, const ScoreFn& score, int corrections, double tau_tilde,
                       Rng& rng) {
  if (corrections < 0) throw ConfigError("corrections must be >= 0");
  if (corrections > 0 && !(tau > 0.0 && tau <= 1.0)) throw DomainError("LMC requires tau in (0, 1]");
  int skipped = 0;
  std::vector<double> noise(x.size());
  for (int step = 0; step < corrections; ++step) {
    const std::vector<double> s = score(x, tau);
    const double sq = dot(s, s);
    if (!(sq > 0.0)) {
      ++skipped;
      warn("LMC step skipped at tau=" + std::to_string(tau) + ": score vanished, step size undefined");
      continue;
    }
    const double delta = tau_tilde * static_cast<double>(s.size()) / sq;
    const double amp = std::sqrt(2.0 * delta);
    rng.fill_normal(noise);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += delta * s[k] + amp * noise[k];
  }
  return skipped;
}

/// Reverse VP sampler over the uniform tau grid. Predictor: exponential-integrator update
///   x' = (mu'/mu) x + (sigma_s' - (mu'/mu) sigma_s) eps,  eps = -sigma_s * score(x, tau),
/// followed by LMC corrections whenever the step lands on tau > 0. The last step into tau = 0
/// lands exactly on the (guided) denoised estimate, so no denoiser query happens at tau = 0.
/// Starts from x(1) ~ N(0, I) drawn from `rng`.
inline std::vector<double> reverse_sample(std::size_t dim, const ScoreFn& score, const GuidanceConfig& cfg, Rng& rng,
                                          const VPSchedule& vp = {}) {
  cfg.validate();
  const std::vector<double> taus = tau_grid(cfg.n_steps);
  std::vector<double> x(dim);
  rng.fill_normal(x);
  for (std::size_t step = 0; step + 1 < taus.size(); ++step) {
    const double t = taus[step], t_next = taus[step + 1];
    const double ss = vp.sigma_s(t), ss_n = vp.sigma_s(t_next);
    const double ratio = vp.mu(t_next) / vp.mu(t);
    const double coeff = -(ss_n - ratio * ss) * ss;
    const std::vector<double> s = score(x, t);
    for (std::size_t k = 0; k < dim; ++k) x[k] = ratio * x[k] + coeff * s[k];
    if (t_next > 0.0) lmc_correct(x, t_next, score, cfg.corrections, cfg.tau_tilde, rng);
    if (!all_finite(x)) {
      std::ostringstream msg;
      msg << "non-finite state after step " << step << " (tau=" << t_next << ")";
      throw NumericalError(msg.str());
    }
  }
  return x;
}

/// One posterior draw x(0) | y. Deterministic given cfg.seed.
inline std::vector<double> assimilate(const Denoiser& d, const LikelihoodModel& lik, const GuidanceConfig& cfg,
                                      Rng& rng) {
  if (!lik.empty() && !(lik.op().shape() == d.shape()))
    throw ConfigError("observation operator grid does not match the denoiser grid");
  const ScoreFn score = [&](std::span<const double> x, double tau) { return posterior_score(x, tau, d, lik, cfg); };
  return reverse_sample(d.shape().size(), score, cfg, rng);
}

inline std::vector<double> assimilate(const Denoiser& d, const LikelihoodModel& lik, const GuidanceConfig& cfg) {
  Rng rng(cfg.seed);
  return assimilate(d, lik, cfg, rng);
}

/// Unguided draw from the prior with the same sampler.
inline std::vector<double> sample_unconditional(const Denoiser& d, const GuidanceConfig& cfg, Rng& rng) {
  const ScoreFn score = [&](std::span<const double> x, double tau) { return prior_score(x, tau, d); };
  return reverse_sample(d.shape().size(), score, cfg, rng);
}

/// Deterministic EDM Heun sampler over the EDM noise levels, starting at sigma_max * z.
inline std::vector<double> sample_edm(const Denoiser& d, const EDMSchedule& sched, Rng& rng) {
  const std::vector<double> sig = sched.sigmas();
  const std::size_t dim = d.shape().size();
  std::vector<double> x(dim), dx(dim), x_next(dim), dx2(dim);
  rng.fill_normal(x);
  for (auto& v : x) v *= sig.front();
  for (std::size_t i = 0; i + 1 < sig.size(); ++i) {
    const double s = sig[i], sn = sig[i + 1];
    const std::vector<double> den = d.evaluate(x, s);
    for (std::size_t k = 0; k < dim; ++k) {
      dx[k] = (x[k] - den[k]) / s;
      x_next[k] = x[k] + (sn - s) * dx[k];
    }
    if (sn > 0.0) {
      const std::vector<double> den2 = d.evaluate(x_next, sn);
      for (std::size_t k = 0; k < dim; ++k) {
        dx2[k] = (x_next[k] - den2[k]) / sn;
        x_next[k] = x[k] + (sn - s) * 0.5 * (dx[k] + dx2[k]);
      }
    }
    x.swap(x_next);
    if (!all_finite(x)) throw NumericalError("non-finite state in EDM sampler at step " + std::to_string(i));
  }
  return x;
}

// -----------------------------------------------------------------------------

class EnsembleFailure : public Error {
 public:
  EnsembleFailure(const std::string& what, std::vector<std::uint64_t> failed)
      : Error(ErrorKind::numerical, what), failed_(std::move(failed)) {}
  const std::vector<std::uint64_t>& failed_seeds() const noexcept { return failed_; }

 private:
  std::vector<std::uint64_t> failed_;
};

/// Runs `draw(member_rng)` for every member with per-member seeds derived from `base_seed`.
/// Output order follows member index regardless of thread scheduling.
inline Ensemble run_ensemble(std::size_t members, std::uint64_t base_seed, std::size_t threads,
                             const std::function<std::vector<double>(Rng&)>& draw, const FieldGrid& layout) {
  if (members == 0) throw ConfigError("ensemble size must be >= 1");
  std::vector<std::vector<double>> states(members);
  std::vector<std::uint64_t> seeds(members);
  std::vector<std::string> errors(members);
  for (std::size_t r = 0; r < members; ++r) seeds[r] = derive_seed(base_seed, r);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < members; r = next++) {
      try {
        Rng rng(seeds[r]);
        states[r] = draw(rng);
      } catch (const std::exception& e) {
        errors[r] = e.what();
      }
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, members);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  std::vector<std::uint64_t> failed;
  std::ostringstream msg;
  for (std::size_t r = 0; r < members; ++r)
    if (!errors[r].empty()) {
      failed.push_back(seeds[r]);
      msg << "\n  member " << r << " (seed " << seeds[r] << "): " << errors[r];
    }
  if (!failed.empty())
    throw EnsembleFailure(std::to_string(failed.size()) + " of " + std::to_string(members) +
                              " ensemble members failed:" + msg.str(),
                          failed);

  Ensemble ens;
  ens.seeds = seeds;
  for (auto& s : states) ens.members.push_back(FieldGrid::like(layout, std::move(s)));
  return ens;
}

inline Ensemble assimilate_ensemble(const Denoiser& d, const LikelihoodModel& lik, const GuidanceConfig& cfg,
                                    std::size_t members, std::size_t threads = 1, const FieldGrid* layout = nullptr) {
  const FieldGrid fallback = layout ? *layout : FieldGrid::zeros(d.shape());
  return run_ensemble(
      members, cfg.seed, threads, [&](Rng& rng) { return assimilate(d, lik, cfg, rng); }, fallback);
}

}  // namespace sda
