#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sda/conv_denoiser.hpp"
#include "sda/covariance.hpp"
#include "sda/gaussian_denoiser.hpp"
#include "sda/guidance.hpp"
#include "sda/schedule.hpp"

namespace sda {

// Linear-Gaussian checks with closed-form answers, runnable without any trained model.

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string measured;  // human-readable measured quantities vs. tolerances
  double seconds = 0.0;
};

/// Kalman update for y = H x + eta, eta ~ N(0, diag(r)), prior N(m, C); H selects `idx`.
struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline GaussianPosterior kalman_posterior(const Eigen::MatrixXd& c, const Eigen::VectorXd& m,
                                          const std::vector<std::size_t>& idx, const Eigen::VectorXd& y,
                                          const Eigen::VectorXd& r) {
  const Eigen::Index n = c.rows(), k = Eigen::Index(idx.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, n);
  for (Eigen::Index a = 0; a < k; ++a) h(a, Eigen::Index(idx[a])) = 1.0;
  Eigen::MatrixXd s = h * c * h.transpose();
  s.diagonal() += r;
  const Eigen::MatrixXd gain = c * h.transpose() * s.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  return {m + gain * (y - h * m), c - gain * h * c};
}

/// 16x16 SE prior (l = 3), 12 distinct random point observations of a prior draw with R = 0.1^2 I.
struct LinearGaussianScenario {
  GridShape shape{1, 16, 16};
  double length_scale = 3.0;
  std::shared_ptr<const Covariance> cov;
  std::vector<double> truth;
  ObservationSet obs;

  static LinearGaussianScenario make(std::uint64_t seed, std::size_t n_obs = 12, double obs_sigma = 0.1) {
    LinearGaussianScenario s;
    s.cov = std::make_shared<KroneckerCovariance>(
        KroneckerCovariance::single_channel(s.shape.height, s.shape.width, s.length_scale));
    Rng rng(seed);
    s.truth = s.cov->sample(rng);
    std::vector<std::size_t> picks;
    while (picks.size() < n_obs) {
      const std::size_t k = rng.uniform_index(s.shape.size());
      if (std::find(picks.begin(), picks.end(), k) != picks.end()) continue;
      picks.push_back(k);
      Observation o;
      o.row = k / s.shape.width;
      o.col = k % s.shape.width;
      o.sigma = obs_sigma;
      o.value = s.truth[k] + obs_sigma * rng.normal();
      s.obs.items.push_back(o);
    }
    return s;
  }

  GaussianPosterior exact_posterior() const {
    const std::vector<double> l{length_scale};
    const Eigen::MatrixXd c = squared_exponential_covariance_matrix(shape, l, Eigen::MatrixXd::Identity(1, 1), 1e-6);
    std::vector<std::size_t> idx;
    Eigen::VectorXd y(Eigen::Index(obs.size())), r(Eigen::Index(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const auto& o = obs.items[k];
      idx.push_back(shape.index(0, o.row, o.col));
      y(Eigen::Index(k)) = o.value;
      r(Eigen::Index(k)) = o.sigma * o.sigma;
    }
    return kalman_posterior(c, Eigen::VectorXd::Zero(Eigen::Index(shape.size())), idx, y, r);
  }
};

namespace detail {
template <class F>
CheckResult timed_check(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = body();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}
}  // namespace detail

struct PosteriorCheckOptions {
  std::size_t members = 256;
  GuidanceConfig cfg = [] {
    GuidanceConfig c;
    c.n_steps = 256;
    c.corrections = 2;
    c.tau_tilde = 0.3;
    c.gamma = 1e-4;
    c.seed = 11;
    return c;
  }();
  std::uint64_t scenario_seed = 3;
  std::size_t threads = 1;
  double mean_tolerance = 0.10;  // relative L2
  double std_band = 0.30;        // relative, per pixel
  double std_fraction = 0.90;    // of pixels inside the band
};

/// Ensemble from guided sampling with the analytic denoiser vs. the exact Kalman posterior.
inline CheckResult check_posterior_equivalence(const PosteriorCheckOptions& opt = {}) {
  return detail::timed_check("linear-gaussian posterior", [&] {
    const auto sc = LinearGaussianScenario::make(opt.scenario_seed);
    const GaussianAnalyticDenoiser d(sc.cov);
    const LikelihoodModel lik(sc.shape, sc.obs);
    const Ensemble ens = assimilate_ensemble(d, lik, opt.cfg, opt.members, opt.threads);
    const auto post = sc.exact_posterior();
    const FieldGrid mean = ens.mean(), sd = ens.stddev();
    const Eigen::Map<const Eigen::VectorXd> em(mean.values().data(), Eigen::Index(mean.size()));
    const double rel = (em - post.mean).norm() / post.mean.norm();
    std::size_t inside = 0;
    for (std::size_t k = 0; k < sd.size(); ++k) {
      const double exact = std::sqrt(post.cov(Eigen::Index(k), Eigen::Index(k)));
      if (std::abs(sd.values()[k] / exact - 1.0) <= opt.std_band) ++inside;
    }
    const double frac = double(inside) / double(sd.size());
    std::ostringstream m;
    m << "mean rel L2 " << rel << " (tol " << opt.mean_tolerance << "), std within +-" << opt.std_band * 100
      << "% at " << frac * 100 << "% of pixels (need " << opt.std_fraction * 100 << "%)";
    return CheckResult{{}, rel < opt.mean_tolerance && frac >= opt.std_fraction, m.str()};
  });
}

/// -eps/sigma_s from the adapter vs. the closed-form VP marginal score -(mu^2 C + sigma_s^2 I)^-1 x.
inline CheckResult check_adapter_exactness(std::size_t taus = 20, double tol = 1e-5, std::uint64_t seed = 5) {
  return detail::timed_check("adapter exactness", [&] {
    const GridShape shape{1, 8, 8};
    const std::vector<double> l{2.0};
    const auto cov = std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(8, 8, l[0]));
    const GaussianAnalyticDenoiser d(cov);
    const Eigen::MatrixXd c = squared_exponential_covariance_matrix(shape, l, Eigen::MatrixXd::Identity(1, 1), 1e-6);
    const VPSchedule vp;
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t n = 0; n < taus; ++n) {
      const double tau = (double(n) + 0.5) / double(taus);
      const double mu = vp.mu(tau), ss = vp.sigma_s(tau);
      Eigen::MatrixXd marg = mu * mu * c;
      marg.diagonal().array() += ss * ss;
      std::vector<double> x(shape.size());
      rng.fill_normal(x);
      const Eigen::Map<const Eigen::VectorXd> xv(x.data(), Eigen::Index(x.size()));
      const Eigen::VectorXd exact = -marg.ldlt().solve(xv);
      const std::vector<double> eps = adapt_denoiser_to_eps(d, x, tau, vp);
      Eigen::VectorXd got(Eigen::Index(x.size()));
      for (std::size_t k = 0; k < x.size(); ++k) got(Eigen::Index(k)) = -eps[k] / ss;
      worst = std::max(worst, (got - exact).norm() / exact.norm());
    }
    std::ostringstream m;
    m << "max relative error " << worst << " over " << taus << " tau values (tol " << tol << ")";
    return CheckResult{{}, worst < tol, m.str()};
  });
}

/// Finite-difference vjp checks at sigma in {0.1, 1, 10}.
inline CheckResult check_vjp(const Denoiser& d, double tol, const std::string& label, std::uint64_t seed = 17) {
  return detail::timed_check("vjp finite differences (" + label + ")", [&] {
    Rng rng(seed);
    std::vector<double> x(d.shape().size()), cot(d.shape().size());
    double worst = 0.0;
    for (double sigma : {0.1, 1.0, 10.0}) {
      rng.fill_normal(x);
      rng.fill_normal(cot);
      worst = std::max(worst, vjp_finite_difference_check(d, x, sigma, cot, 20, 1e-4, rng.engine()()));
    }
    std::ostringstream m;
    m << "max relative error " << worst << " (tol " << tol << ")";
    return CheckResult{{}, worst < tol, m.str()};
  });
}

/// Fixed seed reproduces bit for bit; an empty observation set reproduces unconditional sampling.
inline CheckResult check_determinism(std::uint64_t seed = 21) {
  return detail::timed_check("determinism and guidance-off", [&] {
    const auto sc = LinearGaussianScenario::make(seed);
    const GaussianAnalyticDenoiser d(sc.cov);
    GuidanceConfig cfg;
    cfg.n_steps = 32;
    cfg.seed = seed;
    const LikelihoodModel lik(sc.shape, sc.obs);
    const auto a = assimilate(d, lik, cfg), b = assimilate(d, lik, cfg);
    const auto off = assimilate(d, LikelihoodModel{}, cfg);
    Rng rng(cfg.seed);
    const auto uncond = sample_unconditional(d, cfg, rng);
    const bool same = a == b, off_ok = off == uncond;
    std::ostringstream m;
    m << "repeat identical: " << (same ? "yes" : "no") << ", empty obs == unconditional: " << (off_ok ? "yes" : "no");
    return CheckResult{{}, same && off_ok, m.str()};
  });
}

struct OracleSuiteOptions {
  PosteriorCheckOptions posterior;
  bool include_conv = true;  // randomly initialized conv backend for the vjp check
};

inline std::vector<CheckResult> run_oracle_suite(const OracleSuiteOptions& opt = {}) {
  std::vector<CheckResult> out;
  out.push_back(check_posterior_equivalence(opt.posterior));
  out.push_back(check_adapter_exactness());
  const auto cov = std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(8, 8, 2.0));
  out.push_back(check_vjp(GaussianAnalyticDenoiser(cov), 1e-6, "analytic"));
  if (opt.include_conv) {
    nn::Architecture arch;
    arch.base_width = 8;
    nn::ConvNet<double> net(arch);
    Rng rng(3);
    auto p = net.init_params(rng);
    for (auto& v : p) v += 0.05 * rng.normal();  // zero-initialized branches would make the check trivial
    out.push_back(check_vjp(ConvDenoiser(arch, 8, 8, std::vector<float>(p.begin(), p.end())), 1e-3, "conv"));
  }
  out.push_back(check_determinism());
  return out;
}

}  // namespace sda
