#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Dense>

#include "sda/gaussian_denoiser.hpp"
#include "sda/guidance.hpp"
#include "sda/observation.hpp"

using namespace sda;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng r(seed);
  std::vector<double> v(n);
  for (auto& e : v) e = scale * r.normal();
  return v;
}

Eigen::VectorXd vec(std::span<const double> v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

Eigen::MatrixXd dense_se(std::size_t h, std::size_t w, double ell, double nugget = 1e-6) {
  const std::size_t n = h * w;
  Eigen::MatrixXd c(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const double di = double(a / w) - double(b / w), dj = double(a % w) - double(b % w);
      c(a, b) = std::exp(-(di * di + dj * dj) / (2 * ell * ell)) + (a == b ? nugget : 0.0);
    }
  return c;
}

GaussianAnalyticDenoiser se_denoiser(std::size_t h, std::size_t w, double ell) {
  return GaussianAnalyticDenoiser(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(h, w, ell)));
}

ObservationSet some_obs(GridShape shape, std::size_t n, std::uint64_t seed, double sigma = 0.1) {
  Rng r(seed);
  ObservationSet obs;
  std::vector<bool> used(shape.size(), false);
  while (obs.size() < n) {
    const std::size_t flat = r.uniform_index(shape.size());
    if (used[flat]) continue;
    used[flat] = true;
    Observation o;
    o.channel = flat / shape.plane();
    o.row = (flat % shape.plane()) / shape.width;
    o.col = flat % shape.width;
    o.value = r.normal();
    o.sigma = sigma;
    obs.items.push_back(o);
  }
  return obs;
}

}  // namespace

// ---------------------------------------------------------------- observation operator

TEST(ObsOperator, RegularStrideCounts) {
  const GridShape s{1, 128, 128};
  EXPECT_EQ(ObsOperator::regular_stride(s, 8).output_dim(), 256u);
  EXPECT_EQ(ObsOperator::regular_stride(s, 18).output_dim(), 64u);
  EXPECT_EQ(ObsOperator::regular_stride(GridShape{2, 16, 16}, 4).output_dim(), 32u);
  EXPECT_EQ(ObsOperator::regular_stride(GridShape{2, 16, 16}, 4, {1}).output_dim(), 16u);
  EXPECT_THROW(ObsOperator::regular_stride(s, 0), ConfigError);
}

TEST(ObsOperator, AdjointDotProductIdentity) {
  const GridShape s{2, 12, 10};
  std::vector<ObsOperator> ops{ObsOperator::regular_stride(s, 3), ObsOperator::channel_mask(s, {1}),
                               ObsOperator::point_set(s, some_obs(s, 17, 4))};
  for (const auto& op : ops) {
    const auto x = randn(s.size(), 1), y = randn(op.output_dim(), 2);
    const double lhs = dot(op.apply(x), y), rhs = dot(x, op.adjoint(y));
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(ObsOperator, PointSetRejectsOutOfBounds) {
  const GridShape s{1, 4, 4};
  Observation o;
  o.row = 4;
  EXPECT_THROW(ObsOperator::point_set(s, std::vector<Observation>{o}), ConfigError);
  o.row = 1;
  EXPECT_THROW(ObsOperator::point_set(s, std::vector<Observation>{o, o}), ConfigError);
}

TEST(ObsOperator, ComposeRestrictsStrideToChannel) {
  const GridShape s{2, 8, 8};
  const auto stride = ObsOperator::regular_stride(s, 2);
  const auto mask = ObsOperator::channel_mask(s, {0});
  const auto both = ObsOperator::compose(mask, stride);
  EXPECT_EQ(both.output_dim(), 16u);
  for (auto flat : both.indices()) EXPECT_LT(flat, 64u);
}

TEST(PseudoObs, NoiseStdWithinTwoPercent) {
  FieldGrid g = FieldGrid::zeros(GridShape{1, 400, 250});
  const auto op = ObsOperator::from_indices(g.shape(), [] {
    std::vector<std::size_t> v(100000);
    std::iota(v.begin(), v.end(), 0);
    return v;
  }());
  Rng rng(9);
  const std::vector<double> noise{0.3};
  const auto p = simulate_pseudo_obs(g, op, noise, rng);
  double s2 = 0;
  for (const auto& o : p.obs.items) s2 += o.value * o.value;
  const double sd = std::sqrt(s2 / double(p.obs.size()));
  EXPECT_NEAR(sd, 0.3, 0.02 * 0.3);
}

TEST(PseudoObs, ZeroNoiseIsExact) {
  FieldGrid g = FieldGrid::like(FieldGrid::zeros(GridShape{1, 6, 6}), randn(36, 3));
  Rng rng(1);
  const std::vector<double> noise{0.0};
  const auto p = simulate_pseudo_obs(g, ObsOperator::regular_stride(g.shape(), 2), noise, rng);
  for (const auto& o : p.obs.items) EXPECT_EQ(o.value, g.at(0, o.row, o.col));
}

// ---------------------------------------------------------------- config

TEST(GuidanceConfig, Presets) {
  const auto d = GuidanceConfig::preset("default");
  EXPECT_EQ(d.n_steps, 64);
  EXPECT_EQ(d.corrections, 2);
  EXPECT_EQ(d.tau_tilde, 0.3);
  EXPECT_EQ(d.obs_sigma, 0.1);
  EXPECT_EQ(d.gamma, 1e-3);
  const auto m = GuidanceConfig::preset("missing-channel");
  EXPECT_EQ(m.n_steps, 256);
  EXPECT_EQ(m.corrections, 10);
  EXPECT_EQ(m.tau_tilde, 0.3);
  EXPECT_EQ(m.obs_sigma, 0.1);
  EXPECT_EQ(m.gamma, 1e-2);
  EXPECT_THROW(GuidanceConfig::preset("fast"), ConfigError);
}

TEST(GuidanceConfig, ValidationErrors) {
  GuidanceConfig c;
  c.n_steps = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau_tilde = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.gamma = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---------------------------------------------------------------- scores

TEST(PosteriorScore, EmptyObservationsEqualPrior) {
  const auto d = se_denoiser(6, 6, 1.5);
  const auto x = randn(36, 4);
  const LikelihoodModel none;
  EXPECT_EQ(posterior_score(x, 0.4, d, none, {}), prior_score(x, 0.4, d));
}

TEST(PosteriorScore, MatchesDenseLikelihoodFormula) {
  // prior score + (1/mu) J^T H^T V^{-1} (y - H D) with J = C (C + s^2 I)^{-1}, V = R + s^2 Gamma
  const std::size_t h = 8, w = 8, n = 64;
  const Eigen::MatrixXd c = dense_se(h, w, 2.0);
  const auto d = se_denoiser(h, w, 2.0);
  const auto obs = some_obs(d.shape(), 10, 5);
  const LikelihoodModel lik(d.shape(), obs);
  GuidanceConfig cfg;
  cfg.gamma = 0.05;
  const VPSchedule vp;
  for (double tau : {0.1, 0.4, 0.8}) {
    const double mu = vp.mu(tau), ss = vp.sigma_s(tau), s = ss / mu;
    const auto x = randn(n, 11);
    const Eigen::MatrixXd a = c + s * s * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd jac = c * a.inverse();
    const Eigen::VectorXd z = vec(x) / mu;
    const Eigen::VectorXd xhat = jac * z;
    const Eigen::VectorXd prior = -(mu * mu * c + ss * ss * Eigen::MatrixXd::Identity(n, n)).ldlt().solve(vec(x));
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    for (const auto& o : obs.items) {
      const std::size_t k = o.row * w + o.col;
      g[k] += (o.value - xhat[k]) / (o.sigma * o.sigma + s * s * cfg.gamma);
    }
    const Eigen::VectorXd ref = prior + jac.transpose() * g / mu;
    const Eigen::VectorXd got = vec(posterior_score(x, tau, d, lik, cfg));
    EXPECT_LT((got - ref).norm(), 1e-5 * ref.norm()) << tau;
  }
}

TEST(PosteriorScore, ConjugateGaussianExactWhenVarianceIsExact) {
  // Identity prior: x | x~ has covariance s^2/(1+s^2) I, so Gamma = 1/(1+s^2) makes V the exact
  // predictive variance and the posterior score equals that of N(mu m_post, mu^2 C_post + sigma_s^2 I).
  const std::size_t n = 64;
  auto cov = std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(8, 8, 0.01, 0.0));
  GaussianAnalyticDenoiser d(cov);
  const auto obs = some_obs(d.shape(), 12, 8, 0.2);
  const LikelihoodModel lik(d.shape(), obs);
  const VPSchedule vp;
  for (double tau : {0.2, 0.5, 0.9}) {
    const double mu = vp.mu(tau), ss = vp.sigma_s(tau), s = ss / mu;
    GuidanceConfig cfg;
    cfg.gamma = 1.0 / (1.0 + s * s);
    // Kalman posterior for identity prior, independent per pixel
    Eigen::VectorXd m_post = Eigen::VectorXd::Zero(n), c_post = Eigen::VectorXd::Ones(n);
    for (const auto& o : obs.items) {
      const std::size_t k = o.row * 8 + o.col;
      const double r = o.sigma * o.sigma;
      m_post[k] = o.value / (1.0 + r);
      c_post[k] = 1.0 - 1.0 / (1.0 + r);
    }
    const auto x = randn(n, 21);
    Eigen::VectorXd ref(n);
    for (std::size_t k = 0; k < n; ++k) ref[k] = -(x[k] - mu * m_post[k]) / (mu * mu * c_post[k] + ss * ss);
    const Eigen::VectorXd got = vec(posterior_score(x, tau, d, lik, cfg));
    EXPECT_LT((got - ref).norm(), 1e-5 * ref.norm()) << tau;
  }
}

TEST(PosteriorScore, GammaMonotonicity) {
  const auto d = se_denoiser(8, 8, 2.0);
  const LikelihoodModel lik(d.shape(), some_obs(d.shape(), 10, 2));
  const auto x = randn(64, 3);
  for (double tau : {0.2, 0.6, 0.95}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double g = 1e-4; g < 100.0; g *= 2.0) {
      GuidanceConfig cfg;
      cfg.gamma = g;
      const double nrm = norm2(likelihood_score(x, tau, d, lik, cfg));
      EXPECT_LT(nrm, prev) << tau << " " << g;
      prev = nrm;
    }
  }
}

// ---------------------------------------------------------------- LMC

TEST(Lmc, ZeroCorrectionsIsIdentity) {
  auto x = randn(10, 1);
  const auto before = x;
  Rng rng(0);
  const ScoreFn sc = [](std::span<const double> v, double) { return std::vector<double>(v.begin(), v.end()); };
  EXPECT_EQ(lmc_correct(x, 0.5, sc, 0, 0.3, rng), 0);
  EXPECT_EQ(x, before);
}

TEST(Lmc, ZeroScoreSkipsStep) {
  auto x = randn(10, 1);
  const auto before = x;
  Rng rng(0);
  const ScoreFn sc = [](std::span<const double> v, double) { return std::vector<double>(v.size(), 0.0); };
  EXPECT_EQ(lmc_correct(x, 0.5, sc, 3, 0.3, rng), 3);
  EXPECT_EQ(x, before);
}

TEST(Lmc, OneDimensionalGaussianTargetMoments) {
  // target N(1.5, 0.49); 2000 independent chains of C = 500 steps, tau_tilde = 0.3
  const double m = 1.5, v = 0.49;
  const ScoreFn sc = [&](std::span<const double> x, double) { return std::vector<double>{-(x[0] - m) / v}; };
  Rng rng(3);
  double s1 = 0, s2 = 0;
  const int chains = 2000;
  for (int c = 0; c < chains; ++c) {
    std::vector<double> x{rng.normal()};
    lmc_correct(x, 0.5, sc, 500, 0.3, rng);
    s1 += x[0];
    s2 += x[0] * x[0];
  }
  const double mean = s1 / chains, var = s2 / chains - mean * mean;
  EXPECT_NEAR(mean, m, 0.05 * m);
  EXPECT_NEAR(var, v, 0.05 * v);
}

// ---------------------------------------------------------------- sampler

TEST(Sampler, UnconditionalCovarianceOn4x4) {
  const auto d = se_denoiser(4, 4, 1.5);
  const Eigen::MatrixXd c = dense_se(4, 4, 1.5);
  GuidanceConfig cfg;
  Rng rng(17);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(16, 16);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(16);
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    const Eigen::VectorXd x = vec(sample_unconditional(d, cfg, rng));
    mean += x;
    acc += x * x.transpose();
  }
  mean /= n;
  const Eigen::MatrixXd emp = acc / n - mean * mean.transpose();
  EXPECT_LT((emp - c).norm(), 0.1 * c.norm());
}

TEST(Sampler, EmptyObservationsMatchUnconditionalBitwise) {
  const auto d = se_denoiser(8, 8, 2.0);
  GuidanceConfig cfg;
  cfg.seed = 5;
  Rng a(cfg.seed);
  const auto u = sample_unconditional(d, cfg, a);
  const auto p = assimilate(d, LikelihoodModel{}, cfg);
  EXPECT_EQ(u, p);
}

TEST(Sampler, DeterministicForFixedSeed) {
  const auto d = se_denoiser(8, 8, 2.0);
  const LikelihoodModel lik(d.shape(), some_obs(d.shape(), 6, 1));
  GuidanceConfig cfg;
  cfg.seed = 99;
  EXPECT_EQ(assimilate(d, lik, cfg), assimilate(d, lik, cfg));
  cfg.seed = 100;
  EXPECT_NE(assimilate(d, lik, cfg), assimilate(d, lik, GuidanceConfig{}));
}

TEST(Sampler, GuidanceReducesErrorAgainstTruthWithPairedSeeds) {
  const auto d = se_denoiser(8, 8, 2.0);
  double guided = 0, unguided = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng tr(seed + 1000);
    const FieldGrid truth = FieldGrid::like(FieldGrid::zeros(d.shape()), d.sample_prior(tr));
    const auto p = simulate_pseudo_obs(truth, ObsOperator::regular_stride(d.shape(), 2), std::vector<double>{0.1}, tr);
    const LikelihoodModel lik(d.shape(), p.obs);
    GuidanceConfig cfg;
    cfg.seed = seed;
    const auto g = assimilate(d, lik, cfg);
    const auto u = assimilate(d, LikelihoodModel{}, cfg);
    for (std::size_t k = 0; k < 64; ++k) {
      guided += (g[k] - truth.values()[k]) * (g[k] - truth.values()[k]);
      unguided += (u[k] - truth.values()[k]) * (u[k] - truth.values()[k]);
    }
  }
  EXPECT_LT(guided, 0.5 * unguided);
}

TEST(Sampler, ObservationGridMismatchIsConfigError) {
  const auto d = se_denoiser(8, 8, 2.0);
  const LikelihoodModel lik(GridShape{1, 4, 4}, some_obs(GridShape{1, 4, 4}, 3, 1));
  EXPECT_THROW(assimilate(d, lik, GuidanceConfig{}), ConfigError);
}

// ---------------------------------------------------------------- ensembles

TEST(Ensemble, SingleMemberUsesDerivedSeed) {
  const auto d = se_denoiser(4, 4, 1.0);
  const LikelihoodModel lik(d.shape(), some_obs(d.shape(), 3, 1));
  GuidanceConfig cfg;
  cfg.seed = 42;
  const auto e = assimilate_ensemble(d, lik, cfg, 1);
  Rng rng(derive_seed(42, 0));
  EXPECT_EQ(e.members[0].values(), assimilate(d, lik, cfg, rng));
  EXPECT_EQ(e.seeds[0], derive_seed(42, 0));
}

TEST(Ensemble, OrderIndependentOfThreads) {
  const auto d = se_denoiser(4, 4, 1.0);
  const LikelihoodModel lik(d.shape(), some_obs(d.shape(), 3, 1));
  GuidanceConfig cfg;
  cfg.n_steps = 8;
  const auto a = assimilate_ensemble(d, lik, cfg, 9, 1);
  const auto b = assimilate_ensemble(d, lik, cfg, 9, 4);
  for (std::size_t r = 0; r < 9; ++r) EXPECT_EQ(a.members[r].values(), b.members[r].values());
}

TEST(Ensemble, TinyNoiseGivesSmallStdAtObservedPixels) {
  const auto d = se_denoiser(8, 8, 2.0);
  ObservationSet obs = some_obs(d.shape(), 6, 3, 1e-2);
  const LikelihoodModel lik(d.shape(), obs);
  GuidanceConfig cfg;
  cfg.gamma = 1e-2;
  cfg.n_steps = 256;
  const auto e = assimilate_ensemble(d, lik, cfg, 20);
  const FieldGrid sd = e.stddev();
  double unobserved = 0;
  for (double v : sd.values()) unobserved += v / 64.0;
  for (const auto& o : obs.items) EXPECT_LT(sd.at(0, o.row, o.col), 0.2 * unobserved);
}

TEST(Ensemble, FailuresListSeeds) {
  const FieldGrid layout = FieldGrid::zeros(GridShape{1, 2, 2});
  try {
    run_ensemble(4, 7, 1,
                 [](Rng& r) -> std::vector<double> {
                   if (r.seed() == derive_seed(7, 2)) throw NumericalError("boom");
                   return std::vector<double>(4, 0.0);
                 },
                 layout);
    FAIL();
  } catch (const EnsembleFailure& e) {
    ASSERT_EQ(e.failed_seeds().size(), 1u);
    EXPECT_EQ(e.failed_seeds()[0], derive_seed(7, 2));
  }
}
