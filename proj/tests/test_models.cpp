#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "sda/conv_denoiser.hpp"
#include "sda/covariance.hpp"
#include "sda/gaussian_denoiser.hpp"
#include "sda/schedule.hpp"
#include "sda/train.hpp"

using namespace sda;

namespace {

// dense SE covariance built directly from pixel coordinates
Eigen::MatrixXd direct_se(std::size_t h, std::size_t w, double ell, double nugget = 1e-6) {
  const std::size_t n = h * w;
  Eigen::MatrixXd c(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      const double di = double(a / w) - double(b / w), dj = double(a % w) - double(b % w);
      c(a, b) = std::exp(-(di * di + dj * dj) / (2 * ell * ell)) + (a == b ? nugget : 0.0);
    }
  return c;
}

Eigen::VectorXd to_eigen(std::span<const double> v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

std::vector<double> randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng r(seed);
  std::vector<double> v(n);
  for (auto& e : v) e = scale * r.normal();
  return v;
}

class IdentityCovariance final : public Covariance {
 public:
  explicit IdentityCovariance(GridShape s) : s_(s), lam_(s.size(), 1.0) {}
  GridShape shape() const override { return s_; }
  const std::vector<double>& eigenvalues() const override { return lam_; }
  void to_grid(std::span<const double> in, std::span<double> out) const override { std::copy(in.begin(), in.end(), out.begin()); }
  void to_spectral(std::span<const double> in, std::span<double> out) const override { std::copy(in.begin(), in.end(), out.begin()); }

 private:
  GridShape s_;
  std::vector<double> lam_;
};

}  // namespace

// ---------------------------------------------------------------- covariance

TEST(Covariance, KroneckerApplyMatchesDirectMatrix) {
  auto k = KroneckerCovariance::single_channel(6, 5, 1.7);
  const Eigen::MatrixXd c = direct_se(6, 5, 1.7);
  const auto x = randn(30, 1);
  std::vector<double> y(30);
  k.apply(x, y);
  EXPECT_LT((to_eigen(y) - c * to_eigen(x)).norm(), 1e-10 * (c * to_eigen(x)).norm());
}

TEST(Covariance, KroneckerTwoChannelMatchesDenseBuilder) {
  Eigen::MatrixXd corr(2, 2);
  corr << 1.0, 0.6, 0.6, 1.0;
  KroneckerCovariance k(GridShape{2, 4, 4}, 1.5, corr);
  std::vector<double> ells{1.5, 1.5};
  const Eigen::MatrixXd dense = squared_exponential_covariance_matrix(GridShape{2, 4, 4}, ells, corr, 1e-6);
  // cross block is rho * K
  const Eigen::MatrixXd single = direct_se(4, 4, 1.5, 0.0);
  EXPECT_LT((dense.block(0, 16, 16, 16) - 0.6 * single).norm(), 1e-12);
  const auto x = randn(32, 2);
  std::vector<double> y(32);
  k.apply(x, y);
  EXPECT_LT((to_eigen(y) - dense * to_eigen(x)).norm(), 1e-9);
}

TEST(Covariance, BadCorrelationRejected) {
  Eigen::MatrixXd corr(2, 2);
  corr << 1.0, 1.2, 1.2, 1.0;
  EXPECT_THROW(KroneckerCovariance(GridShape{2, 4, 4}, 1.0, corr), ConfigError);
  EXPECT_THROW(KroneckerCovariance::single_channel(4, 4, 0.0), ConfigError);
}

// ---------------------------------------------------------------- analytic denoiser

TEST(AnalyticDenoiser, IdentityCovarianceShrinks) {
  GaussianAnalyticDenoiser d(std::make_shared<IdentityCovariance>(GridShape{1, 3, 3}));
  const auto x = randn(9, 3);
  for (double s : {0.1, 1.0, 7.0}) {
    const auto out = d.evaluate(x, s);
    for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(out[k], x[k] / (1 + s * s), 1e-14);
  }
}

TEST(AnalyticDenoiser, SigmaZeroIsIdentity) {
  auto d = GaussianAnalyticDenoiser(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(4, 4, 2.0)));
  const auto x = randn(16, 4);
  EXPECT_EQ(d.evaluate(x, 0.0), x);
  EXPECT_THROW(d.evaluate(x, -1.0), DomainError);
}

TEST(AnalyticDenoiser, MatchesDenseSolveOn8x8) {
  const Eigen::MatrixXd c = direct_se(8, 8, 2.0);
  Eigen::VectorXd mean = to_eigen(randn(64, 5, 0.3));
  GaussianAnalyticDenoiser d(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(8, 8, 2.0)),
                             std::vector<double>(mean.data(), mean.data() + 64));
  for (double s : {0.05, 0.5, 3.0}) {
    const auto x = randn(64, 6 + std::uint64_t(s * 100));
    const Eigen::MatrixXd a = c + s * s * Eigen::MatrixXd::Identity(64, 64);
    const Eigen::VectorXd ref = mean + c * a.ldlt().solve(to_eigen(x) - mean);
    const auto out = d.evaluate(x, s);
    EXPECT_LT((to_eigen(out) - ref).lpNorm<Eigen::Infinity>(), 1e-10) << s;
  }
}

TEST(AnalyticDenoiser, DenseCovarianceAgreesWithKronecker) {
  const Eigen::MatrixXd c = direct_se(6, 6, 1.3);
  DenseCovariance dense(GridShape{1, 6, 6}, c);
  GaussianAnalyticDenoiser a(std::make_shared<DenseCovariance>(dense));
  GaussianAnalyticDenoiser b(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(6, 6, 1.3)));
  const auto x = randn(36, 8);
  const auto ya = a.evaluate(x, 0.7), yb = b.evaluate(x, 0.7);
  for (std::size_t k = 0; k < 36; ++k) EXPECT_NEAR(ya[k], yb[k], 1e-10);
}

TEST(AnalyticDenoiser, VjpMatchesFiniteDifferences) {
  GaussianAnalyticDenoiser d(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(8, 8, 2.0)));
  const auto x = randn(64, 9), v = randn(64, 10);
  for (double s : {0.1, 1.0, 10.0}) EXPECT_LT(vjp_finite_difference_check(d, x, s, v, 20, 1e-4, 17), 1e-6) << s;
}

TEST(AnalyticDenoiser, OptimalMseMatchesTrace) {
  const Eigen::MatrixXd c = direct_se(5, 5, 1.2);
  GaussianAnalyticDenoiser d(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(5, 5, 1.2)));
  const double s = 0.8;
  const Eigen::MatrixXd a = c + s * s * Eigen::MatrixXd::Identity(25, 25);
  const double ref = (s * s * c * a.inverse()).trace() / 25.0;
  EXPECT_NEAR(d.optimal_mse(s), ref, 1e-10);
}

TEST(Score, GaussianScoreMatchesFiniteDifferenceOfLogDensity) {
  const Eigen::MatrixXd c = direct_se(6, 6, 1.5);
  GaussianAnalyticDenoiser d(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(6, 6, 1.5)));
  const double s = 0.6;
  const Eigen::MatrixXd a = c + s * s * Eigen::MatrixXd::Identity(36, 36);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  auto logp = [&](const Eigen::VectorXd& x) { return -0.5 * x.dot(ldlt.solve(x)); };
  const auto x = randn(36, 12);
  const auto score = score_from_denoiser(x, s, d);
  const double h = 1e-5;
  for (std::size_t k = 0; k < 36; ++k) {
    Eigen::VectorXd xp = to_eigen(x), xm = to_eigen(x);
    xp[k] += h;
    xm[k] -= h;
    EXPECT_NEAR(score[k], (logp(xp) - logp(xm)) / (2 * h), 1e-4);
  }
  EXPECT_THROW(score_from_denoiser(x, 0.0, d), DomainError);
}

TEST(Adapter, RejectsTauZero) {
  GaussianAnalyticDenoiser d(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(4, 4, 1.0)));
  const auto x = randn(16, 1);
  EXPECT_THROW(adapt_denoiser_to_eps(d, x, 0.0), DomainError);
}

TEST(Adapter, MatchesClosedFormMarginalScore) {
  // x~ = mu x0 + sigma_s eps has covariance mu^2 C + sigma_s^2 I; eps-prediction is -sigma_s * score.
  const Eigen::MatrixXd c = direct_se(8, 8, 2.0);
  GaussianAnalyticDenoiser d(std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(8, 8, 2.0)));
  const VPSchedule vp;
  for (double tau : {0.05, 0.3, 0.7, 0.99}) {
    const double mu = vp.mu(tau), ss = vp.sigma_s(tau);
    const auto x = randn(64, std::uint64_t(tau * 1000));
    const Eigen::MatrixXd cov = mu * mu * c + ss * ss * Eigen::MatrixXd::Identity(64, 64);
    const Eigen::VectorXd ref = ss * cov.ldlt().solve(to_eigen(x));
    const auto eps = adapt_denoiser_to_eps(d, x, tau);
    EXPECT_LT((to_eigen(eps) - ref).lpNorm<Eigen::Infinity>(), 1e-8) << tau;
  }
}

// ---------------------------------------------------------------- conv net

TEST(ConvNet, PreconditioningCoefficients) {
  const auto p = nn::Preconditioning::at(2.0);
  EXPECT_DOUBLE_EQ(p.c_skip, 1.0 / 5.0);
  EXPECT_DOUBLE_EQ(p.c_out, 2.0 / std::sqrt(5.0));
  EXPECT_DOUBLE_EQ(p.c_in, 1.0 / std::sqrt(5.0));
  EXPECT_DOUBLE_EQ(p.c_noise, std::log(2.0) / 4.0);
}

TEST(ConvNet, ParameterGradientMatchesFiniteDifferences) {
  nn::Architecture arch;
  arch.base_width = 4;
  arch.embed_dim = 8;
  nn::ConvNet<double> net(arch);
  Rng r(1);
  auto p = net.init_params(r);
  for (auto& v : p) v += 0.05 * r.normal();
  const std::size_t h = 8, w = 8;
  const auto x = randn(64, 2), v = randn(64, 3);
  typename nn::ConvNet<double>::Trace tr;
  net.forward(p, x, h, w, 0.3, tr);
  std::vector<double> g(p.size(), 0.0), dx(64, 0.0);
  net.backward(p, tr, v, g, dx);
  auto f = [&](const std::vector<double>& pp, const std::vector<double>& xx) {
    typename nn::ConvNet<double>::Trace t;
    net.forward(pp, xx, h, w, 0.3, t);
    double s = 0;
    for (std::size_t k = 0; k < v.size(); ++k) s += v[k] * t.out[k];
    return s;
  };
  for (int t = 0; t < 40; ++t) {
    const std::size_t k = r.uniform_index(p.size());
    auto pp = p, pm = p;
    pp[k] += 1e-6;
    pm[k] -= 1e-6;
    const double fd = (f(pp, x) - f(pm, x)) / 2e-6;
    EXPECT_NEAR(g[k], fd, 1e-6 * std::max(1.0, std::abs(fd))) << k;
  }
  for (int t = 0; t < 10; ++t) {
    const std::size_t k = r.uniform_index(64);
    auto xp = x, xm = x;
    xp[k] += 1e-6;
    xm[k] -= 1e-6;
    const double fd = (f(p, xp) - f(p, xm)) / 2e-6;
    EXPECT_NEAR(dx[k], fd, 1e-6 * std::max(1.0, std::abs(fd))) << k;
  }
}

namespace {
ConvDenoiser small_conv(std::uint64_t seed) {
  nn::Architecture arch;
  arch.base_width = 4;
  arch.embed_dim = 8;
  nn::ConvNet<double> net(arch);
  Rng r(seed);
  auto p = net.init_params(r);
  std::vector<float> pf(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) pf[k] = float(p[k] + 0.05 * r.normal());
  return ConvDenoiser(arch, 8, 8, pf);
}
}  // namespace

TEST(ConvDenoiser, VjpMatchesFiniteDifferences) {
  const auto d = small_conv(4);
  const auto x = randn(64, 5), v = randn(64, 6);
  for (double s : {0.1, 1.0, 10.0}) EXPECT_LT(vjp_finite_difference_check(d, x, s, v, 20, 1e-4, 3), 1e-3) << s;
}

TEST(ConvDenoiser, RejectsBadShapesAndBlobs) {
  nn::Architecture arch;
  arch.base_width = 4;
  EXPECT_THROW(ConvDenoiser(arch, 6, 8, {}), ConfigError);
  EXPECT_THROW(ConvDenoiser(arch, 8, 8, std::vector<float>(10)), ConfigError);
  const auto d = small_conv(1);
  EXPECT_THROW(d.evaluate(randn(63, 1), 1.0), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  const auto d = small_conv(7);
  std::stringstream ss;
  write_checkpoint(ss, d);
  const auto e = read_checkpoint(ss);
  EXPECT_EQ(e.weights(), d.weights());
  EXPECT_EQ(e.architecture(), d.architecture());
  const auto x = randn(64, 2);
  EXPECT_EQ(e.evaluate(x, 0.5), d.evaluate(x, 0.5));
}

TEST(Checkpoint, CorruptBlobIsIoError) {
  const auto d = small_conv(7);
  std::stringstream ss;
  write_checkpoint(ss, d);
  const std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(cut), IoError);
}

// ---------------------------------------------------------------- training

TEST(Adam, FirstStepMovesBySignTimesLr) {
  Adam adam;
  std::vector<float> p{1.0f, -2.0f};
  const std::vector<float> g{0.5f, -3.0f};
  adam.step(p, g, 0.01);
  // bias-corrected first step is lr * g / (|g| + eps)
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p[1], -2.0 + 0.01, 1e-6);
}

TEST(Training, ScheduleWarmsUpThenDecays) {
  TrainConfig cfg;
  cfg.iterations = 1000;
  cfg.warmup = 100;
  nn::Architecture arch;
  arch.base_width = 4;
  ConvTrainer t(arch, 8, 8, cfg);
  EXPECT_NEAR(t.learning_rate_at(0), cfg.learning_rate / 100.0, 1e-4 * cfg.learning_rate);
  EXPECT_GT(t.learning_rate_at(99), t.learning_rate_at(50));
  EXPECT_GT(t.learning_rate_at(200), t.learning_rate_at(800));
  EXPECT_NEAR(t.learning_rate_at(1000), cfg.learning_rate * cfg.lr_floor, 1e-12);
}

TEST(Training, InvalidConfigRejected) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.ema_decay = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Training, NonFiniteLossRaisesWithContext) {
  TrainConfig cfg;
  nn::Architecture arch;
  arch.base_width = 4;
  ConvTrainer t(arch, 8, 8, cfg);
  std::vector<std::vector<double>> batch(2, randn(64, 1));
  batch[1][5] = std::numeric_limits<double>::infinity();
  Rng rng(0);
  try {
    t.train_step(batch, rng);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Training, ShortRunReducesDenoisingError) {
  auto cov = std::make_shared<KroneckerCovariance>(KroneckerCovariance::single_channel(8, 8, 2.0));
  GaussianAnalyticDenoiser gd(cov);
  std::vector<std::vector<double>> data(400);
  Rng dr(5);
  for (auto& d : data) d = gd.sample_prior(dr);
  TrainConfig cfg;
  cfg.iterations = 300;
  cfg.warmup = 20;
  cfg.ema_decay = 0.9;
  nn::Architecture arch;
  arch.base_width = 8;
  ConvTrainer t(arch, 8, 8, cfg);
  const double before = denoising_mse(t.snapshot(), data, 1.0, 3);
  std::vector<std::vector<double>> val;
  const auto res = train_conv_denoiser(t, data, &val);
  const double after = denoising_mse(t.snapshot(), val, 1.0, 3);
  EXPECT_EQ(res.loss_curve.size(), 300u);
  EXPECT_LT(after, 0.5 * before);
  EXPECT_GE(after, 0.9 * gd.optimal_mse(1.0));
}
