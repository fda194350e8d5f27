#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "sda/field.hpp"
#include "sda/rng.hpp"

namespace sda {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Squared-exponential correlation on integer grid offsets: exp(-d^2 / (2 l^2)).
inline double squared_exponential(double distance, double length_scale) {
  return std::exp(-0.5 * distance * distance / (length_scale * length_scale));
}

inline Eigen::MatrixXd squared_exponential_1d(std::size_t n, double length_scale) {
  if (!(length_scale > 0.0)) throw ConfigError("kernel length scale must be > 0");
  Eigen::MatrixXd k(n, n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) k(a, b) = squared_exponential(double(a) - double(b), length_scale);
  return k;
}

inline void check_correlation_matrix(const Eigen::MatrixXd& corr) {
  if (corr.rows() != corr.cols() || corr.rows() == 0) throw ConfigError("correlation matrix must be square and non-empty");
  for (Eigen::Index a = 0; a < corr.rows(); ++a) {
    if (std::abs(corr(a, a) - 1.0) > 1e-12) throw ConfigError("correlation matrix needs a unit diagonal");
    for (Eigen::Index b = 0; b < corr.cols(); ++b)
      if (std::abs(corr(a, b) - corr(b, a)) > 1e-12) throw ConfigError("correlation matrix must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 1e-12)) throw ConfigError("correlation matrix is not positive definite");
}

/// Dense covariance over the flattened channel-major grid built by direct kernel evaluation:
/// C[(c,i,j),(c',i',j')] = sum_k L[c][k] L[c'][k] k_{l_k}(i-i', j-j') + nugget delta, with
/// corr = L L^T. With one shared length scale this is corr (x) K_row (x) K_col + nugget I.
inline Eigen::MatrixXd squared_exponential_covariance_matrix(GridShape shape, std::span<const double> length_scales,
                                                             const Eigen::MatrixXd& corr, double nugget) {
  check_correlation_matrix(corr);
  if (static_cast<std::size_t>(corr.rows()) != shape.channels || length_scales.size() != shape.channels)
    throw ConfigError("covariance parameters do not match channel count");
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(corr).matrixL();
  const std::size_t n = shape.size();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t c = 0; c < shape.channels; ++c)
    for (std::size_t i = 0; i < shape.height; ++i)
      for (std::size_t j = 0; j < shape.width; ++j)
        for (std::size_t c2 = 0; c2 < shape.channels; ++c2)
          for (std::size_t i2 = 0; i2 < shape.height; ++i2)
            for (std::size_t j2 = 0; j2 < shape.width; ++j2) {
              const double di = double(i) - double(i2), dj = double(j) - double(j2);
              double v = 0.0;
              for (std::size_t k = 0; k < shape.channels; ++k)
                v += l(c, k) * l(c2, k) * squared_exponential(std::sqrt(di * di + dj * dj), length_scales[k]);
              cov(shape.index(c, i, j), shape.index(c2, i2, j2)) = v;
            }
  cov.diagonal().array() += nugget;
  return cov;
}

// -----------------------------------------------------------------------------

/// Symmetric positive-definite covariance with an orthonormal eigenbasis C = Q diag(lambda) Q^T.
class Covariance {
 public:
  virtual ~Covariance() = default;

  virtual GridShape shape() const = 0;
  virtual const std::vector<double>& eigenvalues() const = 0;
  /// out = Q in
  virtual void to_grid(std::span<const double> in, std::span<double> out) const = 0;
  /// out = Q^T in
  virtual void to_spectral(std::span<const double> in, std::span<double> out) const = 0;

  std::size_t dim() const { return shape().size(); }

  /// out = Q diag(f(lambda)) Q^T in
  template <typename F>
  void filter(std::span<const double> in, std::span<double> out, F&& f) const {
    std::vector<double> tmp(in.size());
    to_spectral(in, tmp);
    const auto& lam = eigenvalues();
    for (std::size_t k = 0; k < tmp.size(); ++k) tmp[k] *= f(lam[k]);
    to_grid(tmp, out);
  }

  void apply(std::span<const double> in, std::span<double> out) const {
    filter(in, out, [](double l) { return l; });
  }

  /// Zero-mean draw: Q diag(sqrt(lambda)) z.
  std::vector<double> sample(Rng& rng) const {
    std::vector<double> z(dim()), out(dim());
    rng.fill_normal(z);
    const auto& lam = eigenvalues();
    for (std::size_t k = 0; k < z.size(); ++k) z[k] *= std::sqrt(lam[k]);
    to_grid(z, out);
    return out;
  }
};

/// corr (x) K_row (x) K_col + nugget I for a stationary squared-exponential kernel shared by
/// every channel. Eigen-decomposes the three small factors only.
class KroneckerCovariance final : public Covariance {
 public:
  KroneckerCovariance(GridShape shape, double length_scale, Eigen::MatrixXd corr, double nugget = 1e-6)
      : shape_(shape), length_scale_(length_scale), nugget_(nugget), corr_(std::move(corr)) {
    if (shape.size() == 0) throw ConfigError("covariance grid must be non-empty");
    if (!(nugget >= 0.0)) throw ConfigError("nugget must be >= 0");
    check_correlation_matrix(corr_);
    if (static_cast<std::size_t>(corr_.rows()) != shape.channels) throw ConfigError("correlation matrix size != channels");
    decompose(corr_, q_ch_, l_ch_);
    decompose(squared_exponential_1d(shape.height, length_scale), q_row_, l_row_);
    decompose(squared_exponential_1d(shape.width, length_scale), q_col_, l_col_);
    lambda_.resize(shape.size());
    for (std::size_t c = 0; c < shape.channels; ++c)
      for (std::size_t i = 0; i < shape.height; ++i)
        for (std::size_t j = 0; j < shape.width; ++j)
          lambda_[shape.index(c, i, j)] = l_ch_[c] * l_row_[i] * l_col_[j] + nugget;
    if (!(*std::min_element(lambda_.begin(), lambda_.end()) > 0.0))
      throw ConfigError("covariance is not positive definite (use a nugget > 0)");
  }

  static KroneckerCovariance single_channel(std::size_t h, std::size_t w, double length_scale, double nugget = 1e-6) {
    return KroneckerCovariance({1, h, w}, length_scale, Eigen::MatrixXd::Identity(1, 1), nugget);
  }

  GridShape shape() const override { return shape_; }
  const std::vector<double>& eigenvalues() const override { return lambda_; }
  double length_scale() const noexcept { return length_scale_; }
  double nugget() const noexcept { return nugget_; }
  const Eigen::MatrixXd& correlation() const noexcept { return corr_; }

  void to_grid(std::span<const double> in, std::span<double> out) const override { apply_kron(in, out, false); }
  void to_spectral(std::span<const double> in, std::span<double> out) const override { apply_kron(in, out, true); }

 private:
  static void decompose(const Eigen::MatrixXd& m, Eigen::MatrixXd& q, std::vector<double>& lam) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    q = es.eigenvectors();
    const double top = es.eigenvalues().maxCoeff();
    lam.resize(m.rows());
    for (Eigen::Index k = 0; k < m.rows(); ++k) {
      const double v = es.eigenvalues()(k);
      if (v < -1e-10 * top) throw ConfigError("kernel factor is not positive semi-definite");
      lam[k] = std::max(v, 0.0);  // round-off of a PSD factor
    }
  }

  // (Q_ch (x) Q_row (x) Q_col) applied to a channel-major tensor, or its transpose.
  void apply_kron(std::span<const double> in, std::span<double> out, bool transpose) const {
    const auto nc = static_cast<Eigen::Index>(shape_.channels), h = static_cast<Eigen::Index>(shape_.height),
               w = static_cast<Eigen::Index>(shape_.width);
    if (in.size() != shape_.size() || out.size() != shape_.size()) throw ConfigError("covariance apply: size mismatch");
    Eigen::Map<const RowMatrix> src(in.data(), nc * h, w);
    RowMatrix t1 = transpose ? RowMatrix(src * q_col_) : RowMatrix(src * q_col_.transpose());
    RowMatrix t2(nc * h, w);
    for (Eigen::Index c = 0; c < nc; ++c) {
      if (transpose)
        t2.middleRows(c * h, h).noalias() = q_row_.transpose() * t1.middleRows(c * h, h);
      else
        t2.middleRows(c * h, h).noalias() = q_row_ * t1.middleRows(c * h, h);
    }
    Eigen::Map<const RowMatrix> t2v(t2.data(), nc, h * w);
    Eigen::Map<RowMatrix> dst(out.data(), nc, h * w);
    if (transpose)
      dst.noalias() = q_ch_.transpose() * t2v;
    else
      dst.noalias() = q_ch_ * t2v;
  }

  GridShape shape_;
  double length_scale_;
  double nugget_;
  Eigen::MatrixXd corr_;
  Eigen::MatrixXd q_ch_, q_row_, q_col_;
  std::vector<double> l_ch_, l_row_, l_col_;
  std::vector<double> lambda_;
};

/// Arbitrary SPD matrix over the flattened grid; small grids only.
class DenseCovariance final : public Covariance {
 public:
  DenseCovariance(GridShape shape, const Eigen::MatrixXd& cov) : shape_(shape) {
    if (static_cast<std::size_t>(cov.rows()) != shape.size() || cov.rows() != cov.cols())
      throw ConfigError("dense covariance dimension does not match grid");
    if (!cov.isApprox(cov.transpose(), 1e-12)) throw ConfigError("covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    if (!(es.eigenvalues().minCoeff() > 0.0)) throw ConfigError("covariance is not positive definite");
    q_ = es.eigenvectors();
    lambda_.assign(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  }

  GridShape shape() const override { return shape_; }
  const std::vector<double>& eigenvalues() const override { return lambda_; }

  void to_grid(std::span<const double> in, std::span<double> out) const override {
    Eigen::Map<Eigen::VectorXd>(out.data(), out.size()).noalias() =
        q_ * Eigen::Map<const Eigen::VectorXd>(in.data(), in.size());
  }
  void to_spectral(std::span<const double> in, std::span<double> out) const override {
    Eigen::Map<Eigen::VectorXd>(out.data(), out.size()).noalias() =
        q_.transpose() * Eigen::Map<const Eigen::VectorXd>(in.data(), in.size());
  }

 private:
  GridShape shape_;
  Eigen::MatrixXd q_;
  std::vector<double> lambda_;
};

/// Covariance for a squared-exponential prior: Kronecker form when every channel shares the
/// length scale, a dense coregionalization model otherwise.
inline std::shared_ptr<const Covariance> make_squared_exponential_covariance(GridShape shape,
                                                                            std::span<const double> length_scales,
                                                                            const Eigen::MatrixXd& corr,
                                                                            double nugget = 1e-6) {
  if (length_scales.size() != shape.channels) throw ConfigError("need one length scale per channel");
  for (double l : length_scales)
    if (!(l > 0.0)) throw ConfigError("kernel length scale must be > 0");
  const bool shared = std::all_of(length_scales.begin(), length_scales.end(),
                                  [&](double l) { return l == length_scales.front(); });
  if (shared) return std::make_shared<KroneckerCovariance>(shape, length_scales.front(), corr, nugget);
  if (shape.size() > 4096) throw ConfigError("per-channel length scales are limited to grids of <= 4096 values");
  return std::make_shared<DenseCovariance>(shape, squared_exponential_covariance_matrix(shape, length_scales, corr, nugget));
}

}  // namespace sda
