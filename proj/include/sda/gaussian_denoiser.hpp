#pragma once

#include <memory>

#include "sda/covariance.hpp"
#include "sda/denoiser.hpp"

namespace sda {

/// Exact posterior mean E[x0 | x0 + sigma eps = x] for a Gaussian prior N(m, C):
///   D(x; sigma) = m + C (C + sigma^2 I)^{-1} (x - m).
class GaussianAnalyticDenoiser final : public Denoiser {
 public:
  explicit GaussianAnalyticDenoiser(std::shared_ptr<const Covariance> cov, std::vector<double> mean = {})
      : cov_(std::move(cov)), mean_(std::move(mean)) {
    if (!cov_) throw ConfigError("analytic denoiser needs a covariance");
    if (mean_.empty()) mean_.assign(cov_->dim(), 0.0);
    if (mean_.size() != cov_->dim()) throw ConfigError("prior mean size does not match covariance");
  }

  using Denoiser::evaluate;
  using Denoiser::vjp;

  GridShape shape() const override { return cov_->shape(); }
  const Covariance& covariance() const noexcept { return *cov_; }
  std::shared_ptr<const Covariance> covariance_ptr() const noexcept { return cov_; }
  const std::vector<double>& mean() const noexcept { return mean_; }

  void evaluate(std::span<const double> x, double sigma, std::span<double> out) const override {
    check_size(x.size());
    if (!(sigma >= 0.0)) throw DomainError("denoiser sigma must be >= 0");
    if (sigma == 0.0) {
      std::copy(x.begin(), x.end(), out.begin());
      return;
    }
    std::vector<double> centered(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) centered[k] = x[k] - mean_[k];
    const double s2 = sigma * sigma;
    cov_->filter(centered, out, [s2](double l) { return l / (l + s2); });
    for (std::size_t k = 0; k < x.size(); ++k) out[k] += mean_[k];
  }

  // The Jacobian C (C + sigma^2 I)^{-1} is symmetric.
  void vjp(std::span<const double> x, double sigma, std::span<const double> cotangent,
           std::span<double> out) const override {
    check_size(x.size());
    check_size(cotangent.size());
    if (!(sigma >= 0.0)) throw DomainError("denoiser sigma must be >= 0");
    if (sigma == 0.0) {
      std::copy(cotangent.begin(), cotangent.end(), out.begin());
      return;
    }
    const double s2 = sigma * sigma;
    cov_->filter(cotangent, out, [s2](double l) { return l / (l + s2); });
  }

  /// Per-pixel minimum denoising MSE at noise level sigma: tr(C (C + sigma^2 I)^{-1} sigma^2) / dim.
  double optimal_mse(double sigma) const {
    const double s2 = sigma * sigma;
    double acc = 0.0;
    for (double l : cov_->eigenvalues()) acc += l * s2 / (l + s2);
    return acc / static_cast<double>(cov_->dim());
  }

  /// Draw x0 ~ N(m, C).
  std::vector<double> sample_prior(Rng& rng) const {
    std::vector<double> x = cov_->sample(rng);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += mean_[k];
    return x;
  }

 private:
  std::shared_ptr<const Covariance> cov_;
  std::vector<double> mean_;
};

}  // namespace sda
