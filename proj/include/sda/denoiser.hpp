#pragma once

#include <memory>
#include <span>
#include <vector>

#include "sda/field.hpp"
#include "sda/rng.hpp"

namespace sda {

/// Prior encoded as a denoiser D(x; sigma) ~ E[x0 | x0 + sigma * eps = x].
/// Implementations must be safe to call concurrently from several threads.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual GridShape shape() const = 0;

  /// out = D(x; sigma). sigma == 0 must return x.
  virtual void evaluate(std::span<const double> x, double sigma, std::span<double> out) const = 0;

  /// out = J_D(x; sigma)^T cotangent, the exact reverse-mode derivative with respect to x.
  virtual void vjp(std::span<const double> x, double sigma, std::span<const double> cotangent,
                   std::span<double> out) const = 0;

  std::vector<double> evaluate(std::span<const double> x, double sigma) const {
    std::vector<double> out(x.size());
    evaluate(x, sigma, out);
    return out;
  }

  std::vector<double> vjp(std::span<const double> x, double sigma, std::span<const double> cotangent) const {
    std::vector<double> out(x.size());
    vjp(x, sigma, cotangent, out);
    return out;
  }

  FieldGrid evaluate(const FieldGrid& x, double sigma) const {
    check_shape(x);
    return FieldGrid::like(x, evaluate(x.data(), sigma));
  }

  FieldGrid vjp(const FieldGrid& x, double sigma, const FieldGrid& cotangent) const {
    check_shape(x);
    check_shape(cotangent);
    return FieldGrid::like(x, vjp(x.data(), sigma, cotangent.data()));
  }

 protected:
  void check_size(std::size_t n) const {
    if (n != shape().size()) throw ConfigError("state size does not match the denoiser grid");
  }
  void check_shape(const FieldGrid& g) const {
    if (!(g.shape() == shape())) throw ConfigError("grid shape does not match the denoiser grid");
  }
};

/// grad log p(x; sigma) = (D(x; sigma) - x) / sigma^2.
inline std::vector<double> score_from_denoiser(std::span<const double> x, double sigma, const Denoiser& d) {
  if (!(sigma > 0.0)) throw DomainError("score_from_denoiser requires sigma > 0");
  std::vector<double> s = d.evaluate(x, sigma);
  const double inv = 1.0 / (sigma * sigma);
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = (s[k] - x[k]) * inv;
  return s;
}

inline FieldGrid score_from_denoiser(const FieldGrid& x, double sigma, const Denoiser& d) {
  return FieldGrid::like(x, score_from_denoiser(x.data(), sigma, d));
}

/// Compares vjp against central differences of <cotangent, D(.; sigma)> along random
/// directions; returns the max relative error over the directions.
inline double vjp_finite_difference_check(const Denoiser& d, std::span<const double> x, double sigma,
                                          std::span<const double> cotangent, std::size_t directions = 20,
                                          double step = 1e-4, std::uint64_t seed = 7) {
  if (!(sigma > 0.0)) throw DomainError("vjp check requires sigma > 0");
  const std::vector<double> g = d.vjp(x, sigma, cotangent);
  Rng rng(seed);
  std::vector<double> dir(x.size()), xp(x.size()), xm(x.size());
  double worst = 0.0;
  for (std::size_t n = 0; n < directions; ++n) {
    rng.fill_normal(dir);
    const double len = norm2(dir);
    for (auto& v : dir) v /= len;
    for (std::size_t k = 0; k < x.size(); ++k) {
      xp[k] = x[k] + step * dir[k];
      xm[k] = x[k] - step * dir[k];
    }
    const double fd = (dot(cotangent, d.evaluate(xp, sigma)) - dot(cotangent, d.evaluate(xm, sigma))) / (2.0 * step);
    const double an = dot(g, dir);
    // Scale by the gradient norm so near-orthogonal directions do not blow up the ratio.
    const double scale = std::max({std::abs(an), std::abs(fd), norm2(g) * 1e-3, 1e-300});
    worst = std::max(worst, std::abs(fd - an) / scale);
  }
  return worst;
}

}  // namespace sda
