#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "sda/denoiser.hpp"

namespace sda {

/// Variance-preserving cosine schedule: mu(tau) = cos(omega tau), sigma_s = sqrt(1 - mu^2),
/// with omega = acos(sqrt(1e-3)) so that mu(1) = sqrt(1e-3).
struct VPSchedule {
  double omega = std::acos(std::sqrt(1e-3));

  static void check_tau(double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("diffusion time tau must lie in [0, 1], got " + std::to_string(tau));
  }

  double mu(double tau) const {
    check_tau(tau);
    return std::cos(omega * tau);
  }

  // sin(omega tau) equals sqrt(1 - cos^2) on [0, pi/2] and keeps mu^2 + sigma_s^2 = 1 to rounding.
  double sigma_s(double tau) const {
    check_tau(tau);
    return std::sin(omega * tau);
  }

  /// EDM noise level serving VP time tau: sigma_s / mu. Zero at tau = 0.
  double edm_sigma(double tau) const {
    check_tau(tau);
    if (tau == 0.0) return 0.0;
    return std::tan(omega * tau);
  }
};

inline double edm_sigma_equivalent(double tau, const VPSchedule& vp = {}) { return vp.edm_sigma(tau); }

/// Uniform grid 1 = tau_0 > tau_1 > ... > tau_N = 0.
inline std::vector<double> tau_grid(int n_steps) {
  if (n_steps < 2) throw ConfigError("n_steps must be >= 2");
  std::vector<double> grid(static_cast<std::size_t>(n_steps) + 1);
  for (int k = 0; k <= n_steps; ++k) grid[k] = 1.0 - static_cast<double>(k) / n_steps;
  grid.back() = 0.0;
  return grid;
}

/// EDM-style noise levels sigma_max ... sigma_min followed by 0 (rho = 7).
struct EDMSchedule {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  int n_steps = 64;
  double rho = 7.0;

  void validate() const {
    if (!(sigma_min > 0.0 && sigma_max > sigma_min)) throw ConfigError("EDM schedule needs 0 < sigma_min < sigma_max");
    if (n_steps < 2) throw ConfigError("EDM schedule needs n_steps >= 2");
  }

  std::vector<double> sigmas() const {
    validate();
    std::vector<double> out(static_cast<std::size_t>(n_steps) + 1);
    const double a = std::pow(sigma_max, 1.0 / rho), b = std::pow(sigma_min, 1.0 / rho);
    for (int i = 0; i < n_steps; ++i) out[i] = std::pow(a + i / (n_steps - 1.0) * (b - a), rho);
    out.back() = 0.0;
    return out;
  }
};

/// Noise-prediction view of an EDM denoiser at VP time tau:
///   eps(x~, tau) = (x~/mu - D(x~/mu; sigma_s/mu)) * mu / sigma_s.
inline void adapt_denoiser_to_eps(const Denoiser& d, std::span<const double> x_tilde, double tau,
                                  std::span<double> out, const VPSchedule& vp = {}) {
  if (!(tau > 0.0)) throw DomainError("adapt_denoiser_to_eps: tau must be > 0 (sigma_s vanishes at tau = 0)");
  const double mu = vp.mu(tau), ss = vp.sigma_s(tau);
  std::vector<double> z(x_tilde.size());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = x_tilde[k] / mu;
  d.evaluate(z, ss / mu, out);
  const double scale = mu / ss;
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = (z[k] - out[k]) * scale;
}

inline std::vector<double> adapt_denoiser_to_eps(const Denoiser& d, std::span<const double> x_tilde, double tau,
                                                 const VPSchedule& vp = {}) {
  std::vector<double> out(x_tilde.size());
  adapt_denoiser_to_eps(d, x_tilde, tau, out, vp);
  return out;
}

inline FieldGrid adapt_denoiser_to_eps(const Denoiser& d, const FieldGrid& x_tilde, double tau,
                                       const VPSchedule& vp = {}) {
  return FieldGrid::like(x_tilde, adapt_denoiser_to_eps(d, x_tilde.data(), tau, vp));
}

}  // namespace sda
