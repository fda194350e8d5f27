#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sda/conv_denoiser.hpp"
#include "sda/field.hpp"

namespace sda {

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 2e-3;
  std::size_t iterations = 4000;
  std::size_t warmup = 200;         // linear learning-rate warmup, iterations
  double lr_floor = 0.05;           // cosine decay to lr * lr_floor
  double p_mean = -1.2;             // ln(sigma) ~ Normal(p_mean, p_std)
  double p_std = 1.2;
  double ema_decay = 0.999;
  double validation_fraction = 0.1;
  std::string checkpoint_path;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be > 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (iterations == 0) throw ConfigError("iterations must be > 0");
    if (!(p_std > 0.0)) throw ConfigError("p_std must be > 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must be in [0, 1)");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw ConfigError("validation_fraction must be in (0, 1)");
    if (!(lr_floor > 0.0 && lr_floor <= 1.0)) throw ConfigError("lr_floor must be in (0, 1]");
  }
};

/// Adam over a flat parameter vector.
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  std::size_t t = 0;

  void step(std::vector<float>& params, std::span<const float> grads, double lr) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, double(t)), c2 = 1.0 - std::pow(beta2, double(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double g = grads[k];
      m[k] = beta1 * m[k] + (1.0 - beta1) * g;
      v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
      params[k] -= static_cast<float>(lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps));
    }
  }
};

/// Mutable training state: float network, live weights, EMA weights, optimizer.
class ConvTrainer {
 public:
  ConvTrainer(nn::Architecture arch, std::size_t height, std::size_t width, TrainConfig cfg)
      : net_(arch), height_(height), width_(width), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (height % 4 != 0 || width % 4 != 0) throw ConfigError("training grids need dims divisible by 4");
    Rng init(derive_seed(cfg_.seed, 0xC0FFEE));
    params_ = net_.init_params(init);
    ema_ = params_;
    grads_.assign(params_.size(), 0.0f);
  }

  const nn::ConvNet<float>& net() const noexcept { return net_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  const std::vector<float>& params() const noexcept { return params_; }
  const std::vector<float>& ema_params() const noexcept { return ema_; }
  std::size_t steps() const noexcept { return adam_.t; }

  double learning_rate_at(std::size_t it) const {
    const double warm = cfg_.warmup ? std::min(1.0, double(it + 1) / double(cfg_.warmup)) : 1.0;
    const double progress = std::min(1.0, double(it) / double(cfg_.iterations));
    const double cosine = cfg_.lr_floor + (1.0 - cfg_.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return cfg_.learning_rate * warm * cosine;
  }

  /// One optimizer step on the EDM denoising loss; returns the batch loss
  /// mean_i lambda(sigma_i) |D(x_i + sigma_i eps; sigma_i) - x_i|^2 / dim with lambda = (sigma^2+1)/sigma^2.
  double train_step(std::span<const std::vector<double>> batch, Rng& rng) {
    if (batch.empty()) throw ConfigError("training batch is empty");
    std::fill(grads_.begin(), grads_.end(), 0.0f);
    const std::size_t dim = net_.architecture().channels * height_ * width_;
    double total = 0.0;
    std::vector<float> in(dim), dout(dim);
    std::vector<double> target(dim);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& x = batch[b];
      if (x.size() != dim) throw ConfigError("training sample has the wrong size");
      const double sigma = std::exp(cfg_.p_mean + cfg_.p_std * rng.normal());
      const auto pc = nn::Preconditioning::at(sigma);
      for (std::size_t k = 0; k < dim; ++k) {
        const double noisy = x[k] + sigma * rng.normal();
        in[k] = static_cast<float>(pc.c_in * noisy);
        target[k] = (x[k] - pc.c_skip * noisy) / pc.c_out;
      }
      net_.forward(params_, in, height_, width_, static_cast<float>(pc.c_noise), trace_);
      double loss = 0.0;
      const double scale = 2.0 / (double(dim) * double(batch.size()));
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = trace_.out[k] - target[k];
        loss += diff * diff;
        dout[k] = static_cast<float>(scale * diff);
      }
      loss /= double(dim);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss (batch index " << b << ", sigma draw " << sigma << ", step " << adam_.t << ")";
        throw NumericalError(msg.str());
      }
      total += loss;
      net_.backward(params_, trace_, dout, grads_, {});
    }
    adam_.step(params_, grads_, learning_rate_at(adam_.t));
    const float d = static_cast<float>(cfg_.ema_decay);
    for (std::size_t k = 0; k < params_.size(); ++k) ema_[k] = d * ema_[k] + (1.0f - d) * params_[k];
    return total / double(batch.size());
  }

  /// Frozen denoiser from the EMA (or live) weights.
  ConvDenoiser snapshot(std::vector<ChannelSpec> channels = {}, NormStats norm = {}, bool use_ema = true) const {
    return ConvDenoiser(net_.architecture(), height_, width_, use_ema ? ema_ : params_, std::move(channels),
                        std::move(norm));
  }

 private:
  nn::ConvNet<float> net_;
  std::size_t height_, width_;
  TrainConfig cfg_;
  std::vector<float> params_, ema_, grads_;
  Adam adam_;
  typename nn::ConvNet<float>::Trace trace_;
};

inline double edm_train_step(ConvTrainer& model, std::span<const std::vector<double>> batch, Rng& rng) {
  return model.train_step(batch, rng);
}

/// Mean per-pixel squared error of D(x + sigma eps; sigma) against x over a sample set.
inline double denoising_mse(const Denoiser& d, std::span<const std::vector<double>> samples, double sigma,
                            std::uint64_t seed) {
  Rng rng(seed);
  double acc = 0.0;
  std::size_t n = 0;
  std::vector<double> noisy;
  for (const auto& x : samples) {
    noisy.resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) noisy[k] = x[k] + sigma * rng.normal();
    const std::vector<double> den = d.evaluate(noisy, sigma);
    for (std::size_t k = 0; k < x.size(); ++k) acc += (den[k] - x[k]) * (den[k] - x[k]);
    n += x.size();
  }
  return acc / double(n);
}

struct TrainResult {
  std::vector<double> loss_curve;  // per-iteration batch loss
  double validation_mse_sigma1 = 0.0;
};

/// Full training loop over normalized samples; a random validation split is held out.
/// `on_progress(iteration, loss)` is called every 100 iterations when provided.
inline TrainResult train_conv_denoiser(ConvTrainer& trainer, std::span<const std::vector<double>> samples,
                                       std::vector<std::vector<double>>* validation_out = nullptr,
                                       const std::function<void(std::size_t, double)>& on_progress = {}) {
  const auto& cfg = trainer.config();
  if (samples.size() < 2) throw ConfigError("need at least two samples to train");
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t n_val = std::max<std::size_t>(1, std::size_t(cfg.validation_fraction * samples.size()));
  std::vector<std::vector<double>> validation, train;
  for (std::size_t k = 0; k < order.size(); ++k) (k < n_val ? validation : train).push_back(samples[order[k]]);

  TrainResult result;
  std::vector<std::vector<double>> batch(cfg.batch_size);
  std::size_t cursor = train.size();
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (auto& b : batch) {
      if (cursor == train.size()) {
        std::shuffle(train.begin(), train.end(), rng.engine());
        cursor = 0;
      }
      b = train[cursor++];
    }
    const double loss = trainer.train_step(batch, rng);
    result.loss_curve.push_back(loss);
    if (on_progress && (it + 1) % 100 == 0) on_progress(it + 1, loss);
  }
  const ConvDenoiser snap = trainer.snapshot();
  result.validation_mse_sigma1 = denoising_mse(snap, validation, 1.0, derive_seed(cfg.seed, 99));
  if (validation_out) *validation_out = std::move(validation);
  return result;
}

}  // namespace sda
