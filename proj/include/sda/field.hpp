#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sda/error.hpp"

namespace sda {

// -----------------------------------------------------------------------------
// Channel transforms

enum class TransformKind : std::uint8_t { identity = 0, log_shift = 1 };

struct ChannelSpec {
  std::string name;
  TransformKind transform = TransformKind::identity;
  double shift = 0.0;  // only meaningful for log_shift
  std::string units;

  static ChannelSpec identity(std::string name, std::string units = "") {
    return {std::move(name), TransformKind::identity, 0.0, std::move(units)};
  }
  static ChannelSpec log_shifted(std::string name, double shift = 1e-4, std::string units = "") {
    if (!(shift > 0.0)) throw ConfigError("channel '" + name + "': log_shift requires shift > 0");
    return {std::move(name), TransformKind::log_shift, shift, std::move(units)};
  }

  void validate() const {
    if (name.empty()) throw ConfigError("channel name must be non-empty");
    if (transform == TransformKind::log_shift && !(shift > 0.0))
      throw ConfigError("channel '" + name + "': log_shift requires shift > 0");
  }

  bool operator==(const ChannelSpec& o) const {
    return name == o.name && transform == o.transform && shift == o.shift;
  }
};

inline double to_model(double value, const ChannelSpec& spec) {
  if (spec.transform == TransformKind::identity) return value;
  if (!(value >= 0.0))
    throw DomainError("channel '" + spec.name + "': negative value " + std::to_string(value) +
                      " for log_shift transform");
  return std::log(value + spec.shift);
}

inline double to_physical(double value, const ChannelSpec& spec) {
  if (spec.transform == TransformKind::identity) return value;
  return std::exp(value) - spec.shift;
}

inline std::vector<double> transform_physical_to_model(std::span<const double> values,
                                                       const ChannelSpec& spec) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [&](double v) { return to_model(v, spec); });
  return out;
}

inline std::vector<double> transform_model_to_physical(std::span<const double> values,
                                                       const ChannelSpec& spec) {
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [&](double v) { return to_physical(v, spec); });
  return out;
}

// -----------------------------------------------------------------------------
// Shapes and normalization

struct GridShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const noexcept { return height * width; }
  std::size_t size() const noexcept { return channels * height * width; }
  std::size_t index(std::size_t c, std::size_t i, std::size_t j) const noexcept {
    return (c * height + i) * width + j;
  }
  bool operator==(const GridShape&) const = default;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  static NormStats unit(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }

  std::size_t channels() const noexcept { return mean.size(); }

  void validate() const {
    if (mean.size() != std.size()) throw ConfigError("norm stats: mean/std length mismatch");
    for (std::size_t c = 0; c < std.size(); ++c) {
      if (!(std[c] > 0.0) || !std::isfinite(std[c]))
        throw ConfigError("norm stats: std must be > 0 for channel " + std::to_string(c));
      if (!std::isfinite(mean[c]))
        throw ConfigError("norm stats: non-finite mean for channel " + std::to_string(c));
    }
  }

  bool operator==(const NormStats&) const = default;
};

/// C x H x W field in transformed, normalized model space.
class FieldGrid {
 public:
  FieldGrid() = default;

  FieldGrid(std::vector<ChannelSpec> channels, std::size_t height, std::size_t width,
            std::vector<double> data, NormStats norm)
      : channels_(std::move(channels)),
        shape_{channels_.size(), height, width},
        data_(std::move(data)),
        norm_(std::move(norm)) {
    validate();
  }

  /// Zero-filled grid with unit normalization.
  static FieldGrid zeros(std::vector<ChannelSpec> channels, std::size_t height, std::size_t width) {
    const std::size_t n = channels.size();
    return FieldGrid(std::move(channels), height, width,
                     std::vector<double>(n * height * width, 0.0), NormStats::unit(n));
  }

  static FieldGrid zeros(GridShape shape) { return zeros(default_channels(shape.channels), shape.height, shape.width); }

  static std::vector<ChannelSpec> default_channels(std::size_t n) {
    std::vector<ChannelSpec> out;
    for (std::size_t c = 0; c < n; ++c) out.push_back(ChannelSpec::identity("ch" + std::to_string(c)));
    return out;
  }

  /// Same channels, dims and stats as `like`, different data.
  static FieldGrid like(const FieldGrid& like, std::vector<double> data) {
    FieldGrid g;
    g.channels_ = like.channels_;
    g.shape_ = like.shape_;
    g.norm_ = like.norm_;
    g.data_ = std::move(data);
    if (g.data_.size() != g.shape_.size()) throw ConfigError("grid data length does not match C*H*W");
    return g;
  }

  void validate() const {
    if (shape_.height == 0 || shape_.width == 0) throw ConfigError("grid dims must be positive");
    if (channels_.empty()) throw ConfigError("grid needs at least one channel");
    std::unordered_set<std::string> names;
    for (const auto& ch : channels_) {
      ch.validate();
      if (!names.insert(ch.name).second) throw ConfigError("duplicate channel name '" + ch.name + "'");
    }
    if (data_.size() != shape_.size()) throw ConfigError("grid data length does not match C*H*W");
    if (norm_.channels() != channels_.size()) throw ConfigError("norm stats channel count mismatch");
    norm_.validate();
    for (std::size_t k = 0; k < data_.size(); ++k)
      if (!std::isfinite(data_[k])) throw NumericalError("non-finite grid value at flat index " + std::to_string(k));
  }

  const std::vector<ChannelSpec>& channels() const noexcept { return channels_; }
  const GridShape& shape() const noexcept { return shape_; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return data_.size(); }
  const NormStats& norm() const noexcept { return norm_; }
  void set_norm(NormStats norm) {
    if (norm.channels() != channels_.size()) throw ConfigError("norm stats channel count mismatch");
    norm.validate();
    norm_ = std::move(norm);
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& at(std::size_t c, std::size_t i, std::size_t j) { return data_[shape_.index(c, i, j)]; }
  double at(std::size_t c, std::size_t i, std::size_t j) const { return data_[shape_.index(c, i, j)]; }

  std::span<const double> channel(std::size_t c) const {
    return std::span<const double>(data_).subspan(c * shape_.plane(), shape_.plane());
  }
  std::span<double> channel(std::size_t c) { return std::span<double>(data_).subspan(c * shape_.plane(), shape_.plane()); }

  std::size_t channel_index(const std::string& name) const {
    for (std::size_t c = 0; c < channels_.size(); ++c)
      if (channels_[c].name == name) return c;
    throw ConfigError("unknown channel '" + name + "'");
  }

  bool same_layout(const FieldGrid& o) const { return shape_ == o.shape_ && channels_ == o.channels_; }

 private:
  std::vector<ChannelSpec> channels_;
  GridShape shape_;
  std::vector<double> data_;
  NormStats norm_;
};

// -----------------------------------------------------------------------------

/// Standardize transformed values: (v - mean) / std per channel. The grid's stats become `stats`.
inline FieldGrid normalize(const FieldGrid& transformed, const NormStats& stats) {
  stats.validate();
  if (stats.channels() != transformed.channels().size()) throw ConfigError("norm stats channel count mismatch");
  std::vector<double> out(transformed.values());
  const std::size_t plane = transformed.shape().plane();
  for (std::size_t c = 0; c < stats.channels(); ++c)
    for (std::size_t k = 0; k < plane; ++k) out[c * plane + k] = (out[c * plane + k] - stats.mean[c]) / stats.std[c];
  FieldGrid g = FieldGrid::like(transformed, std::move(out));
  g.set_norm(stats);
  return g;
}

/// Inverse of normalize: returns values in transformed (un-normalized) space.
inline FieldGrid denormalize(const FieldGrid& normalized) {
  const NormStats& stats = normalized.norm();
  std::vector<double> out(normalized.values());
  const std::size_t plane = normalized.shape().plane();
  for (std::size_t c = 0; c < stats.channels(); ++c)
    for (std::size_t k = 0; k < plane; ++k) out[c * plane + k] = out[c * plane + k] * stats.std[c] + stats.mean[c];
  return FieldGrid::like(normalized, std::move(out));
}

/// Physical-unit grid -> model space (transform, then normalize with `stats`).
inline FieldGrid from_physical(const FieldGrid& physical, const NormStats& stats) {
  std::vector<double> out(physical.size());
  const std::size_t plane = physical.shape().plane();
  for (std::size_t c = 0; c < physical.channels().size(); ++c)
    for (std::size_t k = 0; k < plane; ++k)
      out[c * plane + k] = to_model(physical.values()[c * plane + k], physical.channels()[c]);
  return normalize(FieldGrid::like(physical, std::move(out)), stats);
}

/// Model space -> physical units (denormalize, then inverse transform).
inline FieldGrid to_physical(const FieldGrid& model) {
  FieldGrid g = denormalize(model);
  const std::size_t plane = g.shape().plane();
  for (std::size_t c = 0; c < g.channels().size(); ++c)
    for (std::size_t k = 0; k < plane; ++k) g.values()[c * plane + k] = to_physical(g.values()[c * plane + k], g.channels()[c]);
  return g;
}

/// Per-channel mean/std over a set of transformed grids.
inline NormStats compute_norm_stats(std::span<const FieldGrid> grids) {
  if (grids.empty()) throw ConfigError("cannot compute norm stats from an empty set");
  const std::size_t nc = grids.front().channels().size();
  const std::size_t plane = grids.front().shape().plane();
  NormStats s{std::vector<double>(nc, 0.0), std::vector<double>(nc, 0.0)};
  for (std::size_t c = 0; c < nc; ++c) {
    double sum = 0.0, sq = 0.0;
    for (const auto& g : grids) {
      for (double v : g.channel(c)) sum += v;
    }
    const double n = static_cast<double>(grids.size() * plane);
    const double mean = sum / n;
    for (const auto& g : grids)
      for (double v : g.channel(c)) sq += (v - mean) * (v - mean);
    s.mean[c] = mean;
    s.std[c] = std::max(std::sqrt(sq / n), 1e-12);
  }
  return s;
}

// -----------------------------------------------------------------------------

struct Ensemble {
  std::vector<FieldGrid> members;
  std::vector<std::uint64_t> seeds;

  void validate() const {
    if (members.empty()) throw ConfigError("ensemble needs at least one member");
    if (seeds.size() != members.size()) throw ConfigError("ensemble seed record length mismatch");
    for (const auto& m : members)
      if (!m.same_layout(members.front())) throw ConfigError("ensemble members differ in shape");
  }

  std::size_t size() const noexcept { return members.size(); }

  FieldGrid mean() const {
    validate();
    std::vector<double> acc(members.front().size(), 0.0);
    for (const auto& m : members)
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += m.values()[k];
    for (auto& v : acc) v /= static_cast<double>(members.size());
    return FieldGrid::like(members.front(), std::move(acc));
  }

  /// Unbiased per-pixel standard deviation (zero for a single member).
  FieldGrid stddev() const {
    FieldGrid mu = mean();
    std::vector<double> acc(mu.size(), 0.0);
    if (members.size() > 1) {
      for (const auto& m : members)
        for (std::size_t k = 0; k < acc.size(); ++k) {
          const double d = m.values()[k] - mu.values()[k];
          acc[k] += d * d;
        }
      for (auto& v : acc) v = std::sqrt(v / static_cast<double>(members.size() - 1));
    }
    return FieldGrid::like(mu, std::move(acc));
  }
};

// -----------------------------------------------------------------------------
// Small dense-vector helpers used across modules.

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += alpha * x[k];
}

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace sda
