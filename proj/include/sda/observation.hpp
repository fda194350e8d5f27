#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sda/field.hpp"
#include "sda/rng.hpp"

namespace sda {

/// One scalar observation in normalized model space. `sigma` is the noise std in the same space.
struct Observation {
  std::size_t channel = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
  double sigma = 0.1;
  std::string station_id;
};

struct ObservationSet {
  std::vector<Observation> items;

  bool empty() const noexcept { return items.empty(); }
  std::size_t size() const noexcept { return items.size(); }

  void validate(const GridShape& shape) const {
    std::unordered_set<std::size_t> seen;
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto& o = items[k];
      if (o.channel >= shape.channels || o.row >= shape.height || o.col >= shape.width)
        throw ConfigError("observation " + std::to_string(k) + " lies outside the grid");
      if (!(o.sigma > 0.0) || !std::isfinite(o.sigma))
        throw ConfigError("observation " + std::to_string(k) + " needs sigma > 0");
      if (!std::isfinite(o.value)) throw NumericalError("observation " + std::to_string(k) + " has a non-finite value");
      if (!seen.insert(shape.index(o.channel, o.row, o.col)).second)
        throw ConfigError("observation " + std::to_string(k) + " duplicates a grid location");
    }
  }
};

// -----------------------------------------------------------------------------

/// Observation operator H as a pure selection of grid entries (gather); its adjoint scatters.
class ObsOperator {
 public:
  enum class Kind { point_set, regular_stride, channel_mask, composition };

  /// Explicit (channel, row, col) locations in the given order.
  static ObsOperator point_set(GridShape shape, std::span<const Observation> locations) {
    std::vector<std::size_t> idx;
    idx.reserve(locations.size());
    for (const auto& o : locations) {
      if (o.channel >= shape.channels || o.row >= shape.height || o.col >= shape.width)
        throw ConfigError("observation operator index out of bounds");
      idx.push_back(shape.index(o.channel, o.row, o.col));
    }
    return ObsOperator(Kind::point_set, shape, std::move(idx));
  }

  static ObsOperator point_set(GridShape shape, const ObservationSet& obs) { return point_set(shape, obs.items); }

  static ObsOperator from_indices(GridShape shape, std::vector<std::size_t> flat) {
    for (auto k : flat)
      if (k >= shape.size()) throw ConfigError("observation operator index out of bounds");
    return ObsOperator(Kind::point_set, shape, std::move(flat));
  }

  /// Every s-th row and column starting at index 0, on the listed channels (all when empty).
  static ObsOperator regular_stride(GridShape shape, std::size_t stride, std::vector<std::size_t> channels = {}) {
    if (stride == 0) throw ConfigError("stride must be >= 1");
    if (channels.empty())
      for (std::size_t c = 0; c < shape.channels; ++c) channels.push_back(c);
    std::vector<std::size_t> idx;
    for (auto c : channels) {
      if (c >= shape.channels) throw ConfigError("stride operator channel out of bounds");
      for (std::size_t i = 0; i < shape.height; i += stride)
        for (std::size_t j = 0; j < shape.width; j += stride) idx.push_back(shape.index(c, i, j));
    }
    ObsOperator op(Kind::regular_stride, shape, std::move(idx));
    op.stride_ = stride;
    return op;
  }

  /// Dense observation of the kept channels only.
  static ObsOperator channel_mask(GridShape shape, std::vector<std::size_t> kept) {
    if (kept.empty()) throw ConfigError("channel mask needs at least one kept channel");
    std::vector<std::size_t> idx;
    for (auto c : kept) {
      if (c >= shape.channels) throw ConfigError("channel mask index out of bounds");
      for (std::size_t k = 0; k < shape.plane(); ++k) idx.push_back(c * shape.plane() + k);
    }
    return ObsOperator(Kind::channel_mask, shape, std::move(idx));
  }

  /// Entries selected by `second` that also lie in the support of `first`, in `second`'s order
  /// (e.g. a stride restricted to a channel mask).
  static ObsOperator compose(const ObsOperator& first, const ObsOperator& second) {
    if (!(first.shape_ == second.shape_)) throw ConfigError("composed operators disagree on grid shape");
    std::unordered_set<std::size_t> support(first.indices_.begin(), first.indices_.end());
    std::vector<std::size_t> idx;
    for (auto k : second.indices_)
      if (support.count(k)) idx.push_back(k);
    return ObsOperator(Kind::composition, first.shape_, std::move(idx));
  }

  Kind kind() const noexcept { return kind_; }
  const GridShape& shape() const noexcept { return shape_; }
  std::size_t output_dim() const noexcept { return indices_.size(); }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }
  std::size_t stride() const noexcept { return stride_; }

  std::vector<double> apply(std::span<const double> grid) const {
    if (grid.size() != shape_.size()) throw ConfigError("observation operator: grid size mismatch");
    std::vector<double> out(indices_.size());
    for (std::size_t k = 0; k < indices_.size(); ++k) out[k] = grid[indices_[k]];
    return out;
  }

  std::vector<double> apply(const FieldGrid& grid) const { return apply(grid.data()); }

  /// out += H^T v
  void adjoint_add(std::span<const double> v, std::span<double> out) const {
    if (v.size() != indices_.size() || out.size() != shape_.size())
      throw ConfigError("observation operator adjoint: size mismatch");
    for (std::size_t k = 0; k < indices_.size(); ++k) out[indices_[k]] += v[k];
  }

  std::vector<double> adjoint(std::span<const double> v) const {
    std::vector<double> out(shape_.size(), 0.0);
    adjoint_add(v, out);
    return out;
  }

 private:
  ObsOperator(Kind kind, GridShape shape, std::vector<std::size_t> indices)
      : kind_(kind), shape_(shape), indices_(std::move(indices)) {
    std::unordered_set<std::size_t> unique(indices_.begin(), indices_.end());
    if (unique.size() != indices_.size()) throw ConfigError("observation operator selects an entry twice");
  }

  Kind kind_;
  GridShape shape_;
  std::vector<std::size_t> indices_;
  std::size_t stride_ = 0;
};

inline ObsOperator make_channel_mask(GridShape shape, std::vector<std::size_t> kept) {
  return ObsOperator::channel_mask(shape, std::move(kept));
}

inline ObsOperator make_channel_mask(const FieldGrid& like, const std::vector<std::string>& kept) {
  std::vector<std::size_t> idx;
  for (const auto& name : kept) idx.push_back(like.channel_index(name));
  return ObsOperator::channel_mask(like.shape(), std::move(idx));
}

// -----------------------------------------------------------------------------

struct PseudoObservations {
  ObservationSet obs;
  FieldGrid truth;
};

/// y = H(grid) + eta with eta ~ N(0, noise_std[channel]^2), all in normalized model space.
/// A zero std gives y = H(grid) exactly; such observations cannot drive guidance (sigma must be > 0 there).
inline PseudoObservations simulate_pseudo_obs(const FieldGrid& grid, const ObsOperator& op,
                                              std::span<const double> noise_std, Rng& rng) {
  if (noise_std.size() != grid.channels().size()) throw ConfigError("need one noise std per channel");
  for (double s : noise_std)
    if (!(s >= 0.0)) throw ConfigError("observation noise std must be >= 0");
  if (!(op.shape() == grid.shape())) throw ConfigError("operator shape does not match grid");
  PseudoObservations out{{}, grid};
  const auto& shape = grid.shape();
  out.obs.items.reserve(op.output_dim());
  for (auto flat : op.indices()) {
    Observation o;
    o.channel = flat / shape.plane();
    o.row = (flat % shape.plane()) / shape.width;
    o.col = flat % shape.width;
    o.sigma = noise_std[o.channel];
    o.value = grid.values()[flat] + o.sigma * rng.normal();
    out.obs.items.push_back(o);
  }
  return out;
}

}  // namespace sda
