#pragma once

#include <filesystem>
#include <fstream>

#include "sda/binary_io.hpp"
#include "sda/conv_net.hpp"
#include "sda/denoiser.hpp"

namespace sda {

/// Learnable backend: D(x; sigma) = c_skip x + c_out F(c_in x; c_noise) with EDM preconditioning.
/// Weights are stored in f32 and evaluated in double.
class ConvDenoiser final : public Denoiser {
 public:
  ConvDenoiser(nn::Architecture arch, std::size_t height, std::size_t width, std::vector<float> weights,
               std::vector<ChannelSpec> channels = {}, NormStats norm = {})
      : net_(arch),
        weights_f32_(std::move(weights)),
        shape_{arch.channels, height, width},
        channels_(std::move(channels)),
        norm_(std::move(norm)) {
    if (height % 4 != 0 || width % 4 != 0) throw ConfigError("conv denoiser needs grid dims divisible by 4");
    if (weights_f32_.size() != net_.parameter_count())
      throw ConfigError("conv denoiser: weight blob has " + std::to_string(weights_f32_.size()) + " values, expected " +
                        std::to_string(net_.parameter_count()));
    if (channels_.empty()) channels_ = FieldGrid::default_channels(arch.channels);
    if (norm_.mean.empty()) norm_ = NormStats::unit(arch.channels);
    if (channels_.size() != arch.channels || norm_.channels() != arch.channels)
      throw ConfigError("conv denoiser: channel metadata does not match architecture");
    norm_.validate();
    weights_.assign(weights_f32_.begin(), weights_f32_.end());
  }

  using Denoiser::evaluate;
  using Denoiser::vjp;

  GridShape shape() const override { return shape_; }
  const nn::Architecture& architecture() const noexcept { return net_.architecture(); }
  const nn::ConvNet<double>& net() const noexcept { return net_; }
  const std::vector<float>& weights() const noexcept { return weights_f32_; }
  const std::vector<ChannelSpec>& channels() const noexcept { return channels_; }
  const NormStats& norm() const noexcept { return norm_; }

  void evaluate(std::span<const double> x, double sigma, std::span<double> out) const override {
    check_size(x.size());
    if (!(sigma >= 0.0)) throw DomainError("denoiser sigma must be >= 0");
    if (sigma == 0.0) {
      std::copy(x.begin(), x.end(), out.begin());
      return;
    }
    const auto pc = nn::Preconditioning::at(sigma);
    std::vector<double> in(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) in[k] = pc.c_in * x[k];
    typename nn::ConvNet<double>::Trace tr;
    net_.forward(weights_, in, shape_.height, shape_.width, pc.c_noise, tr);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = pc.c_skip * x[k] + pc.c_out * tr.out[k];
  }

  void vjp(std::span<const double> x, double sigma, std::span<const double> cotangent,
           std::span<double> out) const override {
    check_size(x.size());
    check_size(cotangent.size());
    if (!(sigma >= 0.0)) throw DomainError("denoiser sigma must be >= 0");
    if (sigma == 0.0) {
      std::copy(cotangent.begin(), cotangent.end(), out.begin());
      return;
    }
    const auto pc = nn::Preconditioning::at(sigma);
    std::vector<double> in(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) in[k] = pc.c_in * x[k];
    typename nn::ConvNet<double>::Trace tr;
    net_.forward(weights_, in, shape_.height, shape_.width, pc.c_noise, tr);
    std::vector<double> din(x.size());
    net_.backward(weights_, tr, cotangent, {}, din);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = pc.c_skip * cotangent[k] + pc.c_out * pc.c_in * din[k];
  }

 private:
  nn::ConvNet<double> net_;
  std::vector<float> weights_f32_;
  std::vector<double> weights_;
  GridShape shape_;
  std::vector<ChannelSpec> channels_;
  NormStats norm_;
};

// -----------------------------------------------------------------------------
// Checkpoint: "SDAD", version u32, architecture {channels, base_width, embed_dim, fourier,
// height, width} u32, per channel {name u16+utf8, transform u8, shift f64, mean f64, std f64},
// section count u32, per section {name u16+utf8, offset u64, size u64}, weight count u64,
// f32 weights.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const ConvDenoiser& d) {
  using namespace binary;
  os.write("SDAD", 4);
  write_uint<std::uint32_t>(os, kCheckpointVersion);
  const auto& a = d.architecture();
  for (std::uint32_t v : {a.channels, a.base_width, a.embed_dim, a.fourier}) write_uint<std::uint32_t>(os, v);
  write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(d.shape().height));
  write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(d.shape().width));
  for (std::size_t c = 0; c < d.channels().size(); ++c) {
    write_string16(os, d.channels()[c].name);
    write_uint<std::uint8_t>(os, static_cast<std::uint8_t>(d.channels()[c].transform));
    write_f64(os, d.channels()[c].shift);
    write_f64(os, d.norm().mean[c]);
    write_f64(os, d.norm().std[c]);
  }
  const auto& sections = d.net().layout().sections();
  write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    write_string16(os, s.name);
    write_uint<std::uint64_t>(os, s.offset);
    write_uint<std::uint64_t>(os, s.size);
  }
  write_uint<std::uint64_t>(os, d.weights().size());
  for (float v : d.weights()) write_f32(os, v);
  if (!os) throw IoError("failed writing checkpoint");
}

inline ConvDenoiser read_checkpoint(std::istream& is) {
  using namespace binary;
  expect_magic(is, "SDAD");
  const auto version = read_uint<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  nn::Architecture a;
  a.channels = read_uint<std::uint32_t>(is);
  a.base_width = read_uint<std::uint32_t>(is);
  a.embed_dim = read_uint<std::uint32_t>(is);
  a.fourier = read_uint<std::uint32_t>(is);
  const auto h = read_uint<std::uint32_t>(is);
  const auto w = read_uint<std::uint32_t>(is);
  if (a.channels == 0 || a.channels > 1024) throw IoError("checkpoint: implausible channel count");
  std::vector<ChannelSpec> channels(a.channels);
  NormStats norm{std::vector<double>(a.channels), std::vector<double>(a.channels)};
  for (std::uint32_t c = 0; c < a.channels; ++c) {
    channels[c].name = read_string16(is);
    const auto tag = read_uint<std::uint8_t>(is);
    if (tag > 1) throw IoError("checkpoint: unknown transform tag");
    channels[c].transform = static_cast<TransformKind>(tag);
    channels[c].shift = read_f64(is);
    norm.mean[c] = read_f64(is);
    norm.std[c] = read_f64(is);
  }
  const nn::ConvNet<float> reference(a);
  const auto n_sections = read_uint<std::uint32_t>(is);
  const auto& expected = reference.layout().sections();
  if (n_sections != expected.size()) throw IoError("checkpoint: section index does not match architecture");
  for (std::uint32_t k = 0; k < n_sections; ++k) {
    const std::string name = read_string16(is);
    const auto off = read_uint<std::uint64_t>(is);
    const auto size = read_uint<std::uint64_t>(is);
    if (name != expected[k].name || off != expected[k].offset || size != expected[k].size)
      throw IoError("checkpoint: section '" + name + "' does not match architecture");
  }
  const auto count = read_uint<std::uint64_t>(is);
  if (count != reference.parameter_count()) throw IoError("checkpoint: weight count mismatch");
  std::vector<float> weights(count);
  for (auto& v : weights) v = read_f32(is);
  try {
    return ConvDenoiser(a, h, w, std::move(weights), std::move(channels), std::move(norm));
  } catch (const Error& e) {
    throw IoError(std::string("invalid checkpoint: ") + e.what());
  }
}

inline void write_checkpoint_file(const std::filesystem::path& path, const ConvDenoiser& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, d);
}

inline ConvDenoiser read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace sda
