#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sda/binary_io.hpp"
#include "sda/field.hpp"

namespace sda {

inline constexpr std::uint32_t kGridFormatVersion = 1;

// Layout: "SDAG", version u32, C/H/W u32, per channel {name u16+utf8, transform u8,
// shift f64, mean f64, std f64}, then C*H*W f32 values in channel-major order.
inline void write_grid(std::ostream& os, const FieldGrid& g) {
  using namespace binary;
  os.write("SDAG", 4);
  write_uint<std::uint32_t>(os, kGridFormatVersion);
  write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(g.shape().channels));
  write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(g.height()));
  write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(g.width()));
  for (std::size_t c = 0; c < g.channels().size(); ++c) {
    const auto& ch = g.channels()[c];
    write_string16(os, ch.name);
    write_uint<std::uint8_t>(os, static_cast<std::uint8_t>(ch.transform));
    write_f64(os, ch.shift);
    write_f64(os, g.norm().mean[c]);
    write_f64(os, g.norm().std[c]);
  }
  for (double v : g.values()) write_f32(os, static_cast<float>(v));
  if (!os) throw IoError("failed writing grid");
}

inline FieldGrid read_grid(std::istream& is) {
  using namespace binary;
  expect_magic(is, "SDAG");
  const auto version = read_uint<std::uint32_t>(is);
  if (version != kGridFormatVersion) throw IoError("unsupported grid version " + std::to_string(version));
  const auto nc = read_uint<std::uint32_t>(is);
  const auto h = read_uint<std::uint32_t>(is);
  const auto w = read_uint<std::uint32_t>(is);
  if (nc == 0 || h == 0 || w == 0) throw IoError("grid header has zero dimension");
  std::vector<ChannelSpec> channels(nc);
  NormStats norm{std::vector<double>(nc), std::vector<double>(nc)};
  for (std::uint32_t c = 0; c < nc; ++c) {
    channels[c].name = read_string16(is);
    const auto tag = read_uint<std::uint8_t>(is);
    if (tag > 1) throw IoError("unknown transform tag " + std::to_string(tag));
    channels[c].transform = static_cast<TransformKind>(tag);
    channels[c].shift = read_f64(is);
    norm.mean[c] = read_f64(is);
    norm.std[c] = read_f64(is);
  }
  std::vector<double> data(static_cast<std::size_t>(nc) * h * w);
  for (auto& v : data) v = read_f32(is);
  try {
    return FieldGrid(std::move(channels), h, w, std::move(data), std::move(norm));
  } catch (const Error& e) {
    throw IoError(std::string("invalid grid file: ") + e.what());
  }
}

inline void write_grid_file(const std::filesystem::path& path, const FieldGrid& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_grid(os, g);
}

inline FieldGrid read_grid_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return read_grid(is);
}

}  // namespace sda
