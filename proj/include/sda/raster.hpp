#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sda/field.hpp"

namespace sda {

struct ValueRange {
  double lo = 0.0, hi = 1.0;
};

/// Min/max of one channel (widened when flat).
inline ValueRange channel_range(const FieldGrid& g, std::size_t c) {
  const auto ch = g.channel(c);
  auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
  ValueRange r{*lo, *hi};
  if (!(r.hi > r.lo)) r.hi = r.lo + 1.0;
  return r;
}

/// 8-bit binary PGM of one channel; values are clipped to `range` and mapped linearly to 0..255.
inline void write_pgm(const std::filesystem::path& path, const FieldGrid& g, std::size_t c, ValueRange range) {
  if (c >= g.channels().size()) throw ConfigError("raster channel out of range");
  if (!(range.hi > range.lo)) throw ConfigError("raster value range must have hi > lo");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "P5\n" << g.width() << ' ' << g.height() << "\n255\n";
  std::vector<unsigned char> row(g.width());
  for (std::size_t i = 0; i < g.height(); ++i) {
    for (std::size_t j = 0; j < g.width(); ++j) {
      const double t = (g.at(c, i, j) - range.lo) / (range.hi - range.lo);
      row[j] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
    }
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

/// One PGM per channel as <stem>_<channel>.pgm plus <stem>.json recording the value ranges.
/// Ranges default to each channel's min/max; pass `ranges` to share a scale across rasters.
inline nlohmann::json export_rasters(const std::filesystem::path& dir, const std::string& stem, const FieldGrid& g,
                                     const std::optional<std::vector<ValueRange>>& ranges = std::nullopt) {
  if (ranges && ranges->size() != g.channels().size()) throw ConfigError("need one raster range per channel");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  nlohmann::json side = {{"width", g.width()}, {"height", g.height()}, {"channels", nlohmann::json::array()}};
  for (std::size_t c = 0; c < g.channels().size(); ++c) {
    const ValueRange r = ranges ? (*ranges)[c] : channel_range(g, c);
    const std::string file = stem + "_" + g.channels()[c].name + ".pgm";
    write_pgm(dir / file, g, c, r);
    side["channels"].push_back({{"name", g.channels()[c].name}, {"file", file}, {"min", r.lo}, {"max", r.hi}});
  }
  std::ofstream os(dir / (stem + ".json"));
  if (!os) throw IoError("cannot write raster sidecar for " + stem);
  os << side.dump(2) << '\n';
  return side;
}

}  // namespace sda
