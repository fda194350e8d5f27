#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sda/covariance.hpp"
#include "sda/gaussian_denoiser.hpp"
#include "sda/grid_io.hpp"

namespace sda {

/// Stationary squared-exponential GRF with cross-channel correlation, in normalized units.
struct SyntheticDatasetSpec {
  std::size_t height = 32, width = 32;
  std::size_t channels = 1;
  std::vector<double> length_scales{3.0};  // one per channel, pixels
  Eigen::MatrixXd correlation = Eigen::MatrixXd::Identity(1, 1);
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  double nugget = 1e-6;

  GridShape shape() const { return {channels, height, width}; }

  void validate() const {
    if (height == 0 || width == 0 || channels == 0) throw ConfigError("dataset dims must be > 0");
    if (length_scales.size() != channels) throw ConfigError("need one length scale per channel");
    for (double l : length_scales)
      if (!(l > 0.0)) throw ConfigError("length scale must be > 0");
    if (static_cast<std::size_t>(correlation.rows()) != channels || correlation.cols() != correlation.rows())
      throw ConfigError("correlation matrix must be channels x channels");
    check_correlation_matrix(correlation);
    if (!(nugget >= 0.0)) throw ConfigError("nugget must be >= 0");
  }

  std::shared_ptr<const Covariance> covariance() const {
    validate();
    return make_squared_exponential_covariance(shape(), length_scales, correlation, nugget);
  }

  /// Two channels with a shared length scale and correlation rho.
  static SyntheticDatasetSpec two_channel(std::size_t h, std::size_t w, double length, double rho) {
    SyntheticDatasetSpec s;
    s.height = h;
    s.width = w;
    s.channels = 2;
    s.length_scales = {length, length};
    s.correlation.resize(2, 2);
    s.correlation << 1.0, rho, rho, 1.0;
    return s;
  }

  nlohmann::json to_json() const {
    std::vector<std::vector<double>> corr(channels, std::vector<double>(channels));
    for (std::size_t a = 0; a < channels; ++a)
      for (std::size_t b = 0; b < channels; ++b) corr[a][b] = correlation(a, b);
    return {{"height", height}, {"width", width},   {"channels", channels}, {"length_scales", length_scales},
            {"correlation", corr}, {"count", count}, {"seed", seed},         {"nugget", nugget},
            {"kernel", "squared_exponential"}};
  }

  static SyntheticDatasetSpec from_json(const nlohmann::json& j) {
    SyntheticDatasetSpec s;
    try {
      s.height = j.at("height").get<std::size_t>();
      s.width = j.at("width").get<std::size_t>();
      s.channels = j.at("channels").get<std::size_t>();
      s.length_scales = j.at("length_scales").get<std::vector<double>>();
      const auto corr = j.at("correlation").get<std::vector<std::vector<double>>>();
      s.correlation.resize(Eigen::Index(corr.size()), Eigen::Index(corr.size()));
      for (std::size_t a = 0; a < corr.size(); ++a) {
        if (corr[a].size() != corr.size()) throw ConfigError("correlation matrix must be square");
        for (std::size_t b = 0; b < corr.size(); ++b) s.correlation(Eigen::Index(a), Eigen::Index(b)) = corr[a][b];
      }
      s.count = j.at("count").get<std::size_t>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.nugget = j.value("nugget", 1e-6);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad dataset manifest: ") + e.what());
    }
    s.validate();
    return s;
  }
};

/// Sample k uses its own stream derive_seed(spec.seed, k), so the dataset does not depend on `threads`.
inline std::vector<FieldGrid> generate_grf_dataset(const SyntheticDatasetSpec& spec, std::size_t threads = 1) {
  const auto cov = spec.covariance();
  const auto channels = FieldGrid::default_channels(spec.channels);
  std::vector<std::vector<double>> raw(spec.count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < spec.count; k = next++) {
      Rng rng(derive_seed(spec.seed, k));
      raw[k] = cov->sample(rng);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, spec.count));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  std::vector<FieldGrid> out;
  out.reserve(spec.count);
  for (auto& r : raw)
    out.emplace_back(channels, spec.height, spec.width, std::move(r), NormStats::unit(spec.channels));
  return out;
}

/// Analytic denoiser matching the generator exactly (zero mean).
inline GaussianAnalyticDenoiser matching_denoiser(const SyntheticDatasetSpec& spec) {
  return GaussianAnalyticDenoiser(spec.covariance());
}

// -----------------------------------------------------------------------------
// Stack file: "SDAS", version u32, count u64, then `count` SDAG grids.

inline void write_grid_stack(std::ostream& os, const std::vector<FieldGrid>& grids) {
  os.write("SDAS", 4);
  binary::write_uint<std::uint32_t>(os, 1);
  binary::write_uint<std::uint64_t>(os, grids.size());
  for (const auto& g : grids) write_grid(os, g);
  if (!os) throw IoError("failed writing grid stack");
}

inline std::vector<FieldGrid> read_grid_stack(std::istream& is) {
  binary::expect_magic(is, "SDAS");
  const auto version = binary::read_uint<std::uint32_t>(is);
  if (version != 1) throw IoError("unsupported grid stack version " + std::to_string(version));
  const auto n = binary::read_uint<std::uint64_t>(is);
  std::vector<FieldGrid> out;
  out.reserve(std::size_t(std::min<std::uint64_t>(n, 1 << 20)));
  for (std::uint64_t k = 0; k < n; ++k) out.push_back(read_grid(is));
  return out;
}

inline void write_grid_stack_file(const std::filesystem::path& path, const std::vector<FieldGrid>& grids) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_grid_stack(os, grids);
}

inline std::vector<FieldGrid> read_grid_stack_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return read_grid_stack(is);
}

/// Writes samples.sdas plus manifest.json (spec, seed, file list) into `dir`.
inline nlohmann::json write_grf_dataset(const std::filesystem::path& dir, const SyntheticDatasetSpec& spec,
                                        const std::vector<FieldGrid>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_grid_stack_file(dir / "samples.sdas", samples);
  nlohmann::json manifest = {{"format", "sda-grf-dataset"},
                             {"version", 1},
                             {"spec", spec.to_json()},
                             {"files", nlohmann::json::array({"samples.sdas"})}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest in '" + dir.string() + "'");
  os << manifest.dump(2) << '\n';
  return manifest;
}

struct GrfDataset {
  SyntheticDatasetSpec spec;
  std::vector<FieldGrid> samples;
};

inline nlohmann::json read_grf_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("no manifest.json in '" + dir.string() + "'");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("unreadable manifest: ") + e.what());
  }
  if (!manifest.contains("spec") || !manifest.contains("files"))
    throw IoError("manifest in '" + dir.string() + "' lacks spec or files");
  return manifest;
}

inline SyntheticDatasetSpec read_grf_spec(const std::filesystem::path& dir) {
  return SyntheticDatasetSpec::from_json(read_grf_manifest(dir).at("spec"));
}

inline GrfDataset read_grf_dataset(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_grf_manifest(dir);
  GrfDataset d{SyntheticDatasetSpec::from_json(manifest.at("spec")), {}};
  for (const auto& f : manifest.at("files")) {
    auto part = read_grid_stack_file(dir / f.get<std::string>());
    for (auto& g : part) d.samples.push_back(std::move(g));
  }
  return d;
}

}  // namespace sda
