// sda: command-line driver for dataset synthesis, training, sampling, assimilation,
// evaluation, station sweeps and the linear-Gaussian oracle checks.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sda/config.hpp"
#include "sda/conv_denoiser.hpp"
#include "sda/gaussian_denoiser.hpp"
#include "sda/grf.hpp"
#include "sda/grid_io.hpp"
#include "sda/guidance.hpp"
#include "sda/ingest.hpp"
#include "sda/metrics.hpp"
#include "sda/oracle_checks.hpp"
#include "sda/raster.hpp"
#include "sda/train.hpp"

namespace fs = std::filesystem;
using namespace sda;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::domain: return kConfig;
    case ErrorKind::numerical: return kNumerical;
    case ErrorKind::io:
    case ErrorKind::parse: return kIo;
  }
  return kConfig;
}

// -----------------------------------------------------------------------------
// Schemas

ConfigKey key(std::string name, ValueKind kind, std::string def, std::string help) {
  return {std::move(name), kind, std::move(def), std::move(help)};
}

ConfigSchema common_keys() {
  return {key("seed", ValueKind::integer, "0", "base random seed (SDA_SEED overrides)"),
          key("out_dir", ValueKind::string, "\"out\"", "output directory"),
          key("threads", ValueKind::integer, "1", "worker threads")};
}

ConfigSchema backend_keys() {
  return {key("backend", ValueKind::string, "\"analytic\"", "denoiser backend: analytic | conv"),
          key("data_dir", ValueKind::string, "\"\"", "GRF dataset directory (analytic prior)"),
          key("checkpoint", ValueKind::string, "\"\"", "conv denoiser checkpoint")};
}

ConfigSchema guidance_keys() {
  return {key("preset", ValueKind::string, "\"default\"", "hyperparameter preset: default | missing-channel"),
          key("n_steps", ValueKind::integer, "64", "reverse diffusion steps N"),
          key("corrections", ValueKind::integer, "2", "Langevin corrections C per step"),
          key("tau_tilde", ValueKind::real, "0.3", "Langevin step scale"),
          key("gamma", ValueKind::real, "0.001", "variance inflation Gamma"),
          key("obs_sigma", ValueKind::real, "0.1", "default observation noise std (model space)"),
          key("members", ValueKind::integer, "16", "ensemble size")};
}

ConfigSchema concat(std::initializer_list<ConfigSchema> parts) {
  ConfigSchema out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

ConfigSchema schema_for(const std::string& cmd) {
  if (cmd == "gen-data")
    return concat({common_keys(),
                   {key("height", ValueKind::integer, "32", "grid rows"),
                    key("width", ValueKind::integer, "32", "grid columns"),
                    key("channels", ValueKind::integer, "1", "channels"),
                    key("length_scales", ValueKind::real_list, "[3.0]", "SE length scale per channel, pixels"),
                    key("correlation", ValueKind::real_list, "[]", "row-major channel correlation (empty: identity)"),
                    key("count", ValueKind::integer, "1000", "number of samples"),
                    key("nugget", ValueKind::real, "1e-6", "diagonal nugget")}});
  if (cmd == "train")
    return concat({common_keys(),
                   {key("data_dir", ValueKind::string, "\"data\"", "GRF dataset directory"),
                    key("base_width", ValueKind::integer, "16", "level-0 feature maps"),
                    key("embed_dim", ValueKind::integer, "32", "noise embedding width"),
                    key("fourier", ValueKind::integer, "4", "Fourier feature pairs"),
                    key("batch_size", ValueKind::integer, "16", "batch size"),
                    key("learning_rate", ValueKind::real, "0.002", "peak Adam learning rate"),
                    key("iterations", ValueKind::integer, "4000", "optimizer steps"),
                    key("warmup", ValueKind::integer, "200", "learning-rate warmup steps"),
                    key("ema_decay", ValueKind::real, "0.999", "weight EMA decay"),
                    key("validation_fraction", ValueKind::real, "0.1", "held-out fraction"),
                    key("p_mean", ValueKind::real, "-1.2", "mean of ln sigma"),
                    key("p_std", ValueKind::real, "1.2", "std of ln sigma")}});
  if (cmd == "sample")
    return concat({common_keys(), backend_keys(), guidance_keys(),
                   {key("rasters", ValueKind::boolean, "true", "export PGM rasters")}});
  if (cmd == "assimilate")
    return concat({common_keys(), backend_keys(), guidance_keys(),
                   {key("obs_csv", ValueKind::string, "\"\"", "observation CSV"),
                    key("rasters", ValueKind::boolean, "true", "export PGM rasters")}});
  if (cmd == "evaluate")
    return concat({common_keys(),
                   {key("run_dir", ValueKind::string, "\"\"", "assimilate output directory"),
                    key("obs_csv", ValueKind::string, "\"\"", "observations to score against"),
                    key("bootstrap", ValueKind::integer, "1000", "bootstrap resamples"),
                    key("level", ValueKind::real, "0.95", "confidence level")}});
  if (cmd == "station-sweep")
    return concat({common_keys(), backend_keys(), guidance_keys(),
                   {key("obs_csv", ValueKind::string, "\"\"", "station observations (first time stamp)"),
                    key("counts", ValueKind::real_list, "[5, 10, 20, 40]", "guiding station counts"),
                    key("split_seed", ValueKind::integer, "0", "station split seed")}});
  if (cmd == "oracle-check")
    return concat({common_keys(),
                   {key("members", ValueKind::integer, "256", "posterior check ensemble size"),
                    key("n_steps", ValueKind::integer, "256", "posterior check steps"),
                    key("scenario_seed", ValueKind::integer, "3", "posterior check scenario"),
                    key("conv", ValueKind::boolean, "true", "include the conv-backend vjp check")}});
  throw ConfigError("unknown command " + cmd);
}

// -----------------------------------------------------------------------------
// Shared plumbing

// Shortest text that reads back to the same double.
std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Context {
  RunConfig cfg;
  fs::path out;
};

Context resolve(const std::string& cmd, const std::string& config_path,
                const std::map<std::string, std::string>& flags) {
  Context ctx{RunConfig(schema_for(cmd)), {}};
  if (!config_path.empty()) ctx.cfg.load_file(config_path);
  ctx.cfg.apply_env();
  for (const auto& [k, v] : flags) ctx.cfg.set(k, v);
  if (ctx.cfg.has_key("preset")) {
    const GuidanceConfig p = GuidanceConfig::preset(ctx.cfg.get_string("preset"));
    ctx.cfg.set_fallback("n_steps", std::to_string(p.n_steps));
    ctx.cfg.set_fallback("corrections", std::to_string(p.corrections));
    ctx.cfg.set_fallback("tau_tilde", shortest(p.tau_tilde));
    ctx.cfg.set_fallback("gamma", shortest(p.gamma));
    ctx.cfg.set_fallback("obs_sigma", shortest(p.obs_sigma));
  }
  ctx.out = ctx.cfg.get_string("out_dir");
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw IoError("cannot create output directory '" + ctx.out.string() + "': " + ec.message());
  ctx.cfg.write_file(ctx.out / "resolved_config.toml");
  return ctx;
}

GuidanceConfig guidance_from(const RunConfig& cfg) {
  GuidanceConfig g;
  g.n_steps = int(cfg.get_int("n_steps"));
  g.corrections = int(cfg.get_int("corrections"));
  g.tau_tilde = cfg.get_real("tau_tilde");
  g.gamma = cfg.get_real("gamma");
  g.obs_sigma = cfg.get_real("obs_sigma");
  g.seed = cfg.get_u64("seed");
  g.validate();
  return g;
}

struct Backend {
  std::unique_ptr<Denoiser> denoiser;
  FieldGrid layout;  // channels + norm stats of model space
};

Backend load_backend(const RunConfig& cfg) {
  const std::string kind = cfg.get_string("backend");
  if (kind == "analytic") {
    const std::string dir = cfg.get_string("data_dir");
    if (dir.empty()) throw ConfigError("analytic backend needs data_dir (a gen-data output)");
    const SyntheticDatasetSpec spec = read_grf_spec(dir);
    Backend b{std::make_unique<GaussianAnalyticDenoiser>(spec.covariance()),
              FieldGrid::zeros(FieldGrid::default_channels(spec.channels), spec.height, spec.width)};
    return b;
  }
  if (kind == "conv") {
    const std::string path = cfg.get_string("checkpoint");
    if (path.empty()) throw ConfigError("conv backend needs checkpoint");
    auto d = std::make_unique<ConvDenoiser>(read_checkpoint_file(path));
    FieldGrid layout(d->channels(), d->shape().height, d->shape().width, std::vector<double>(d->shape().size(), 0.0),
                     d->norm());
    return {std::move(d), std::move(layout)};
  }
  throw ConfigError("unknown backend '" + kind + "' (expected analytic | conv)");
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << j.dump(2) << '\n';
}

/// members.sdas, mean.sdag, std.sdag and optional rasters (mean, std, first member) into `dir`.
nlohmann::json export_ensemble(const fs::path& dir, const Ensemble& ens, bool rasters) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "'");
  write_grid_stack_file(dir / "members.sdas", ens.members);
  const FieldGrid mean = ens.mean(), sd = ens.stddev();
  write_grid_file(dir / "mean.sdag", mean);
  write_grid_file(dir / "std.sdag", sd);
  nlohmann::json files = {"members.sdas", "mean.sdag", "std.sdag"};
  if (rasters) {
    std::vector<ValueRange> shared;
    for (std::size_t c = 0; c < mean.channels().size(); ++c) {
      ValueRange r = channel_range(ens.members.front(), c);
      for (const auto& m : ens.members) {
        const ValueRange q = channel_range(m, c);
        r.lo = std::min(r.lo, q.lo);
        r.hi = std::max(r.hi, q.hi);
      }
      shared.push_back(r);
    }
    export_rasters(dir / "rasters", "mean", mean, shared);
    export_rasters(dir / "rasters", "member000", ens.members.front(), shared);
    export_rasters(dir / "rasters", "std", sd);
    files.push_back("rasters/");
  }
  return {{"members", ens.size()}, {"seeds", ens.seeds}, {"files", files}};
}

// -----------------------------------------------------------------------------
// Commands

int cmd_gen_data(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  SyntheticDatasetSpec spec;
  spec.height = cfg.get_size("height");
  spec.width = cfg.get_size("width");
  spec.channels = cfg.get_size("channels");
  spec.length_scales = cfg.get_list("length_scales");
  if (spec.length_scales.size() == 1 && spec.channels > 1) spec.length_scales.assign(spec.channels, spec.length_scales[0]);
  const auto corr = cfg.get_list("correlation");
  spec.correlation = Eigen::MatrixXd::Identity(Eigen::Index(spec.channels), Eigen::Index(spec.channels));
  if (!corr.empty()) {
    if (corr.size() != spec.channels * spec.channels) throw ConfigError("correlation needs channels^2 entries");
    for (std::size_t a = 0; a < spec.channels; ++a)
      for (std::size_t b = 0; b < spec.channels; ++b)
        spec.correlation(Eigen::Index(a), Eigen::Index(b)) = corr[a * spec.channels + b];
  }
  spec.count = cfg.get_size("count");
  spec.seed = cfg.get_u64("seed");
  spec.nugget = cfg.get_real("nugget");
  spec.validate();
  const auto samples = generate_grf_dataset(spec, cfg.get_size("threads"));
  write_grf_dataset(ctx.out, spec, samples);
  std::cout << "wrote " << samples.size() << " samples to " << ctx.out.string() << '\n';
  return kOk;
}

int cmd_train(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const GrfDataset data = read_grf_dataset(cfg.get_string("data_dir"));
  if (data.samples.size() < 2) throw ConfigError("training needs at least two samples");
  const NormStats stats = compute_norm_stats(data.samples);
  std::vector<std::vector<double>> samples;
  samples.reserve(data.samples.size());
  for (const auto& g : data.samples) samples.push_back(normalize(g, stats).values());

  nn::Architecture arch;
  arch.channels = static_cast<std::uint32_t>(data.spec.channels);
  arch.base_width = static_cast<std::uint32_t>(cfg.get_size("base_width"));
  arch.embed_dim = static_cast<std::uint32_t>(cfg.get_size("embed_dim"));
  arch.fourier = static_cast<std::uint32_t>(cfg.get_size("fourier"));
  TrainConfig tc;
  tc.batch_size = cfg.get_size("batch_size");
  tc.learning_rate = cfg.get_real("learning_rate");
  tc.iterations = cfg.get_size("iterations");
  tc.warmup = cfg.get_size("warmup");
  tc.ema_decay = cfg.get_real("ema_decay");
  tc.validation_fraction = cfg.get_real("validation_fraction");
  tc.p_mean = cfg.get_real("p_mean");
  tc.p_std = cfg.get_real("p_std");
  tc.seed = cfg.get_u64("seed");
  tc.checkpoint_path = (ctx.out / "checkpoint.sdad").string();

  ConvTrainer trainer(arch, data.spec.height, data.spec.width, tc);
  std::vector<std::vector<double>> validation;
  const TrainResult res = train_conv_denoiser(trainer, samples, &validation, [](std::size_t it, double loss) {
    std::cout << "iteration " << it << " loss " << loss << std::endl;
  });
  {
    std::ofstream os(ctx.out / "loss.csv");
    if (!os) throw IoError("cannot write loss.csv");
    os << "iteration,loss\n";
    for (std::size_t k = 0; k < res.loss_curve.size(); ++k) os << k + 1 << ',' << res.loss_curve[k] << '\n';
  }
  const ConvDenoiser snap = trainer.snapshot(data.samples.front().channels(), stats);
  write_checkpoint_file(tc.checkpoint_path, snap);
  const GaussianAnalyticDenoiser oracle(data.spec.covariance());
  const double optimum = denoising_mse(oracle, validation, 1.0, derive_seed(tc.seed, 99));
  write_json(ctx.out / "train_summary.json", {{"validation_mse_sigma1", res.validation_mse_sigma1},
                                               {"analytic_mse_sigma1", optimum},
                                               {"iterations", tc.iterations},
                                               {"parameters", trainer.params().size()},
                                               {"checkpoint", "checkpoint.sdad"}});
  std::cout << "validation MSE at sigma=1: " << res.validation_mse_sigma1 << " (analytic " << optimum << ")\n";
  return kOk;
}

Ensemble run_members(const Backend& b, const LikelihoodModel& lik, const GuidanceConfig& g, const RunConfig& cfg) {
  return assimilate_ensemble(*b.denoiser, lik, g, cfg.get_size("members"), cfg.get_size("threads"), &b.layout);
}

int cmd_sample(const Context& ctx) {
  const Backend b = load_backend(ctx.cfg);
  const GuidanceConfig g = guidance_from(ctx.cfg);
  const Ensemble ens = run_members(b, LikelihoodModel{}, g, ctx.cfg);
  auto manifest = export_ensemble(ctx.out, ens, ctx.cfg.get_bool("rasters"));
  manifest["command"] = "sample";
  write_json(ctx.out / "manifest.json", manifest);
  std::cout << "sampled " << ens.size() << " members into " << ctx.out.string() << '\n';
  return kOk;
}

int cmd_assimilate(const Context& ctx) {
  const Backend b = load_backend(ctx.cfg);
  const GuidanceConfig g = guidance_from(ctx.cfg);
  const std::string obs_path = ctx.cfg.get_string("obs_csv");
  if (obs_path.empty()) throw ConfigError("assimilate needs obs_csv");
  const auto series = read_observation_csv(obs_path, b.layout, g.obs_sigma);
  nlohmann::json manifest = {{"command", "assimilate"}, {"times", nlohmann::json::array()}};
  if (series.empty()) {
    // header-only file: unguided sampling, identical to `sample` with the same seed
    const Ensemble ens = run_members(b, LikelihoodModel{}, g, ctx.cfg);
    manifest["times"].push_back({{"time", ""}, {"dir", "."}, {"observations", 0},
                                 {"output", export_ensemble(ctx.out, ens, ctx.cfg.get_bool("rasters"))}});
  }
  for (std::size_t t = 0; t < series.size(); ++t) {
    std::ostringstream name;
    name << 't' << std::setw(3) << std::setfill('0') << t;
    const LikelihoodModel lik(b.layout.shape(), series[t].obs);
    const Ensemble ens = run_members(b, lik, g, ctx.cfg);
    manifest["times"].push_back({{"time", series[t].time},
                                 {"dir", name.str()},
                                 {"observations", series[t].obs.size()},
                                 {"output", export_ensemble(ctx.out / name.str(), ens, ctx.cfg.get_bool("rasters"))}});
    std::cout << series[t].time << ": " << series[t].obs.size() << " observations, " << ens.size() << " members\n";
  }
  write_json(ctx.out / "manifest.json", manifest);
  return kOk;
}

int cmd_evaluate(const Context& ctx) {
  const fs::path run = ctx.cfg.get_string("run_dir");
  if (run.empty()) throw ConfigError("evaluate needs run_dir");
  std::ifstream ms(run / "manifest.json");
  if (!ms) throw IoError("no manifest.json in '" + run.string() + "'");
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("unreadable run manifest: ") + e.what());
  }
  std::vector<Ensemble> ensembles;
  std::vector<std::string> times;
  for (const auto& t : manifest.at("times")) {
    Ensemble e;
    e.members = read_grid_stack_file(run / t.at("dir").get<std::string>() / "members.sdas");
    e.seeds = t.at("output").at("seeds").get<std::vector<std::uint64_t>>();
    ensembles.push_back(std::move(e));
    times.push_back(t.at("time").get<std::string>());
  }
  if (ensembles.empty()) throw ConfigError("run has no ensembles");
  const std::string obs_path = ctx.cfg.get_string("obs_csv");
  if (obs_path.empty()) throw ConfigError("evaluate needs obs_csv");
  const auto series = read_observation_csv(obs_path, ensembles.front().members.front());
  std::map<std::string, const ObservationSet*> by_time;
  for (const auto& s : series) by_time[s.time] = &s.obs;
  std::vector<ObservationSet> obs;
  for (const auto& t : times) {
    auto it = by_time.find(t);
    if (it == by_time.end()) throw ConfigError("no observations for time '" + t + "'");
    obs.push_back(*it->second);
  }
  EvalOptions opt;
  opt.bootstrap_iterations = ctx.cfg.get_size("bootstrap");
  opt.level = ctx.cfg.get_real("level");
  opt.seed = ctx.cfg.get_u64("seed");
  const EvalReport report = evaluate_ensemble(ensembles, obs, opt);
  std::ofstream csv(ctx.out / "report.csv");
  if (!csv) throw IoError("cannot write report.csv");
  report.write_csv(csv);
  write_json(ctx.out / "report.json", report.to_json());
  report.write_csv(std::cout);
  return kOk;
}

int cmd_station_sweep(const Context& ctx) {
  const Backend b = load_backend(ctx.cfg);
  const GuidanceConfig g = guidance_from(ctx.cfg);
  const std::string obs_path = ctx.cfg.get_string("obs_csv");
  if (obs_path.empty()) throw ConfigError("station-sweep needs obs_csv");
  const auto series = read_observation_csv(obs_path, b.layout, g.obs_sigma);
  if (series.empty()) throw ConfigError("observation file has no rows");
  std::vector<std::size_t> counts;
  for (double c : ctx.cfg.get_list("counts")) {
    if (!(c >= 1.0) || c != std::floor(c)) throw ConfigError("station counts must be positive integers");
    counts.push_back(std::size_t(c));
  }
  const auto rows = station_sweep(
      series.front().obs, counts,
      [&](const ObservationSet& guide) {
        return run_members(b, LikelihoodModel(b.layout.shape(), guide), g, ctx.cfg).mean();
      },
      ctx.cfg.get_u64("split_seed"));
  std::ofstream os(ctx.out / "station_sweep.csv");
  if (!os) throw IoError("cannot write station_sweep.csv");
  for (std::ostream* s : {static_cast<std::ostream*>(&os), &std::cout}) {
    *s << "count,channel,rmse,evaluated,high_variance\n";
    for (const auto& r : rows)
      *s << r.count << ',' << r.channel << ',' << r.rmse << ',' << r.evaluated << ',' << (r.high_variance ? 1 : 0)
         << '\n';
  }
  return kOk;
}

int cmd_oracle_check(const Context& ctx) {
  OracleSuiteOptions opt;
  opt.posterior.members = ctx.cfg.get_size("members");
  opt.posterior.cfg.n_steps = int(ctx.cfg.get_int("n_steps"));
  opt.posterior.scenario_seed = ctx.cfg.get_u64("scenario_seed");
  opt.posterior.threads = ctx.cfg.get_size("threads");
  if (ctx.cfg.explicitly_set("seed")) opt.posterior.cfg.seed = ctx.cfg.get_u64("seed");
  opt.include_conv = ctx.cfg.get_bool("conv");
  const auto results = run_oracle_suite(opt);
  bool all = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.measured << " [" << std::fixed
              << std::setprecision(1) << r.seconds << " s]" << std::defaultfloat << std::setprecision(6) << '\n';
    j.push_back({{"name", r.name}, {"passed", r.passed}, {"measured", r.measured}, {"seconds", r.seconds}});
    all = all && r.passed;
  }
  write_json(ctx.out / "oracle_check.json", j);
  return all ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sda: score-based data assimilation on gridded fields"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "synthesize a Gaussian random field dataset"},
      {"train", "train the convolutional denoiser"},
      {"sample", "unconditional ensemble"},
      {"assimilate", "guided ensemble against an observation CSV"},
      {"evaluate", "score an assimilation run against observations"},
      {"station-sweep", "held-out RMSE versus number of guiding stations"},
      {"oracle-check", "linear-Gaussian checks with closed-form answers"}};

  std::map<std::string, std::string> config_paths;
  std::map<std::string, std::map<std::string, std::string>> flag_values;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    subs[name] = sub;
    sub->add_option("--config", config_paths[name], "TOML-style config file");
    for (const auto& k : schema_for(name)) {
      std::string flag = "--" + k.name;
      std::replace(flag.begin(), flag.end(), '_', '-');
      sub->add_option_function<std::string>(
          flag, [&flag_values, name = name, key = k.name](const std::string& v) { flag_values[name][key] = v; },
          k.help + " (default " + k.default_value + ")");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  for (const auto& [name, sub] : subs) {
    if (!sub->parsed()) continue;
    try {
      const Context ctx = resolve(name, config_paths[name], flag_values[name]);
      if (name == "gen-data") return cmd_gen_data(ctx);
      if (name == "train") return cmd_train(ctx);
      if (name == "sample") return cmd_sample(ctx);
      if (name == "assimilate") return cmd_assimilate(ctx);
      if (name == "evaluate") return cmd_evaluate(ctx);
      if (name == "station-sweep") return cmd_station_sweep(ctx);
      if (name == "oracle-check") return cmd_oracle_check(ctx);
    } catch (const Error& e) {
      std::cerr << "error [" << name << "]: " << e.what() << '\n';
      return exit_code_for(e.kind());
    } catch (const std::exception& e) {
      std::cerr << "error [" << name << "]: " << e.what() << '\n';
      return kNumerical;
    }
  }
  return kConfig;
}
