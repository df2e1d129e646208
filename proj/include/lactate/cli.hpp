#pragma once

// Batch front end. Every command writes into one output directory that holds
// exactly one manifest.json next to its CSV outputs.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lactate/eval/experiment.hpp"
#include "lactate/eval/report.hpp"
#include "lactate/grid_io.hpp"
#include "lactate/impute/imputer.hpp"
#include "lactate/ingest.hpp"
#include "lactate/synth.hpp"

namespace lactate::cli {

inline constexpr std::string_view kVersion = "1.0.0";
inline constexpr const char* kOutRootEnv = "LACTATE_OUT_ROOT";
inline constexpr const char* kJobsEnv = "LACTATE_JOBS";

enum ExitCode { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

// ---------------------------------------------------------------------------
// Digests

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string file_sha256(const std::filesystem::path& p) { return sha256_hex(read_bytes(p)); }

// ---------------------------------------------------------------------------
// Manifest

class RunManifest {
 public:
  explicit RunManifest(std::string command) : command_(std::move(command)) {}

  void set_config(const nlohmann::json& effective) {
    config_ = effective;
    config_hash_ = sha256_hex(effective.dump());
  }
  void add_seed(const std::string& name, std::uint64_t seed) { seeds_[name] = seed; }
  void add_input(const std::filesystem::path& p) {
    if (std::filesystem::is_regular_file(p)) inputs_[p.string()] = file_sha256(p);
  }
  void add_stage(const std::string& name, double seconds) { stages_.push_back({{"stage", name}, {"seconds", seconds}}); }
  void add_output(const std::filesystem::path& p) { outputs_.push_back(p.filename().string()); }

  /// Times `fn` as a named stage.
  template <typename F>
  auto stage(const std::string& name, F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&] {
      add_stage(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    };
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      finish();
    } else {
      auto r = fn();
      finish();
      return r;
    }
  }

  nlohmann::json to_json(const std::filesystem::path& dir) const {
    nlohmann::json outputs = nlohmann::json::array();
    for (const auto& o : outputs_) {
      const auto p = dir / o;
      outputs.push_back({{"path", o}, {"sha256", std::filesystem::is_regular_file(p) ? file_sha256(p) : ""}});
    }
    return {{"command", command_},
            {"config_hash", config_hash_},
            {"config", config_},
            {"seeds", seeds_},
            {"versions",
             {{"lactate", kVersion},
              {"grid_format", kGridFormatVersion},
              {"imputer_state_format", impute::kStateFormatVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)}}},
            {"inputs", inputs_},
            {"stages", stages_},
            {"outputs", outputs}};
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    detail::write_text(dir / "manifest.json", to_json(dir).dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string config_hash_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::object();
  nlohmann::json stages_ = nlohmann::json::array();
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Helpers

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

/// Relative output paths are placed under $LACTATE_OUT_ROOT when it is set.
inline std::filesystem::path resolve_out(const std::filesystem::path& p) {
  if (p.is_relative())
    if (const char* root = std::getenv(kOutRootEnv); root && *root) return std::filesystem::path(root) / p;
  return p;
}

inline int default_jobs() {
  if (const char* v = std::getenv(kJobsEnv); v && *v) {
    const auto n = csv::parse_int(v);
    if (!n || *n < 1) throw ConfigError(std::string(kJobsEnv) + " must be a positive integer, got '" + v + "'");
    return static_cast<int>(*n);
  }
  return 1;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ','))
    if (auto t = std::string(csv::trim(cur)); !t.empty()) out.push_back(t);
  return out;
}

inline void write_observed_percent(const AlignedGrid& grid, const std::filesystem::path& path) {
  std::ostringstream out;
  csv::write_row(out, {"feature", "observed_percent"});
  for (const auto& [name, frac] : ingest::observed_fraction(grid)) csv::write_row(out, {name, csv::format_double(100.0 * frac)});
  detail::write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// Commands

struct SynthOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};

/// Config: synth keys plus an optional "missingness" array.
inline void cmd_synth(const SynthOptions& o) {
  RunManifest m("synth");
  auto j = read_json_file(o.config);
  if (!j.is_object()) throw ConfigError(o.config.string() + ": expected a JSON object");
  m.add_input(o.config);
  std::vector<synth::MissingnessSpec> miss;
  synth::SynthConfig cfg;
  try {
    if (j.contains("missingness"))
      for (const auto& x : j.at("missingness")) miss.push_back(synth::missingness_from_json(x));
    auto sj = j;
    sj.erase("missingness");
    cfg = synth::synth_config_from_json(sj);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(o.config.string() + ": " + e.what());
  }
  if (o.seed) {
    cfg.rng_seed = derive_seed(*o.seed, 0x5359);
    for (std::size_t i = 0; i < miss.size(); ++i) miss[i].seed = derive_seed(*o.seed, 0x4d53, i);
    j["seed_override"] = *o.seed;
  }
  m.set_config(j);
  m.add_seed("synth", cfg.rng_seed);
  for (std::size_t i = 0; i < miss.size(); ++i) m.add_seed("missingness_" + std::to_string(i), miss[i].seed);

  const auto out = resolve_out(o.out);
  synth::CorruptedGrid g = m.stage("generate", [&] {
    synth::CorruptedGrid c{synth::generate_cohort(cfg), {}};
    for (const auto& d : c.grid.data) c.truth.push_back(d.values);
    return c;
  });
  m.stage("corrupt", [&] {
    for (const auto& spec : miss) g = synth::apply_missingness(g, spec);
  });
  m.stage("write", [&] {
    write_grid(g.grid, out, "grid");
    write_truth(g.grid, g.truth, out / "truth.csv");
    write_observed_percent(g.grid, out / "observed_percent.csv");
  });
  for (const char* f : {"grid.json", "grid.csv", "truth.csv", "observed_percent.csv"}) m.add_output(out / f);
  m.write(out);
}

struct IngestOptions {
  std::filesystem::path data;
  std::filesystem::path schema;
  std::filesystem::path cohort;
  std::filesystem::path features;
  std::filesystem::path out;
  int bin_width_minutes = kDefaultBinWidthMinutes;
};

inline void cmd_ingest(const IngestOptions& o) {
  RunManifest m("ingest");
  const auto schema_json = read_json_file(o.schema);
  const auto cohort_json = read_json_file(o.cohort);
  ingest::SchemaMap schema;
  ingest::CohortCriteria criteria;
  try {
    schema = ingest::schema_from_json(schema_json);
    criteria = ingest::cohort_from_json(cohort_json);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema/cohort config: ") + e.what());
  }
  const auto dict = load_feature_dictionary(o.features);
  m.set_config({{"schema", schema_json},
                {"cohort", cohort_json},
                {"features", read_json_file(o.features)},
                {"bin_width_minutes", o.bin_width_minutes}});
  for (const auto& p : {o.schema, o.cohort, o.features}) m.add_input(p);
  if (std::filesystem::is_directory(o.data))
    for (const auto& e : std::filesystem::directory_iterator(o.data))
      if (e.path().extension() == ".csv") m.add_input(e.path());

  const auto out = resolve_out(o.out);
  const auto r = m.stage("ingest", [&] { return ingest::ingest_directory(o.data, schema, dict, criteria, o.bin_width_minutes); });
  m.stage("write", [&] {
    write_grid(r.grid, out, "grid");
    write_observed_percent(r.grid, out / "observed_percent.csv");
    detail::write_text(out / "ingest_report.json", ingest::to_json(r).dump(2) + "\n");
  });
  for (const char* f : {"grid.json", "grid.csv", "observed_percent.csv", "ingest_report.json"}) m.add_output(out / f);
  m.write(out);
}

struct ExperimentOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::vector<std::string> imputers;
  std::vector<std::string> models;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

/// Applies the --imputers / --models subsets. Imputers named in the config
/// keep their settings; others take the defaults.
inline void restrict_experiment(eval::ExperimentConfig& cfg, const std::vector<std::string>& imputers,
                                const std::vector<std::string>& models) {
  if (!imputers.empty()) {
    std::vector<impute::ImputerSpec> sel;
    for (const auto& name : imputers) {
      const auto method = impute::method_from_string(name);
      auto it = std::find_if(cfg.imputers.begin(), cfg.imputers.end(), [&](const auto& s) { return s.method == method; });
      impute::ImputerSpec s;
      if (it != cfg.imputers.end()) s = *it;
      s.method = method;
      sel.push_back(s);
    }
    cfg.imputers = std::move(sel);
  }
  if (!models.empty()) {
    cfg.models.clear();
    for (const auto& name : models) cfg.models.push_back(eval::model_from_string(name));
  }
  cfg.validate();
}

inline eval::ExperimentResult cmd_experiment(const ExperimentOptions& o) {
  if (o.jobs < 1) throw ConfigError("--jobs must be >= 1");
  RunManifest m("experiment");
  auto j = read_json_file(o.config);
  m.add_input(o.config);
  eval::ExperimentConfig cfg;
  try {
    cfg = eval::experiment_from_json(j, o.config.parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(o.config.string() + ": " + e.what());
  }
  restrict_experiment(cfg, o.imputers, o.models);
  if (o.seed) eval::apply_seed(cfg, *o.seed);
  nlohmann::json effective = j;
  effective["imputers"] = nlohmann::json::array();
  for (const auto& s : cfg.imputers) effective["imputers"].push_back(impute::to_json(s));
  effective["models"] = nlohmann::json::array();
  for (auto k : cfg.models) effective["models"].push_back(std::string(eval::to_string(k)));
  if (o.seed) effective["seed_override"] = *o.seed;
  m.set_config(effective);
  m.add_seed("experiment", cfg.seed);
  if (cfg.data.synth) {
    m.add_seed("synth", cfg.data.synth->rng_seed);
    for (std::size_t i = 0; i < cfg.data.missingness.size(); ++i)
      m.add_seed("missingness_" + std::to_string(i), cfg.data.missingness[i].seed);
  } else {
    m.add_input(cfg.data.grid_dir / (cfg.data.grid_name + ".json"));
    m.add_input(cfg.data.grid_dir / (cfg.data.grid_name + ".csv"));
  }

  const auto out = resolve_out(o.out);
  const auto grid = m.stage("load", [&] { return eval::load_experiment_grid(cfg); });
  const std::size_t total = cfg.imputers.size() * static_cast<std::size_t>(cfg.folds);
  std::atomic<std::size_t> done{0};
  eval::ProgressFn progress;
  if (!o.quiet)
    progress = [&](const std::string& imputer, int fold, double seconds) {
      std::ostringstream s;
      s << imputer << " fold " << fold + 1 << " done in " << std::fixed << std::setprecision(1) << seconds << " s (" << ++done
        << "/" << total << ")";
      log(LogLevel::Info, "experiment", s.str());
    };
  auto result = m.stage("run", [&] { return eval::run_experiment(cfg, grid, o.jobs, progress); });
  m.stage("write", [&] { eval::write_results(result, out); });
  for (const char* f : {"results.csv", "folds.csv", "predictions.csv"}) m.add_output(out / f);
  m.write(out);
  return result;
}

struct ReportOptions {
  std::filesystem::path results;
  std::filesystem::path out;  // defaults to <results>/report
};

inline void cmd_report(const ReportOptions& o) {
  RunManifest m("report");
  const auto in = resolve_out(o.results);
  const auto table = m.stage("read", [&] { return eval::read_results(in); });
  const auto out = o.out.empty() ? in / "report" : resolve_out(o.out);
  m.set_config({{"results", in.string()}});
  m.add_input(in / "folds.csv");
  m.stage("render", [&] { eval::write_report(table, out); });
  for (const auto& c : table.cells)
    if (!c.ok()) warn("report", c.imputer + " + " + c.model + " has no complete result");
  m.add_output(out / "report.md");
  m.add_output(out / "plot.csv");
  m.write(out);
}

struct ImputeFitOptions {
  std::string method;
  std::filesystem::path spec;  // optional JSON with imputer settings
  std::filesystem::path grid;
  std::string grid_name = "grid";
  std::filesystem::path out;
  int threads = 1;
};

inline void cmd_impute_fit(const ImputeFitOptions& o) {
  RunManifest m("impute fit");
  impute::ImputerSpec spec;
  nlohmann::json sj = nlohmann::json::object();
  if (!o.spec.empty()) {
    sj = read_json_file(o.spec);
    m.add_input(o.spec);
    spec = impute::spec_from_json(sj, spec);
  }
  if (!o.method.empty()) spec.method = impute::method_from_string(o.method);
  else if (o.spec.empty()) throw ConfigError("impute fit: give --method or --spec");
  spec.validate();
  m.set_config(impute::to_json(spec));
  m.add_seed("imputer", spec.seed);
  m.add_input(o.grid / (o.grid_name + ".json"));
  m.add_input(o.grid / (o.grid_name + ".csv"));
  const auto grid = m.stage("load", [&] { return read_grid(o.grid, o.grid_name); });
  const auto imp = m.stage("fit", [&] { return impute::fit(spec, grid, o.threads); });
  const auto out = resolve_out(o.out);
  std::filesystem::create_directories(out);
  impute::save_imputer(imp, out / "imputer.json");
  m.add_output(out / "imputer.json");
  m.write(out);
}

struct ImputeTransformOptions {
  std::filesystem::path state;
  std::filesystem::path grid;
  std::string grid_name = "grid";
  std::filesystem::path out;
};

inline void cmd_impute_transform(const ImputeTransformOptions& o) {
  RunManifest m("impute transform");
  m.add_input(o.state);
  m.add_input(o.grid / (o.grid_name + ".json"));
  m.add_input(o.grid / (o.grid_name + ".csv"));
  const auto imp = impute::load_imputer(o.state);
  m.set_config(imp.to_json().at("spec"));
  const auto grid = m.stage("load", [&] { return read_grid(o.grid, o.grid_name); });
  const auto done = m.stage("transform", [&] { return impute::transform(imp, grid); });
  const auto out = resolve_out(o.out);
  write_grid(done, out, "grid");
  m.add_output(out / "grid.json");
  m.add_output(out / "grid.csv");
  m.write(out);
}

// ---------------------------------------------------------------------------
// Entry point

inline void install_log_sink(bool json_lines, bool verbose) {
  set_log_sink([json_lines, verbose](LogLevel level, std::string_view component, std::string_view message) {
    if (level == LogLevel::Debug && !verbose) return;
    if (json_lines)
      std::cerr << nlohmann::json{{"level", to_string(level)}, {"component", component}, {"message", message}}.dump() << '\n';
    else
      std::cerr << "[" << to_string(level) << "] " << component << ": " << message << '\n';
  });
}

inline constexpr const char* kFooter =
    "Environment:\n"
    "  LACTATE_OUT_ROOT  base directory for relative --out paths\n"
    "  LACTATE_JOBS      default for experiment --jobs\n"
    "Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.";

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Blood lactate forecasting pipeline: synthetic cohorts, eICU ingest, imputation, models, evaluation."};
  app.footer(kFooter);
  app.require_subcommand(1);
  bool log_json = false, verbose = false;
  app.add_flag("--log-json", log_json, "Log to stderr as JSON lines");
  app.add_flag("-v,--verbose", verbose, "Include debug messages");

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort with ground truth");
  synth->add_option("-c,--config", so.config, "Synth config JSON")->required();
  synth->add_option("-o,--out", so.out, "Output directory")->required();
  synth->add_option("--seed", so.seed, "Override every seed in the config");

  IngestOptions io;
  io.schema = "config/schema_eicu.json";
  io.cohort = "config/cohort.json";
  io.features = "config/features.json";
  auto* ing = app.add_subcommand("ingest", "Build a grid from eICU-shaped CSV extracts");
  ing->add_option("-d,--data", io.data, "Directory of source CSVs")->required();
  ing->add_option("--schema", io.schema, "Schema map JSON")->capture_default_str();
  ing->add_option("--cohort", io.cohort, "Cohort criteria JSON")->capture_default_str();
  ing->add_option("--features", io.features, "Feature dictionary JSON")->capture_default_str();
  ing->add_option("--bin-width", io.bin_width_minutes, "Bin width in minutes")->capture_default_str();
  ing->add_option("-o,--out", io.out, "Output directory")->required();

  ExperimentOptions eo;
  std::string imputers, models;
  std::optional<int> jobs;
  auto* exp = app.add_subcommand("experiment", "Cross-validated imputer x model grid");
  exp->add_option("-c,--config", eo.config, "Experiment config JSON")->required();
  exp->add_option("-o,--out", eo.out, "Output directory")->required();
  exp->add_option("--imputers", imputers, "Comma-separated subset of imputers");
  exp->add_option("--models", models, "Comma-separated subset of models (LR, RF, LSTM)");
  exp->add_option("-j,--jobs", jobs, "Worker threads (default $LACTATE_JOBS or 1); results do not depend on it");
  exp->add_option("--seed", eo.seed, "Override the experiment seed");
  exp->add_flag("-q,--quiet", eo.quiet, "No progress messages");

  ReportOptions ro;
  auto* rep = app.add_subcommand("report", "Markdown table and plot CSV from experiment results");
  rep->add_option("-r,--results", ro.results, "Experiment output directory")->required();
  rep->add_option("-o,--out", ro.out, "Report directory (default <results>/report)");

  auto* imp = app.add_subcommand("impute", "Standalone imputer fit / transform");
  imp->require_subcommand(1);
  ImputeFitOptions fo;
  auto* fit = imp->add_subcommand("fit", "Fit an imputer on a grid and save its state");
  fit->add_option("-m,--method", fo.method, "Imputer name");
  fit->add_option("--spec", fo.spec, "Imputer settings JSON");
  fit->add_option("-g,--grid", fo.grid, "Grid directory")->required();
  fit->add_option("--grid-name", fo.grid_name)->capture_default_str();
  fit->add_option("-t,--threads", fo.threads, "Threads (MissForest)")->capture_default_str();
  fit->add_option("-o,--out", fo.out, "Output directory")->required();
  ImputeTransformOptions to;
  auto* tr = imp->add_subcommand("transform", "Complete a grid with a saved imputer");
  tr->add_option("-s,--state", to.state, "Imputer state JSON")->required();
  tr->add_option("-g,--grid", to.grid, "Grid directory")->required();
  tr->add_option("--grid-name", to.grid_name)->capture_default_str();
  tr->add_option("-o,--out", to.out, "Output directory")->required();

  auto* ver = app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsageError;
  }
  install_log_sink(log_json, verbose);

  try {
    if (*ver) {
      std::cout << "lactate " << kVersion << '\n';
    } else if (*synth) {
      cmd_synth(so);
    } else if (*ing) {
      cmd_ingest(io);
    } else if (*exp) {
      eo.imputers = split_list(imputers);
      eo.models = split_list(models);
      eo.jobs = jobs ? *jobs : default_jobs();
      const auto r = cmd_experiment(eo);
      std::size_t failed = 0;
      for (const auto& c : r.table.cells) failed += !c.ok();
      if (failed) warn("experiment", std::to_string(failed) + " cell(s) failed; see folds.csv");
    } else if (*rep) {
      cmd_report(ro);
    } else if (*fit) {
      cmd_impute_fit(fo);
    } else if (*tr) {
      cmd_impute_transform(to);
    }
  } catch (const ConfigError& e) {
    log(LogLevel::Error, "config", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    log(LogLevel::Error, "runtime", e.what());
    return kRuntimeFailure;
  }
  return kOk;
}

}  // namespace lactate::cli
