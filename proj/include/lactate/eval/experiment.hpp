#pragma once

// Cross-validated imputer x model grid. Jobs are (imputer, fold) pairs; each
// job fits the imputer on the training stays, completes both splits, builds
// samples and fits every model. Results are keyed by job index, so the table
// does not depend on the number of worker threads.

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <thread>

#include "lactate/eval/metrics.hpp"
#include "lactate/eval/samples.hpp"
#include "lactate/grid_io.hpp"
#include "lactate/impute/imputer.hpp"
#include "lactate/models/forest.hpp"
#include "lactate/models/lasso.hpp"
#include "lactate/models/lstm.hpp"
#include "lactate/synth.hpp"

namespace lactate::eval {

enum class ModelKind { LR, RF, LSTM };
inline constexpr ModelKind kAllModels[] = {ModelKind::LR, ModelKind::RF, ModelKind::LSTM};

inline std::string_view to_string(ModelKind m) {
  switch (m) {
    case ModelKind::LR: return "LR";
    case ModelKind::RF: return "RF";
    case ModelKind::LSTM: return "LSTM";
  }
  return "?";
}

inline ModelKind model_from_string(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto m : kAllModels)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown model '" + s + "'; legal names: LR, RF, LSTM");
}

/// Stay: every sample of a stay lands in one fold and imputers are fitted on
/// training stays only. Sample: samples are split individually and imputers
/// see the whole grid (the looser protocol, kept for comparison).
enum class FoldUnit { Stay, Sample };

struct DataSource {
  std::filesystem::path grid_dir;  // ingested or generated grid
  std::string grid_name = "grid";
  std::optional<synth::SynthConfig> synth;
  std::vector<synth::MissingnessSpec> missingness;
};

struct ExperimentConfig {
  TaskParams task;
  std::vector<impute::ImputerSpec> imputers;
  std::vector<ModelKind> models;
  int folds = 5;
  std::uint64_t seed = 1;
  int max_window_bins = 0;  // 0 = full history
  models::LassoParams lasso;
  models::ForestParams forest;
  models::LstmParams lstm;
  bool standardize_all = false;  // also standardize LR/RF inputs
  bool lstm_statics = true;      // append encoded statics to every LSTM step
  FoldUnit fold_unit = FoldUnit::Stay;
  DataSource data;

  void validate() const {
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (imputers.empty()) throw ConfigError("imputer list is empty");
    if (models.empty()) throw ConfigError("model list is empty");
    if (max_window_bins < 0) throw ConfigError("max_window_bins must be >= 0");
    for (std::size_t a = 0; a < imputers.size(); ++a)
      for (std::size_t b = a + 1; b < imputers.size(); ++b)
        if (imputers[a].method == imputers[b].method)
          throw ConfigError("imputer '" + std::string(impute::to_string(imputers[a].method)) + "' listed twice");
    for (std::size_t a = 0; a < models.size(); ++a)
      for (std::size_t b = a + 1; b < models.size(); ++b)
        if (models[a] == models[b]) throw ConfigError("model '" + std::string(to_string(models[a])) + "' listed twice");
    for (const auto& s : imputers) s.validate();
    lasso.validate();
    forest.validate();
    lstm.validate();
  }
};

// ---------------------------------------------------------------------------
// Config JSON. Unknown keys are rejected with their path.

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& path, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError(path + "." + k + ": unknown key");
}

template <typename T>
void read(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline models::LassoParams lasso_from_json(const nlohmann::json& j, models::LassoParams p = {}) {
  detail::check_keys(j, "lasso",
                     {"l1_penalty", "max_sweeps", "tolerance", "fit_intercept", "penalty_grid", "validation_fraction"});
  detail::read(j, "lasso", "l1_penalty", p.l1_penalty);
  detail::read(j, "lasso", "max_sweeps", p.max_sweeps);
  detail::read(j, "lasso", "tolerance", p.tolerance);
  detail::read(j, "lasso", "fit_intercept", p.fit_intercept);
  detail::read(j, "lasso", "penalty_grid", p.penalty_grid);
  detail::read(j, "lasso", "validation_fraction", p.validation_fraction);
  p.validate();
  return p;
}

inline models::ForestParams forest_from_json(const nlohmann::json& j, models::ForestParams p = {}) {
  detail::check_keys(j, "forest",
                     {"n_trees", "max_depth", "min_samples_leaf", "max_features", "bootstrap", "max_samples", "n_threads"});
  detail::read(j, "forest", "n_trees", p.n_trees);
  detail::read(j, "forest", "max_depth", p.max_depth);
  detail::read(j, "forest", "min_samples_leaf", p.min_samples_leaf);
  detail::read(j, "forest", "max_features", p.max_features);
  detail::read(j, "forest", "bootstrap", p.bootstrap);
  detail::read(j, "forest", "max_samples", p.max_samples);
  detail::read(j, "forest", "n_threads", p.n_threads);
  p.validate();
  return p;
}

inline models::LstmParams lstm_from_json(const nlohmann::json& j, models::LstmParams p = {}) {
  detail::check_keys(j, "lstm", {"layers", "hidden_units", "dropout", "learning_rate", "epochs", "batch_size",
                                 "single_precision", "standardize_target"});
  detail::read(j, "lstm", "layers", p.layers);
  detail::read(j, "lstm", "hidden_units", p.hidden_units);
  detail::read(j, "lstm", "dropout", p.dropout);
  detail::read(j, "lstm", "learning_rate", p.learning_rate);
  detail::read(j, "lstm", "epochs", p.epochs);
  detail::read(j, "lstm", "batch_size", p.batch_size);
  detail::read(j, "lstm", "single_precision", p.single_precision);
  detail::read(j, "lstm", "standardize_target", p.standardize_target);
  p.validate();
  return p;
}

/// Relative grid paths resolve against `base_dir` (the config file's directory).
inline ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  detail::check_keys(j, "experiment",
                     {"task", "imputers", "imputer_defaults", "models", "folds", "seed", "max_window_bins", "lasso", "forest",
                      "lstm", "standardize_all", "lstm_statics", "fold_unit", "data"});
  ExperimentConfig c;
  if (j.contains("task")) {
    detail::check_keys(j.at("task"), "experiment.task", {"alpha_minutes", "beta_minutes"});
    detail::read(j.at("task"), "experiment.task", "alpha_minutes", c.task.alpha_minutes);
    detail::read(j.at("task"), "experiment.task", "beta_minutes", c.task.beta_minutes);
  }
  detail::read(j, "experiment", "folds", c.folds);
  detail::read(j, "experiment", "seed", c.seed);
  detail::read(j, "experiment", "max_window_bins", c.max_window_bins);
  detail::read(j, "experiment", "standardize_all", c.standardize_all);
  detail::read(j, "experiment", "lstm_statics", c.lstm_statics);
  if (j.contains("fold_unit")) {
    const auto u = j.at("fold_unit").is_string() ? j.at("fold_unit").get<std::string>() : std::string();
    if (u == "stay") c.fold_unit = FoldUnit::Stay;
    else if (u == "sample") c.fold_unit = FoldUnit::Sample;
    else throw ConfigError("experiment.fold_unit: expected \"stay\" or \"sample\"");
  }
  impute::ImputerSpec base;
  if (j.contains("imputer_defaults")) base = impute::spec_from_json(j.at("imputer_defaults"), base);
  if (j.contains("imputers")) {
    for (const auto& s : j.at("imputers")) c.imputers.push_back(impute::spec_from_json(s, base));
  } else {
    for (auto m : impute::kAllMethods) {
      auto s = base;
      s.method = m;
      c.imputers.push_back(s);
    }
  }
  if (j.contains("models")) {
    for (const auto& m : j.at("models")) c.models.push_back(model_from_string(m.get<std::string>()));
  } else {
    c.models.assign(std::begin(kAllModels), std::end(kAllModels));
  }
  if (j.contains("lasso")) c.lasso = lasso_from_json(j.at("lasso"));
  if (j.contains("forest")) c.forest = forest_from_json(j.at("forest"));
  if (j.contains("lstm")) c.lstm = lstm_from_json(j.at("lstm"));
  if (!j.contains("data")) throw ConfigError("experiment.data: missing (need \"grid\" or \"synth\")");
  const auto& d = j.at("data");
  detail::check_keys(d, "experiment.data", {"grid", "grid_name", "synth", "missingness"});
  if (d.contains("grid") == d.contains("synth")) throw ConfigError("experiment.data: give exactly one of \"grid\" and \"synth\"");
  if (d.contains("grid")) {
    std::filesystem::path p = d.at("grid").get<std::string>();
    c.data.grid_dir = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    detail::read(d, "experiment.data", "grid_name", c.data.grid_name);
  } else {
    try {
      c.data.synth = synth::synth_config_from_json(d.at("synth"));
      if (d.contains("missingness"))
        for (const auto& m : d.at("missingness")) c.data.missingness.push_back(synth::missingness_from_json(m));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("experiment.data: ") + e.what());
    }
  }
  c.validate();
  return c;
}

/// Re-seeds the whole experiment: fold/model/imputer streams and, for
/// synthetic data, the cohort and every missingness mechanism.
inline void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  if (c.data.synth) {
    c.data.synth->rng_seed = derive_seed(seed, 0x5359);
    for (std::size_t i = 0; i < c.data.missingness.size(); ++i) c.data.missingness[i].seed = derive_seed(seed, 0x4d53, i);
  }
}

/// The (pre-imputation) grid the experiment runs on.
inline AlignedGrid load_experiment_grid(const ExperimentConfig& c) {
  if (c.data.synth) {
    synth::CorruptedGrid g{synth::generate_cohort(*c.data.synth), {}};
    for (const auto& d : g.grid.data) g.truth.push_back(d.values);
    for (const auto& m : c.data.missingness) g = synth::apply_missingness(g, m);
    return std::move(g.grid);
  }
  return read_grid(c.data.grid_dir, c.data.grid_name);
}

// ---------------------------------------------------------------------------
// Results

struct FoldScore {
  bool ok = false;
  std::string error;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double mae = kMissing, rmse = kMissing, r2 = kMissing;

  double get(Metric m) const { return m == Metric::MAE ? mae : m == Metric::RMSE ? rmse : r2; }
};

struct Cell {
  std::string imputer;
  std::string model;
  std::vector<FoldScore> folds;

  bool ok() const {
    return !folds.empty() && std::all_of(folds.begin(), folds.end(), [](const FoldScore& f) { return f.ok; });
  }
  std::string failure() const {
    for (std::size_t k = 0; k < folds.size(); ++k)
      if (!folds[k].ok) return "fold " + std::to_string(k + 1) + ": " + folds[k].error;
    return {};
  }
  double mean(Metric m) const {
    double s = 0;
    for (const auto& f : folds) s += f.get(m);
    return s / static_cast<double>(folds.size());
  }
  /// Population standard deviation over the folds.
  double std(Metric m) const {
    const double mu = mean(m);
    double s = 0;
    for (const auto& f : folds) s += (f.get(m) - mu) * (f.get(m) - mu);
    return std::sqrt(s / static_cast<double>(folds.size()));
  }
};

struct ResultTable {
  std::vector<std::string> imputers;
  std::vector<std::string> models;
  std::vector<Cell> cells;  // imputer-major

  const Cell& at(std::size_t imputer, std::size_t model) const { return cells.at(imputer * models.size() + model); }
  const Cell* find(std::string_view imputer, std::string_view model) const {
    for (const auto& c : cells)
      if (c.imputer == imputer && c.model == model) return &c;
    return nullptr;
  }
};

struct PredictionRow {
  std::string imputer;
  std::string model;
  int fold = 0;
  std::string stay_id;
  int t_index = 0;
  double y_true = 0;
  double y_pred = 0;
};

struct ExperimentResult {
  ResultTable table;
  std::vector<PredictionRow> predictions;
  std::size_t n_stays = 0;
  std::size_t n_samples = 0;
};

// ---------------------------------------------------------------------------
// One job

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

inline Matrix encode_statics(const models::StaticEncoder& enc, const AlignedGrid& grid, const std::vector<Sample>& samples) {
  Matrix out(static_cast<Eigen::Index>(samples.size()), enc.width());
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = enc.encode(grid.stays[samples[i].stay].statics).transpose();
  return out;
}

inline std::vector<double> targets(const std::vector<Sample>& s) {
  std::vector<double> y;
  y.reserve(s.size());
  for (const auto& x : s) y.push_back(x.target);
  return y;
}

struct FoldData {
  AlignedGrid train_grid, test_grid;
  std::vector<Sample> train, test;
  Matrix train_statics, test_statics;
  int window = 1;
};

inline std::vector<double> run_model(ModelKind kind, const ExperimentConfig& cfg, const FoldData& fd, std::uint64_t seed) {
  const std::vector<double> y_train = targets(fd.train);
  if (kind == ModelKind::LSTM) {
    const auto st = models::standardize_fit(fd.train);
    const auto sc = models::ColumnScaler::fit(fd.train_statics);
    auto seqs = [&](const std::vector<Sample>& samples, const Matrix& statics) {
      std::vector<Matrix> out;
      out.reserve(samples.size());
      const Matrix s = sc.apply(statics);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const Matrix h = st.apply(samples[i].history);
        if (!cfg.lstm_statics) {
          out.push_back(h);
          continue;
        }
        Matrix x(h.rows() + s.cols(), h.cols());
        x.topRows(h.rows()) = h;
        x.bottomRows(s.cols()) = s.row(static_cast<Eigen::Index>(i)).transpose().replicate(1, h.cols());
        out.push_back(std::move(x));
      }
      return out;
    };
    auto p = cfg.lstm;
    p.rng_seed = seed;
    const auto net = models::lstm_fit(seqs(fd.train, fd.train_statics), y_train, p);
    return net.predict(seqs(fd.test, fd.test_statics));
  }

  auto design = [&](const std::vector<Sample>& samples, const Matrix& statics) {
    const Matrix flat = models::pad_and_flatten(samples, fd.window);
    Matrix x(flat.rows(), flat.cols() + statics.cols());
    x << flat, statics;
    return x;
  };
  Matrix x_train = design(fd.train, fd.train_statics), x_test = design(fd.test, fd.test_statics);
  if (cfg.standardize_all || kind == ModelKind::LR) {
    // The lasso penalty is applied on standardized columns.
    const auto sc = models::ColumnScaler::fit(x_train);
    x_train = sc.apply(x_train);
    x_test = sc.apply(x_test);
  }
  const Vector y = Eigen::Map<const Vector>(y_train.data(), static_cast<Eigen::Index>(y_train.size()));
  Vector pred;
  if (kind == ModelKind::LR) {
    auto p = cfg.lasso;
    if (!p.penalty_grid.empty()) {
      // hold out whole stays
      std::vector<bool> holdout(fd.train.size());
      for (std::size_t i = 0; i < holdout.size(); ++i)
        holdout[i] = static_cast<double>(derive_seed(seed, fd.train[i].stay) >> 11) * 0x1.0p-53 < p.validation_fraction;
      p.l1_penalty = models::lasso_select_penalty(x_train, y, holdout, p);
    }
    pred = models::lasso_fit(x_train, y, p).predict(x_test);
  } else {
    auto p = cfg.forest;
    p.rng_seed = seed;
    p.n_threads = 1;
    pred = models::forest_fit(x_train, y, p).predict(x_test);
  }
  return {pred.data(), pred.data() + pred.size()};
}

}  // namespace detail

using ProgressFn = std::function<void(const std::string& imputer, int fold, double seconds)>;

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const AlignedGrid& grid, int jobs = 1,
                                       const ProgressFn& progress = {}) {
  cfg.validate();
  cfg.task.validate(grid.bin_width_minutes);
  if (!grid.feature_index(kLactate)) throw ConfigError("experiment: grid has no 'lactate' feature");
  const bool by_sample = cfg.fold_unit == FoldUnit::Sample;

  int window = cfg.max_window_bins;
  std::size_t n_samples = 0;
  {
    const auto all = build_samples(grid, cfg.task, cfg.max_window_bins);
    n_samples = all.samples.size();
    if (window == 0)
      for (const auto& s : all.samples) window = std::max(window, static_cast<int>(s.history.cols()));
    window = std::max(window, 1);
  }
  const auto folds = kfold(by_sample ? n_samples : grid.n_stays(), cfg.folds, derive_seed(cfg.seed, 1));

  const std::size_t n_imp = cfg.imputers.size(), n_mod = cfg.models.size();
  const std::size_t n_jobs = n_imp * static_cast<std::size_t>(cfg.folds);
  struct JobOut {
    std::vector<FoldScore> scores;  // per model
    std::vector<std::vector<PredictionRow>> preds;
  };
  std::vector<JobOut> out(n_jobs);

  auto run_job = [&](std::size_t job) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t i = job / static_cast<std::size_t>(cfg.folds);
    const int k = static_cast<int>(job % static_cast<std::size_t>(cfg.folds));
    const auto& spec0 = cfg.imputers[i];
    const std::string imp_name(impute::to_string(spec0.method));
    JobOut& res = out[job];
    res.scores.assign(n_mod, {});
    res.preds.assign(n_mod, {});
    detail::FoldData fd;
    try {
      auto spec = spec0;
      spec.seed = derive_seed(derive_seed(cfg.seed, 2), detail::fnv1a(imp_name) ^ spec0.seed, static_cast<std::uint64_t>(k));
      if (by_sample) {
        fd.train_grid = impute::transform(impute::fit(spec, grid), grid);
        fd.test_grid = fd.train_grid;
        auto all = build_samples(fd.train_grid, cfg.task, cfg.max_window_bins).samples;
        for (std::size_t q = 0; q < all.size(); ++q) (folds.fold[q] == k ? fd.test : fd.train).push_back(std::move(all[q]));
      } else {
        fd.train_grid = grid.subset(folds.members(k, false));
        fd.test_grid = grid.subset(folds.members(k, true));
        const auto imp = impute::fit(spec, fd.train_grid);
        fd.train_grid = impute::transform(imp, fd.train_grid);
        fd.test_grid = impute::transform(imp, fd.test_grid);
        fd.train = build_samples(fd.train_grid, cfg.task, cfg.max_window_bins).samples;
        fd.test = build_samples(fd.test_grid, cfg.task, cfg.max_window_bins).samples;
      }
      if (fd.train.size() < 2 || fd.test.empty()) throw std::runtime_error("too few samples in fold");
      std::vector<const StaticFeatures*> st;
      for (const auto& s : fd.train_grid.stays) st.push_back(&s.statics);
      const auto enc = models::StaticEncoder::fit(st);
      fd.train_statics = detail::encode_statics(enc, fd.train_grid, fd.train);
      fd.test_statics = detail::encode_statics(enc, fd.test_grid, fd.test);
      fd.window = window;
    } catch (const std::exception& e) {
      for (auto& s : res.scores) s.error = std::string("imputation: ") + e.what();
      return;
    }
    for (std::size_t m = 0; m < n_mod; ++m) {
      auto& score = res.scores[m];
      const auto kind = cfg.models[m];
      try {
        const auto seed = derive_seed(derive_seed(cfg.seed, 3), static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(k));
        const auto pred = detail::run_model(kind, cfg, fd, seed);
        const auto y = detail::targets(fd.test);
        score.mae = mae(y, pred);
        score.rmse = rmse(y, pred);
        score.r2 = r2(y, pred);
        score.n_train = fd.train.size();
        score.n_test = fd.test.size();
        score.ok = true;
        for (std::size_t q = 0; q < y.size(); ++q)
          res.preds[m].push_back({imp_name, std::string(to_string(kind)), k + 1, fd.test[q].stay_id, fd.test[q].t_index, y[q], pred[q]});
      } catch (const std::exception& e) {
        score.error = e.what();
      }
    }
    if (progress)
      progress(imp_name, k, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };

  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), n_jobs);
  if (threads <= 1) {
    for (std::size_t j = 0; j < n_jobs; ++j) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t j = next++; j < n_jobs; j = next++) run_job(j);
      });
    for (auto& th : pool) th.join();
  }

  ExperimentResult r;
  r.n_stays = grid.n_stays();
  r.n_samples = n_samples;
  for (const auto& s : cfg.imputers) r.table.imputers.emplace_back(impute::to_string(s.method));
  for (auto m : cfg.models) r.table.models.emplace_back(to_string(m));
  for (std::size_t i = 0; i < n_imp; ++i)
    for (std::size_t m = 0; m < n_mod; ++m) {
      Cell c{r.table.imputers[i], r.table.models[m], {}};
      for (int k = 0; k < cfg.folds; ++k) {
        const auto& job = out[i * static_cast<std::size_t>(cfg.folds) + static_cast<std::size_t>(k)];
        c.folds.push_back(job.scores[m]);
      }
      r.table.cells.push_back(std::move(c));
    }
  for (std::size_t i = 0; i < n_imp; ++i)
    for (std::size_t m = 0; m < n_mod; ++m)
      for (int k = 0; k < cfg.folds; ++k) {
        const auto& p = out[i * static_cast<std::size_t>(cfg.folds) + static_cast<std::size_t>(k)].preds[m];
        r.predictions.insert(r.predictions.end(), p.begin(), p.end());
      }
  return r;
}

}  // namespace lactate::eval
