#pragma once

#include <cctype>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "lactate/datamodel.hpp"
#include "lactate/errors.hpp"

namespace lactate::impute {

enum class Method { Mean, Median, GroupMean, FeedForward, IndicatorMean, PPCA, MF, SoftImpute, KNN, MissForest, MICE, AE };

inline constexpr std::array<Method, 12> kAllMethods = {
    Method::Mean, Method::Median, Method::GroupMean, Method::FeedForward, Method::IndicatorMean, Method::PPCA,
    Method::MF,   Method::SoftImpute, Method::KNN,   Method::MissForest,  Method::MICE,          Method::AE};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::Mean: return "mean";
    case Method::Median: return "median";
    case Method::GroupMean: return "group_mean";
    case Method::FeedForward: return "feed_forward";
    case Method::IndicatorMean: return "indicator";
    case Method::PPCA: return "ppca";
    case Method::MF: return "mf";
    case Method::SoftImpute: return "soft_impute";
    case Method::KNN: return "knn";
    case Method::MissForest: return "missforest";
    case Method::MICE: return "mice";
    case Method::AE: return "ae";
  }
  return "?";
}

inline std::string legal_method_names() {
  std::string out;
  for (auto m : kAllMethods) {
    if (!out.empty()) out += ", ";
    out += to_string(m);
  }
  return out;
}

/// Case-, underscore- and hyphen-insensitive: "SoftImpute" == "soft_impute".
inline Method method_from_string(std::string_view s) {
  auto squash = [](std::string_view x) {
    std::string out;
    for (char c : x)
      if (c != '_' && c != '-') out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  };
  for (auto m : kAllMethods)
    if (squash(to_string(m)) == squash(s)) return m;
  throw ConfigError("unknown imputer '" + std::string(s) + "'; legal names: " + legal_method_names());
}

/// Hyperparameters for every method; each method reads only its own block.
struct ImputerSpec {
  Method method = Method::Mean;
  std::uint64_t seed = 0;

  std::string group_feature = std::string(kLactate);  // GroupMean

  int ppca_components = 10;
  double ppca_tolerance = 1e-5;
  int ppca_max_iter = 200;

  int mf_rank = 10;
  double mf_ridge = 1e-2;
  int mf_sweeps = 100;

  int soft_steps = 10;
  double soft_min_ratio = 1e-3;  // last lambda = lambda_max * ratio
  double soft_tolerance = 1e-4;
  int soft_max_iter = 100;  // per lambda
  int soft_max_rank = 0;    // 0 = unbounded

  int knn_k = 5;

  int mice_chains = 5;
  int mice_rounds = 10;
  double mice_ridge = 1.0;

  int forest_max_iter = 10;
  int forest_trees = 50;
  int forest_min_samples_leaf = 5;
  double forest_max_features = 1.0 / 3.0;
  std::size_t forest_max_samples = 0;

  int ae_epochs = 50;
  int ae_batch_size = 64;
  double ae_learning_rate = 1e-3;
  double ae_input_dropout = 0.1;

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("imputer: " + what);
    };
    need(ppca_components >= 1, "ppca_components must be >= 1");
    need(ppca_tolerance > 0 && ppca_max_iter >= 1, "invalid ppca tolerance/max_iter");
    need(mf_rank >= 1 && mf_ridge >= 0 && mf_sweeps >= 1, "invalid mf rank/ridge/sweeps");
    need(soft_steps >= 1 && soft_min_ratio > 0 && soft_min_ratio <= 1, "invalid soft_impute path");
    need(soft_tolerance > 0 && soft_max_iter >= 1 && soft_max_rank >= 0, "invalid soft_impute tolerance/max_iter/max_rank");
    need(knn_k >= 1, "knn_k must be >= 1");
    need(mice_chains >= 1 && mice_rounds >= 1 && mice_ridge >= 0, "invalid mice chains/rounds/ridge");
    need(forest_max_iter >= 1 && forest_trees >= 1 && forest_min_samples_leaf >= 1, "invalid missforest settings");
    need(forest_max_features > 0 && forest_max_features <= 1, "forest_max_features must lie in (0, 1]");
    need(ae_epochs >= 0 && ae_batch_size >= 1 && ae_learning_rate > 0, "invalid ae epochs/batch/learning rate");
    need(ae_input_dropout >= 0 && ae_input_dropout < 1, "ae_input_dropout must lie in [0, 1)");
  }
};

#define LACTATE_SPEC_FIELDS(X)                                                                                     \
  X(seed) X(group_feature) X(ppca_components) X(ppca_tolerance) X(ppca_max_iter) X(mf_rank) X(mf_ridge)            \
  X(mf_sweeps) X(soft_steps) X(soft_min_ratio) X(soft_tolerance) X(soft_max_iter)               \
  X(soft_max_rank) X(knn_k) X(mice_chains) X(mice_rounds) X(mice_ridge) X(forest_max_iter) X(forest_trees)         \
  X(forest_min_samples_leaf) X(forest_max_features) X(forest_max_samples) X(ae_epochs) X(ae_batch_size)            \
  X(ae_learning_rate) X(ae_input_dropout)

inline nlohmann::json to_json(const ImputerSpec& s) {
  nlohmann::json j;
  j["method"] = std::string(to_string(s.method));
#define X(f) j[#f] = s.f;
  LACTATE_SPEC_FIELDS(X)
#undef X
  return j;
}

/// Reads a spec; `base` supplies values for absent keys. Unknown keys are errors.
inline ImputerSpec spec_from_json(const nlohmann::json& j, ImputerSpec base = {}) {
  if (j.is_string()) {
    base.method = method_from_string(j.get<std::string>());
    return base;
  }
  if (!j.is_object()) throw ConfigError("imputer spec must be a name or an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "method") {
        base.method = method_from_string(value.get<std::string>());
        continue;
      }
      bool known = false;
#define X(f)                              \
  if (key == #f) {                        \
    base.f = value.get<decltype(base.f)>(); \
    known = true;                         \
  }
      LACTATE_SPEC_FIELDS(X)
#undef X
      if (!known) throw ConfigError("imputer spec: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("imputer spec: ") + e.what());
  }
  base.validate();
  return base;
}

#undef LACTATE_SPEC_FIELDS

// ---------------------------------------------------------------------------
// Flattened (stay x bin) row space: one row per stay-bin, one column per feature.

inline Matrix flatten_values(const AlignedGrid& grid) {
  Matrix x(static_cast<Eigen::Index>(grid.total_bins()), grid.n_features());
  Eigen::Index r = 0;
  for (const auto& d : grid.data) {
    x.middleRows(r, d.n_bins()) = d.values.transpose();
    r += d.n_bins();
  }
  return x;
}

inline MaskMatrix flatten_mask(const AlignedGrid& grid) {
  MaskMatrix m(static_cast<Eigen::Index>(grid.total_bins()), grid.n_features());
  Eigen::Index r = 0;
  for (const auto& d : grid.data) {
    m.middleRows(r, d.n_bins()) = d.mask.transpose();
    r += d.n_bins();
  }
  return m;
}

inline std::vector<Matrix> unflatten(const Matrix& rows, const AlignedGrid& shape) {
  std::vector<Matrix> out;
  out.reserve(shape.data.size());
  Eigen::Index r = 0;
  for (const auto& d : shape.data) {
    out.emplace_back(rows.middleRows(r, d.n_bins()).transpose());
    r += d.n_bins();
  }
  return out;
}

/// Mean and standard deviation of each column over its observed entries.
/// Columns without observations get (0, 1) and a warning.
struct ObservedScaler {
  Vector mean;
  Vector sd;

  static ObservedScaler fit(const Matrix& x, const MaskMatrix& m, std::string_view who) {
    ObservedScaler s;
    s.mean = Vector::Zero(x.cols());
    s.sd = Vector::Ones(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double sum = 0, n = 0;
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (m(i, j)) {
          sum += x(i, j);
          n += 1;
        }
      if (n == 0) {
        warn(who, "feature " + std::to_string(j) + " has no observed training entries; using 0.0");
        continue;
      }
      s.mean(j) = sum / n;
      double sq = 0;
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (m(i, j)) sq += (x(i, j) - s.mean(j)) * (x(i, j) - s.mean(j));
      const double sd = std::sqrt(sq / n);
      if (sd > 1e-12 * std::max(1.0, std::abs(s.mean(j)))) s.sd(j) = sd;
    }
    return s;
  }

  /// Standardized copy; missing entries stay NaN.
  Matrix forward(const Matrix& x) const { return (x.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array(); }
  Matrix inverse(const Matrix& z) const { return (z.array().rowwise() * sd.transpose().array()).rowwise() + mean.transpose().array(); }
};

inline nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json mat_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Matrix json_mat(const nlohmann::json& j) {
  const auto v = j.at("data").get<std::vector<double>>();
  const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
  if (static_cast<std::size_t>(r * c) != v.size()) throw DataError("matrix state: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), r, c);
}

inline nlohmann::json scaler_json(const ObservedScaler& s) { return {{"mean", vec_json(s.mean)}, {"sd", vec_json(s.sd)}}; }

inline ObservedScaler json_scaler(const nlohmann::json& j) {
  return {json_vec(j.at("mean")), json_vec(j.at("sd"))};
}

}  // namespace lactate::impute
