#pragma once

#include <filesystem>
#include <fstream>
#include <memory>

#include "lactate/impute/autoencoder.hpp"
#include "lactate/impute/iterative.hpp"
#include "lactate/impute/knn.hpp"
#include "lactate/impute/matrix.hpp"
#include "lactate/impute/simple.hpp"

namespace lactate::impute {

inline constexpr int kStateFormatVersion = 1;
inline constexpr std::string_view kIndicatorSuffix = "__ind";

class FittedImputer {
 public:
  FittedImputer() = default;
  FittedImputer(ImputerSpec spec, std::vector<std::string> features, std::shared_ptr<const ImputerModel> model)
      : spec_(std::move(spec)), features_(std::move(features)), model_(std::move(model)) {}

  const ImputerSpec& spec() const { return spec_; }
  Method method() const { return spec_.method; }
  const std::vector<std::string>& features() const { return features_; }
  const ImputerModel& model() const { return *model_; }

  template <typename T>
  const T* model_as() const {
    return dynamic_cast<const T*>(model_.get());
  }

  nlohmann::json to_json() const {
    return {{"format_version", kStateFormatVersion},
            {"spec", impute::to_json(spec_)},
            {"features", features_},
            {"state", model_->state()}};
  }

 private:
  ImputerSpec spec_;
  std::vector<std::string> features_;
  std::shared_ptr<const ImputerModel> model_;
};

/// Learns imputer state from the observed entries of `train` only.
/// `n_threads` is used by methods with internal parallelism (MissForest);
/// it never changes results.
inline FittedImputer fit(const ImputerSpec& spec, const AlignedGrid& train, int n_threads = 1) {
  spec.validate();
  if (train.n_features() == 0) throw std::invalid_argument("imputer fit: grid has no features");
  std::shared_ptr<const ImputerModel> model;
  switch (spec.method) {
    case Method::Mean:
    case Method::IndicatorMean:
      model = std::make_shared<ConstantModel>(observed_means(train, "impute.mean"));
      break;
    case Method::Median:
      model = std::make_shared<ConstantModel>(observed_medians(train, "impute.median"));
      break;
    case Method::GroupMean:
      model = GroupMeanModel::fit(train, spec.group_feature);
      break;
    case Method::FeedForward:
      model = std::make_shared<FeedForwardModel>(observed_means(train, "impute.feed_forward"));
      break;
    case Method::PPCA:
      model = PpcaModel::fit(train, spec);
      break;
    case Method::MF:
      model = MfModel::fit(train, spec);
      break;
    case Method::SoftImpute:
      model = SoftImputeModel::fit(train, spec);
      break;
    case Method::KNN:
      model = KnnModel::fit(train, spec);
      break;
    case Method::MissForest:
      model = MissForestModel::fit(train, spec, n_threads);
      break;
    case Method::MICE:
      model = MiceModel::fit(train, spec);
      break;
    case Method::AE:
      model = AutoencoderModel::fit(train, spec);
      break;
  }
  return FittedImputer(spec, train.feature_names(), std::move(model));
}

/// Completes `grid`: missing entries are filled, observed entries are copied
/// unchanged, the mask becomes all-true and the previous mask is kept as
/// provenance. IndicatorMean appends one 0/1 column per feature.
inline AlignedGrid transform(const FittedImputer& imp, const AlignedGrid& grid) {
  if (grid.feature_names() != imp.features())
    throw std::invalid_argument("imputer transform: grid features do not match the fit-time feature set (" +
                                std::to_string(grid.features.size()) + " vs " + std::to_string(imp.features().size()) + ")");
  const auto filled = imp.model().complete(grid);
  AlignedGrid out = grid;
  const auto f = grid.n_features();
  for (std::size_t s = 0; s < out.data.size(); ++s) {
    auto& d = out.data[s];
    const auto& src = grid.data[s];
    for (Eigen::Index b = 0; b < d.n_bins(); ++b)
      for (Eigen::Index j = 0; j < f; ++j) {
        if (src.mask(j, b)) continue;
        const double v = filled[s](j, b);
        if (!std::isfinite(v))
          throw std::runtime_error("imputer " + std::string(to_string(imp.method())) + " produced a non-finite value for stay '" +
                                   grid.stays[s].stay_id + "'");
        d.values(j, b) = v;
      }
    if (!d.original_mask) d.original_mask = src.mask;
    d.mask.setConstant(true);
  }
  if (imp.method() == Method::IndicatorMean) {
    for (Eigen::Index j = 0; j < f; ++j) {
      FeatureSpec ind;
      ind.name = grid.features[static_cast<std::size_t>(j)].name + std::string(kIndicatorSuffix);
      ind.valid_min = 0.0;
      ind.valid_max = 1.0;
      out.features.push_back(ind);
    }
    for (std::size_t s = 0; s < out.data.size(); ++s) {
      auto& d = out.data[s];
      const auto bins = d.n_bins();
      Matrix v(2 * f, bins);
      v.topRows(f) = d.values;
      v.bottomRows(f) = grid.data[s].mask.cast<double>();
      MaskMatrix orig(2 * f, bins);
      orig.topRows(f) = *d.original_mask;
      orig.bottomRows(f).setConstant(true);
      d.values = std::move(v);
      d.mask = MaskMatrix::Constant(2 * f, bins, true);
      d.original_mask = std::move(orig);
    }
  }
  return out;
}

inline FittedImputer imputer_from_json(const nlohmann::json& j) {
  if (j.value("format_version", 0) != kStateFormatVersion)
    throw DataError("imputer state: unsupported format_version (expected " + std::to_string(kStateFormatVersion) + ")");
  const ImputerSpec spec = spec_from_json(j.at("spec"));
  const auto& st = j.at("state");
  std::shared_ptr<const ImputerModel> model;
  switch (spec.method) {
    case Method::Mean:
    case Method::Median:
    case Method::IndicatorMean:
      model = std::make_shared<ConstantModel>(json_vec(st.at("fill")));
      break;
    case Method::GroupMean: model = GroupMeanModel::from_state(st); break;
    case Method::FeedForward: model = std::make_shared<FeedForwardModel>(json_vec(st.at("fallback"))); break;
    case Method::PPCA: model = PpcaModel::from_state(st); break;
    case Method::MF: model = MfModel::from_state(st); break;
    case Method::SoftImpute: model = SoftImputeModel::from_state(st); break;
    case Method::KNN: model = KnnModel::from_state(st); break;
    case Method::MissForest: model = MissForestModel::from_state(st); break;
    case Method::MICE: model = MiceModel::from_state(st); break;
    case Method::AE: model = AutoencoderModel::from_state(st); break;
  }
  return FittedImputer(spec, j.at("features").get<std::vector<std::string>>(), std::move(model));
}

inline void save_imputer(const FittedImputer& imp, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << imp.to_json().dump() << '\n';
}

inline FittedImputer load_imputer(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read imputer state " + path.string());
  try {
    return imputer_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("imputer state " + path.string() + ": " + e.what());
  }
}

struct FeatureQuality {
  std::string feature;
  std::size_t cells = 0;
  double rmse = kMissing;  // NaN when no cell was corrupted
};

/// RMSE per feature over cells that hold a ground-truth value but were
/// missing before imputation (the provenance mask of `imputed`).
inline std::vector<FeatureQuality> impute_quality(const std::vector<Matrix>& truth, const AlignedGrid& imputed) {
  if (truth.size() != imputed.data.size()) throw std::invalid_argument("impute_quality: stay count mismatch");
  const auto f = truth.empty() ? imputed.n_features() : truth.front().rows();
  if (f > imputed.n_features()) throw std::invalid_argument("impute_quality: feature count mismatch");
  std::vector<double> sse(static_cast<std::size_t>(f), 0.0);
  std::vector<std::size_t> n(static_cast<std::size_t>(f), 0);
  for (std::size_t s = 0; s < truth.size(); ++s) {
    const auto& d = imputed.data[s];
    if (truth[s].rows() != f || truth[s].cols() != d.n_bins()) throw std::invalid_argument("impute_quality: shape mismatch");
    const auto& before = d.observed();
    for (Eigen::Index b = 0; b < d.n_bins(); ++b)
      for (Eigen::Index j = 0; j < f; ++j) {
        if (before(j, b) || is_missing(truth[s](j, b))) continue;
        const double e = d.values(j, b) - truth[s](j, b);
        sse[static_cast<std::size_t>(j)] += e * e;
        ++n[static_cast<std::size_t>(j)];
      }
  }
  std::vector<FeatureQuality> out;
  for (Eigen::Index j = 0; j < f; ++j) {
    const auto q = static_cast<std::size_t>(j);
    out.push_back({imputed.features[q].name, n[q], n[q] ? std::sqrt(sse[q] / static_cast<double>(n[q])) : kMissing});
  }
  return out;
}

}  // namespace lactate::impute
