#pragma once

// Single-value methods: overall mean / median, severity-group mean, and
// forward fill within a stay.

#include "lactate/impute/model.hpp"

namespace lactate::impute {

inline Vector observed_means(const AlignedGrid& grid, std::string_view who) {
  const auto f = grid.n_features();
  Vector sum = Vector::Zero(f), n = Vector::Zero(f);
  for (const auto& d : grid.data)
    for (Eigen::Index b = 0; b < d.n_bins(); ++b)
      for (Eigen::Index j = 0; j < f; ++j)
        if (d.mask(j, b)) {
          sum(j) += d.values(j, b);
          n(j) += 1;
        }
  Vector mean = Vector::Zero(f);
  for (Eigen::Index j = 0; j < f; ++j) {
    if (n(j) > 0) mean(j) = sum(j) / n(j);
    else warn(who, "feature '" + grid.features[static_cast<std::size_t>(j)].name + "' has no observed training entries; using 0.0");
  }
  return mean;
}

inline Vector observed_medians(const AlignedGrid& grid, std::string_view who) {
  const auto f = grid.n_features();
  Vector med = Vector::Zero(f);
  for (Eigen::Index j = 0; j < f; ++j) {
    std::vector<double> v;
    for (const auto& d : grid.data)
      for (Eigen::Index b = 0; b < d.n_bins(); ++b)
        if (d.mask(j, b)) v.push_back(d.values(j, b));
    if (v.empty()) {
      warn(who, "feature '" + grid.features[static_cast<std::size_t>(j)].name + "' has no observed training entries; using 0.0");
      continue;
    }
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    if (v.size() % 2 == 1) {
      med(j) = v[mid];
    } else {
      const double hi = v[mid];
      const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
      med(j) = lo + (hi - lo) / 2;
    }
  }
  return med;
}

/// Fills every missing cell of feature j with a constant.
class ConstantModel : public ImputerModel {
 public:
  explicit ConstantModel(Vector fill) : fill_(std::move(fill)) {}

  std::vector<Matrix> complete(const AlignedGrid& grid) const override {
    std::vector<Matrix> out;
    for (const auto& d : grid.data) {
      Matrix v = d.values;
      for (Eigen::Index b = 0; b < v.cols(); ++b)
        for (Eigen::Index j = 0; j < v.rows(); ++j)
          if (!d.mask(j, b)) v(j, b) = fill_(j);
      out.push_back(std::move(v));
    }
    return out;
  }

  nlohmann::json state() const override { return {{"fill", vec_json(fill_)}}; }
  const Vector& fill() const { return fill_; }

 private:
  Vector fill_;
};

/// Group key of each bin: severity of the latest observed group-feature value
/// strictly before the bin, or -1.
inline std::vector<int> previous_severity(const StayGrid& d, Eigen::Index lac) {
  std::vector<int> key(static_cast<std::size_t>(d.n_bins()), -1);
  int current = -1;
  for (Eigen::Index b = 0; b < d.n_bins(); ++b) {
    key[static_cast<std::size_t>(b)] = current;
    if (d.mask(lac, b)) {
      const double v = d.values(lac, b);
      current = (std::isfinite(v) && v > 0) ? static_cast<int>(categorize_lactate(v)) : -1;
    }
  }
  return key;
}

class GroupMeanModel : public ImputerModel {
 public:
  static std::unique_ptr<GroupMeanModel> fit(const AlignedGrid& train, const std::string& group_feature) {
    auto m = std::make_unique<GroupMeanModel>();
    m->group_feature_ = group_feature;
    const auto lac = train.feature_index(group_feature);
    if (!lac) throw ConfigError("group_mean: grid has no feature '" + group_feature + "' to group by");
    const auto f = train.n_features();
    m->overall_ = observed_means(train, "impute.group_mean");
    Matrix sum = Matrix::Zero(f, kSeverityCount), n = Matrix::Zero(f, kSeverityCount);
    for (const auto& d : train.data) {
      const auto key = previous_severity(d, *lac);
      for (Eigen::Index b = 0; b < d.n_bins(); ++b) {
        const int g = key[static_cast<std::size_t>(b)];
        if (g < 0) continue;
        for (Eigen::Index j = 0; j < f; ++j)
          if (d.mask(j, b)) {
            sum(j, g) += d.values(j, b);
            n(j, g) += 1;
          }
      }
    }
    m->group_ = Matrix::Constant(f, kSeverityCount, kMissing);
    for (Eigen::Index j = 0; j < f; ++j)
      for (int g = 0; g < kSeverityCount; ++g)
        if (n(j, g) > 0) m->group_(j, g) = sum(j, g) / n(j, g);
    return m;
  }

  std::vector<Matrix> complete(const AlignedGrid& grid) const override {
    const auto lac = grid.feature_index(group_feature_);
    if (!lac) throw std::invalid_argument("group_mean: grid has no feature '" + group_feature_ + "'");
    std::vector<Matrix> out;
    for (const auto& d : grid.data) {
      const auto key = previous_severity(d, *lac);
      Matrix v = d.values;
      for (Eigen::Index b = 0; b < v.cols(); ++b) {
        const int g = key[static_cast<std::size_t>(b)];
        for (Eigen::Index j = 0; j < v.rows(); ++j) {
          if (d.mask(j, b)) continue;
          v(j, b) = (g >= 0 && !is_missing(group_(j, g))) ? group_(j, g) : overall_(j);
        }
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  nlohmann::json state() const override {
    std::vector<double> groups(group_.data(), group_.data() + group_.size());
    nlohmann::json g = nlohmann::json::array();
    for (double v : groups) g.push_back(is_missing(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    return {{"group_feature", group_feature_}, {"overall", vec_json(overall_)}, {"groups", g}};
  }

  static std::unique_ptr<GroupMeanModel> from_state(const nlohmann::json& j) {
    auto m = std::make_unique<GroupMeanModel>();
    m->group_feature_ = j.at("group_feature").get<std::string>();
    m->overall_ = json_vec(j.at("overall"));
    m->group_ = Matrix::Constant(m->overall_.size(), kSeverityCount, kMissing);
    const auto& g = j.at("groups");
    if (static_cast<Eigen::Index>(g.size()) != m->group_.size()) throw DataError("group_mean state: size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!g[i].is_null()) m->group_.data()[i] = g[i].get<double>();
    return m;
  }

  /// features x 4 matrix of group means (NaN where the group was empty).
  const Matrix& group_means() const { return group_; }
  const Vector& overall_means() const { return overall_; }

 private:
  std::string group_feature_;
  Vector overall_;
  Matrix group_;
};

/// Last observation carried forward; the leading gap takes the first
/// observation; a feature never observed in the stay takes the training mean.
class FeedForwardModel : public ImputerModel {
 public:
  explicit FeedForwardModel(Vector fallback) : fallback_(std::move(fallback)) {}

  std::vector<Matrix> complete(const AlignedGrid& grid) const override {
    std::vector<Matrix> out;
    for (const auto& d : grid.data) {
      Matrix v = d.values;
      for (Eigen::Index j = 0; j < v.rows(); ++j) {
        Eigen::Index first = -1;
        for (Eigen::Index b = 0; b < v.cols(); ++b)
          if (d.mask(j, b)) {
            first = b;
            break;
          }
        if (first < 0) {
          v.row(j).setConstant(fallback_(j));
          continue;
        }
        double last = d.values(j, first);
        for (Eigen::Index b = 0; b < v.cols(); ++b) {
          if (d.mask(j, b)) last = d.values(j, b);
          else v(j, b) = last;
        }
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  nlohmann::json state() const override { return {{"fallback", vec_json(fallback_)}}; }

 private:
  Vector fallback_;
};

}  // namespace lactate::impute
