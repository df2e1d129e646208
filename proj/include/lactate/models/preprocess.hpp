#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lactate/datamodel.hpp"
#include "lactate/errors.hpp"

namespace lactate::models {

/// One regression instance: history bins [t - L + 1, t] of a stay and the
/// lactate value observed beta ahead.
struct Sample {
  std::size_t stay = 0;  // index into the grid the sample was built from
  std::string stay_id;
  int t_index = 0;
  Matrix history;  // features x window, oldest bin first
  double target = 0.0;
};

/// Rows are samples; column w * F + f holds feature f at window slot w, with
/// short histories left-padded by zeros.
inline Matrix pad_and_flatten(const std::vector<Sample>& samples, int max_window_bins) {
  if (max_window_bins < 1) throw std::invalid_argument("pad_and_flatten: max_window_bins must be >= 1");
  const Eigen::Index f = samples.empty() ? 0 : samples.front().history.rows();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(samples.size()), f * max_window_bins);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& h = samples[i].history;
    if (h.rows() != f) throw std::invalid_argument("pad_and_flatten: inconsistent feature count");
    if (h.cols() > max_window_bins)
      throw std::invalid_argument("pad_and_flatten: history of " + std::to_string(h.cols()) +
                                  " bins exceeds max_window_bins " + std::to_string(max_window_bins));
    const Eigen::Index pad = max_window_bins - h.cols();
    for (Eigen::Index w = 0; w < h.cols(); ++w)
      out.row(static_cast<Eigen::Index>(i)).segment((pad + w) * f, f) = h.col(w).transpose();
  }
  return out;
}

/// Per-feature affine map fitted on every history bin of the training samples.
struct Standardizer {
  Vector mean;
  Vector sd;

  Matrix apply(const Matrix& seq) const {
    return (seq.colwise() - mean).array().colwise() / sd.array();
  }
};

inline Standardizer standardize_fit(const std::vector<Sample>& train) {
  if (train.size() < 2) throw std::invalid_argument("standardize_fit: need at least 2 training samples");
  const Eigen::Index f = train.front().history.rows();
  // Two-pass for accuracy: mean first, then squared deviations.
  Vector sum = Vector::Zero(f);
  double n = 0;
  for (const auto& s : train) {
    sum += s.history.rowwise().sum();
    n += static_cast<double>(s.history.cols());
  }
  Standardizer st;
  st.mean = sum / n;
  Vector sq = Vector::Zero(f);
  for (const auto& s : train) sq += (s.history.colwise() - st.mean).rowwise().squaredNorm();
  st.sd = (sq / n).cwiseSqrt();
  for (Eigen::Index j = 0; j < f; ++j) {
    if (!(st.sd(j) > 1e-12 * std::max(1.0, std::abs(st.mean(j))))) {
      warn("standardize", "feature " + std::to_string(j) + " is constant on the training samples; using std 1");
      st.sd(j) = 1.0;
    }
  }
  return st;
}

inline std::vector<Sample> standardize_apply(const Standardizer& st, std::vector<Sample> samples) {
  for (auto& s : samples) s.history = st.apply(s.history);
  return samples;
}

/// Column-wise standardization of a design matrix (rows = samples).
struct ColumnScaler {
  Vector mean;
  Vector sd;

  static ColumnScaler fit(const Matrix& x) {
    ColumnScaler c;
    const double n = static_cast<double>(x.rows());
    c.mean = x.colwise().mean().transpose();
    c.sd = ((x.rowwise() - c.mean.transpose()).colwise().squaredNorm().transpose() / n).cwiseSqrt();
    for (Eigen::Index j = 0; j < c.sd.size(); ++j)
      if (!(c.sd(j) > 1e-12 * std::max(1.0, std::abs(c.mean(j))))) c.sd(j) = 1.0;
    return c;
  }
  Matrix apply(const Matrix& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
  }
};

/// Encodes stay-level statics: age and admission weight (missing -> training
/// mean), one-hot gender and ethnicity over training levels, and one-hot
/// admission diagnosis over the most frequent training codes plus "other".
class StaticEncoder {
 public:
  static constexpr std::size_t kMaxDiagnoses = 32;

  static StaticEncoder fit(const std::vector<const StaticFeatures*>& train) {
    StaticEncoder e;
    auto mean_of = [&](auto get) {
      double s = 0, n = 0;
      for (const auto* st : train)
        if (std::isfinite(get(*st))) {
          s += get(*st);
          n += 1;
        }
      return n > 0 ? s / n : 0.0;
    };
    e.age_mean_ = mean_of([](const StaticFeatures& s) { return s.age; });
    e.weight_mean_ = mean_of([](const StaticFeatures& s) { return s.admission_weight; });
    std::map<std::string, std::size_t> dx_count;
    for (const auto* st : train) {
      if (!st->gender.empty()) e.genders_.emplace(st->gender, 0);
      if (!st->ethnicity.empty()) e.ethnicities_.emplace(st->ethnicity, 0);
      if (!st->admission_dx.empty()) ++dx_count[st->admission_dx];
    }
    std::size_t k = 0;
    for (auto& [_, idx] : e.genders_) idx = k++;
    k = 0;
    for (auto& [_, idx] : e.ethnicities_) idx = k++;
    std::vector<std::pair<std::string, std::size_t>> dx(dx_count.begin(), dx_count.end());
    std::stable_sort(dx.begin(), dx.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (dx.size() > kMaxDiagnoses) dx.resize(kMaxDiagnoses);
    k = 0;
    for (const auto& d : dx) e.diagnoses_.emplace(d.first, k++);
    return e;
  }

  /// 2 + |genders| + |ethnicities| + |diagnoses| + 1.
  Eigen::Index width() const {
    return static_cast<Eigen::Index>(2 + genders_.size() + ethnicities_.size() + diagnoses_.size() + 1);
  }

  Vector encode(const StaticFeatures& s) const {
    Vector v = Vector::Zero(width());
    v(0) = std::isfinite(s.age) ? s.age : age_mean_;
    v(1) = std::isfinite(s.admission_weight) ? s.admission_weight : weight_mean_;
    Eigen::Index off = 2;
    if (auto it = genders_.find(s.gender); it != genders_.end()) v(off + static_cast<Eigen::Index>(it->second)) = 1.0;
    off += static_cast<Eigen::Index>(genders_.size());
    if (auto it = ethnicities_.find(s.ethnicity); it != ethnicities_.end())
      v(off + static_cast<Eigen::Index>(it->second)) = 1.0;
    off += static_cast<Eigen::Index>(ethnicities_.size());
    if (auto it = diagnoses_.find(s.admission_dx); it != diagnoses_.end())
      v(off + static_cast<Eigen::Index>(it->second)) = 1.0;
    else
      v(off + static_cast<Eigen::Index>(diagnoses_.size())) = 1.0;
    return v;
  }

 private:
  double age_mean_ = 0.0;
  double weight_mean_ = 0.0;
  std::map<std::string, std::size_t> genders_;
  std::map<std::string, std::size_t> ethnicities_;
  std::map<std::string, std::size_t> diagnoses_;
};

}  // namespace lactate::models
