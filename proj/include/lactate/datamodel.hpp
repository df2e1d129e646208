#pragma once

// Core domain types: feature metadata, clinical events, the aligned
// stay x feature x bin grid, lactate severity bands and task horizons.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lactate/errors.hpp"

namespace lactate {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Missing-value marker. Never a finite number, so negative measurements
/// (base excess) stay representable.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

inline constexpr int kDefaultBinWidthMinutes = 120;
inline constexpr std::string_view kLactate = "lactate";

// ---------------------------------------------------------------------------
// Features

enum class FeatureKind { Numeric, Categorical };

struct FeatureSpec {
  std::string name;
  std::vector<std::string> aliases;
  double valid_min = -std::numeric_limits<double>::infinity();
  double valid_max = std::numeric_limits<double>::infinity();
  FeatureKind kind = FeatureKind::Numeric;

  bool in_range(double v) const { return v >= valid_min && v <= valid_max; }
};

inline bool operator==(const FeatureSpec& a, const FeatureSpec& b) {
  return a.name == b.name && a.aliases == b.aliases && a.kind == b.kind &&
         (a.valid_min == b.valid_min || (std::isnan(a.valid_min) && std::isnan(b.valid_min))) &&
         (a.valid_max == b.valid_max || (std::isnan(a.valid_max) && std::isnan(b.valid_max)));
}

/// Ordered feature table with unique canonical names and an injective alias map.
class FeatureDictionary {
 public:
  FeatureDictionary() = default;

  explicit FeatureDictionary(std::vector<FeatureSpec> specs) : specs_(std::move(specs)) {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& s = specs_[i];
      if (s.name.empty()) throw ConfigError("feature with empty name");
      if (s.kind == FeatureKind::Numeric && !(s.valid_min < s.valid_max))
        throw ConfigError("feature '" + s.name + "': valid_min must be < valid_max");
      if (!by_name_.emplace(s.name, i).second)
        throw ConfigError("duplicate canonical feature name '" + s.name + "'");
    }
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      bind_alias(specs_[i].name, i);
      for (const auto& a : specs_[i].aliases) bind_alias(a, i);
    }
  }

  const std::vector<FeatureSpec>& specs() const { return specs_; }
  std::size_t size() const { return specs_.size(); }
  const FeatureSpec& operator[](std::size_t i) const { return specs_[i]; }

  std::optional<std::size_t> index_of(const std::string& canonical) const {
    auto it = by_name_.find(canonical);
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  /// Canonical name for a source or canonical name; nullopt when unknown.
  std::optional<std::string> canonical(const std::string& source_name) const {
    auto it = by_alias_.find(source_name);
    if (it == by_alias_.end()) return std::nullopt;
    return specs_[it->second].name;
  }

  const FeatureSpec* find(const std::string& canonical) const {
    auto i = index_of(canonical);
    return i ? &specs_[*i] : nullptr;
  }

 private:
  void bind_alias(const std::string& alias, std::size_t i) {
    auto [it, inserted] = by_alias_.emplace(alias, i);
    if (!inserted && it->second != i)
      throw ConfigError("alias '" + alias + "' maps to both '" + specs_[it->second].name +
                        "' and '" + specs_[i].name + "'");
  }

  std::vector<FeatureSpec> specs_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::unordered_map<std::string, std::size_t> by_alias_;
};

// ---------------------------------------------------------------------------
// Events

struct EventRecord {
  std::string patient_id;
  std::string stay_id;
  std::string feature;
  std::int64_t offset_minutes = 0;
  double value = kMissing;
};

// ---------------------------------------------------------------------------
// Severity

enum class Severity { Normal = 0, Mild = 1, Moderate = 2, Severe = 3 };

inline constexpr int kSeverityCount = 4;

inline std::string_view to_string(Severity s) {
  switch (s) {
    case Severity::Normal: return "Normal";
    case Severity::Mild: return "Mild";
    case Severity::Moderate: return "Moderate";
    case Severity::Severe: return "Severe";
  }
  return "Normal";
}

/// Lactate band in mmol/L: Normal (0, 2], Mild (2, 4], Moderate (4, 6],
/// Severe (6, inf).
inline Severity categorize_lactate(double mmol_per_l) {
  if (!std::isfinite(mmol_per_l) || mmol_per_l <= 0.0)
    throw std::domain_error("lactate value must be positive and finite");
  if (mmol_per_l <= 2.0) return Severity::Normal;
  if (mmol_per_l <= 4.0) return Severity::Mild;
  if (mmol_per_l <= 6.0) return Severity::Moderate;
  return Severity::Severe;
}

// ---------------------------------------------------------------------------
// Stays and the aligned grid

struct StaticFeatures {
  double age = kMissing;
  std::string gender;
  std::string ethnicity;
  double admission_weight = kMissing;
  std::string admission_dx;
};

struct StayInfo {
  std::string patient_id;
  std::string stay_id;
  StaticFeatures statics;
};

/// Per-stay block: rows are features, columns are bins.
struct StayGrid {
  Matrix values;
  MaskMatrix mask;
  /// Mask before imputation; set by imputers, which replace `mask` by all-true.
  std::optional<MaskMatrix> original_mask;

  Eigen::Index n_bins() const { return values.cols(); }
  const MaskMatrix& observed() const { return original_mask ? *original_mask : mask; }
};

struct AlignedGrid {
  int bin_width_minutes = kDefaultBinWidthMinutes;
  std::vector<FeatureSpec> features;
  std::vector<StayInfo> stays;
  std::vector<StayGrid> data;

  std::size_t n_stays() const { return stays.size(); }
  Eigen::Index n_features() const { return static_cast<Eigen::Index>(features.size()); }

  std::optional<Eigen::Index> feature_index(std::string_view name) const {
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i].name == name) return static_cast<Eigen::Index>(i);
    return std::nullopt;
  }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    out.reserve(features.size());
    for (const auto& f : features) out.push_back(f.name);
    return out;
  }

  std::size_t total_bins() const {
    std::size_t n = 0;
    for (const auto& d : data) n += static_cast<std::size_t>(d.n_bins());
    return n;
  }

  /// Grid restricted to the given stay indices, in the given order.
  AlignedGrid subset(const std::vector<std::size_t>& indices) const {
    AlignedGrid out;
    out.bin_width_minutes = bin_width_minutes;
    out.features = features;
    out.stays.reserve(indices.size());
    out.data.reserve(indices.size());
    for (auto i : indices) {
      out.stays.push_back(stays.at(i));
      out.data.push_back(data.at(i));
    }
    return out;
  }

  /// Checks structural invariants; throws DataError on the first violation.
  void validate() const {
    if (bin_width_minutes <= 0) throw DataError("bin width must be positive");
    if (stays.size() != data.size()) throw DataError("stay descriptors and data blocks differ in count");
    const auto f = n_features();
    for (std::size_t s = 0; s < data.size(); ++s) {
      const auto& d = data[s];
      if (d.values.rows() != f || d.mask.rows() != f || d.mask.cols() != d.values.cols())
        throw DataError("stay '" + stays[s].stay_id + "': values/mask shape mismatch");
      if (d.original_mask &&
          (d.original_mask->rows() != f || d.original_mask->cols() != d.values.cols()))
        throw DataError("stay '" + stays[s].stay_id + "': provenance mask shape mismatch");
      for (Eigen::Index r = 0; r < d.values.rows(); ++r)
        for (Eigen::Index c = 0; c < d.values.cols(); ++c)
          if (d.mask(r, c) == is_missing(d.values(r, c)))
            throw DataError("stay '" + stays[s].stay_id + "': mask disagrees with missing sentinel at (" +
                            features[static_cast<std::size_t>(r)].name + ", bin " + std::to_string(c) + ")");
    }
  }

  bool complete() const {
    for (const auto& d : data)
      if (!d.values.allFinite()) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Task horizons

struct TaskParams {
  int alpha_minutes = 360;
  int beta_minutes = 120;

  void validate(int bin_width_minutes) const {
    if (alpha_minutes <= 0 || beta_minutes <= 0)
      throw ConfigError("alpha_minutes and beta_minutes must be positive");
    if (alpha_minutes % bin_width_minutes != 0 || beta_minutes % bin_width_minutes != 0)
      throw ConfigError("alpha_minutes and beta_minutes must be multiples of the bin width (" +
                        std::to_string(bin_width_minutes) + ")");
  }
  int alpha_bins(int bin_width_minutes) const { return alpha_minutes / bin_width_minutes; }
  int beta_bins(int bin_width_minutes) const { return beta_minutes / bin_width_minutes; }
};

}  // namespace lactate
