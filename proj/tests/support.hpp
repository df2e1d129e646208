#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "lactate/datamodel.hpp"
#include "lactate/rng.hpp"

namespace lactate::support {

/// Grid of `stays` stays with `features` unnamed features and `bins` bins
/// each, values N(mean_j, 1) with feature-specific means; each cell is
/// dropped with probability `missing`.
inline AlignedGrid random_grid(std::size_t stays, int features, int bins, double missing, std::uint64_t seed) {
  Rng rng(seed);
  AlignedGrid g;
  for (int j = 0; j < features; ++j) {
    FeatureSpec f;
    f.name = j == 0 ? std::string(kLactate) : "f" + std::to_string(j);
    g.features.push_back(f);
  }
  for (std::size_t s = 0; s < stays; ++s) {
    StayInfo info;
    info.stay_id = "s" + std::to_string(s);
    info.patient_id = "p" + std::to_string(s);
    info.statics.age = 40 + static_cast<double>(s % 40);
    info.statics.gender = s % 2 ? "Male" : "Female";
    g.stays.push_back(info);
    StayGrid d;
    d.values.resize(features, bins);
    d.mask.resize(features, bins);
    for (int b = 0; b < bins; ++b)
      for (int j = 0; j < features; ++j) {
        // lactate stays positive so severity grouping is defined
        const double v = j == 0 ? 0.5 + 4.0 * uniform01(rng) : 3.0 * j + standard_normal(rng);
        const bool keep = !bernoulli(rng, missing);
        d.values(j, b) = keep ? v : kMissing;
        d.mask(j, b) = keep;
      }
    g.data.push_back(std::move(d));
  }
  return g;
}

/// One stay whose bins are the rows of `x` (features = columns); NaN = missing.
inline AlignedGrid grid_from_rows(const Matrix& x) {
  AlignedGrid g;
  for (Eigen::Index j = 0; j < x.cols(); ++j) g.features.push_back(FeatureSpec{"c" + std::to_string(j), {}});
  g.stays.push_back(StayInfo{"p", "s", {}});
  StayGrid d;
  d.values = x.transpose();
  d.mask = d.values.array().isNaN() == false;
  g.data.push_back(std::move(d));
  return g;
}

/// Fresh empty directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lactate_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path source_dir() { return LACTATE_SOURCE_DIR; }

}  // namespace lactate::support
