#pragma once

#include <numeric>

#include "lactate/datamodel.hpp"
#include "lactate/models/preprocess.hpp"
#include "lactate/rng.hpp"

namespace lactate::eval {

using models::Sample;

struct SampleSet {
  std::vector<Sample> samples;
  std::size_t stays_without_samples = 0;
};

/// One sample per (stay, t) with lactate observed (pre-imputation mask) at
/// bin t + beta and t >= alpha - 1 (in bins). The history is bins 0..t,
/// truncated to the most recent `max_window_bins` (0 = no cap).
inline SampleSet build_samples(const AlignedGrid& grid, const TaskParams& task, int max_window_bins = 0) {
  task.validate(grid.bin_width_minutes);
  const int alpha = task.alpha_bins(grid.bin_width_minutes), beta = task.beta_bins(grid.bin_width_minutes);
  if (max_window_bins != 0 && max_window_bins < alpha)
    throw ConfigError("max_window_bins (" + std::to_string(max_window_bins) + ") is shorter than alpha (" +
                      std::to_string(alpha) + " bins)");
  const auto lac = grid.feature_index(kLactate);
  if (!lac) throw ConfigError("build_samples: grid has no 'lactate' feature");
  SampleSet out;
  for (std::size_t s = 0; s < grid.data.size(); ++s) {
    const auto& d = grid.data[s];
    const auto& observed = d.observed();
    std::size_t made = 0;
    for (Eigen::Index t = alpha - 1; t + beta < d.n_bins(); ++t) {
      if (!observed(*lac, t + beta)) continue;
      const Eigen::Index len = max_window_bins > 0 ? std::min<Eigen::Index>(t + 1, max_window_bins) : t + 1;
      Sample smp;
      smp.stay = s;
      smp.stay_id = grid.stays[s].stay_id;
      smp.t_index = static_cast<int>(t);
      smp.history = d.values.middleCols(t + 1 - len, len);
      smp.target = d.values(*lac, t + beta);
      out.samples.push_back(std::move(smp));
      ++made;
    }
    if (made == 0) ++out.stays_without_samples;
  }
  return out;
}

/// fold[i] is the fold of stay i: a seeded shuffle, then position modulo folds.
struct FoldAssignment {
  int folds = 0;
  std::vector<int> fold;

  std::vector<std::size_t> members(int k, bool in_fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold.size(); ++i)
      if ((fold[i] == k) == in_fold) out.push_back(i);
    return out;
  }
};

inline FoldAssignment kfold(std::size_t n_stays, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("kfold: folds must be >= 2");
  if (n_stays < static_cast<std::size_t>(folds))
    throw ConfigError("kfold: " + std::to_string(n_stays) + " stays cannot fill " + std::to_string(folds) + " folds");
  std::vector<std::size_t> perm(n_stays);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  shuffle(std::span<std::size_t>(perm), rng);
  FoldAssignment a;
  a.folds = folds;
  a.fold.assign(n_stays, 0);
  for (std::size_t p = 0; p < n_stays; ++p) a.fold[perm[p]] = static_cast<int>(p % static_cast<std::size_t>(folds));
  return a;
}

}  // namespace lactate::eval
