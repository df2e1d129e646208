#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>

namespace lactate::eval {

namespace detail {
inline void check(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.empty()) throw std::invalid_argument("metric: empty input");
  if (y_true.size() != y_pred.size()) throw std::invalid_argument("metric: length mismatch");
  for (std::size_t i = 0; i < y_true.size(); ++i)
    if (!std::isfinite(y_true[i]) || !std::isfinite(y_pred[i])) throw std::invalid_argument("metric: non-finite entry");
}
}  // namespace detail

inline double mae(std::span<const double> y_true, std::span<const double> y_pred) {
  detail::check(y_true, y_pred);
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_true[i] - y_pred[i]);
  return s / static_cast<double>(y_true.size());
}

inline double rmse(std::span<const double> y_true, std::span<const double> y_pred) {
  detail::check(y_true, y_pred);
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
  return std::sqrt(s / static_cast<double>(y_true.size()));
}

/// Mean of y_true, summed left to right; r2 measures SST about this value.
inline double mean_of(std::span<const double> y) {
  double s = 0.0;
  for (double v : y) s += v;
  return s / static_cast<double>(y.size());
}

/// 1 - SSE/SST. For constant y_true: 0 when the predictions are exact,
/// otherwise -infinity (undefined).
inline double r2(std::span<const double> y_true, std::span<const double> y_pred) {
  detail::check(y_true, y_pred);
  const double m = mean_of(y_true);
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    sse += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    sst += (y_true[i] - m) * (y_true[i] - m);
  }
  if (sst == 0.0) return sse == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - sse / sst;
}

enum class Metric { MAE, RMSE, R2 };
inline constexpr Metric kMetrics[] = {Metric::MAE, Metric::RMSE, Metric::R2};

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::MAE: return "MAE";
    case Metric::RMSE: return "RMSE";
    case Metric::R2: return "R2";
  }
  return "?";
}

inline bool lower_is_better(Metric m) { return m != Metric::R2; }

}  // namespace lactate::eval
