#pragma once

// Lasso by cyclic coordinate descent on
//   (1 / 2n) ||y - X w - b||^2 + lambda ||w||_1
// with an unpenalized intercept (handled by centering).

#include <json.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "lactate/datamodel.hpp"

namespace lactate::models {

struct LassoParams {
  double l1_penalty = 1e-3;
  int max_sweeps = 5000;
  double tolerance = 1e-8;  // on the largest coefficient change in a sweep
  bool fit_intercept = true;
  /// When non-empty, l1_penalty is picked from these by inner validation
  /// (see lasso_select_penalty).
  std::vector<double> penalty_grid;
  double validation_fraction = 0.2;

  void validate() const {
    if (!(l1_penalty >= 0)) throw ConfigError("lasso: l1_penalty must be >= 0");
    for (double v : penalty_grid)
      if (!(v >= 0)) throw ConfigError("lasso: penalty_grid values must be >= 0");
    if (!(validation_fraction > 0 && validation_fraction < 1))
      throw ConfigError("lasso: validation_fraction must be in (0, 1)");
    if (max_sweeps < 1) throw ConfigError("lasso: max_sweeps must be >= 1");
    if (!(tolerance > 0)) throw ConfigError("lasso: tolerance must be positive");
  }
};

struct LassoModel {
  Vector weights;
  double intercept = 0.0;
  int sweeps = 0;
  bool converged = false;
  /// Objective after each sweep.
  std::vector<double> objective_trace;

  Vector predict(const Matrix& x) const {
    return (x * weights).array() + intercept;
  }
};

inline double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

/// Smallest penalty at which every weight is zero: max_j |n^-1 x_j^T (y - ybar)|.
inline double lasso_lambda_max(const Matrix& x, const Vector& y, bool fit_intercept = true) {
  const double n = static_cast<double>(x.rows());
  const Vector yc = fit_intercept ? Vector(y.array() - y.mean()) : y;
  double best = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Vector xj = fit_intercept ? Vector(x.col(j).array() - x.col(j).mean()) : Vector(x.col(j));
    best = std::max(best, std::abs(xj.dot(yc)) / n);
  }
  return best;
}

inline LassoModel lasso_fit(const Matrix& x, const Vector& y, const LassoParams& p) {
  p.validate();
  if (x.rows() < 1) throw std::invalid_argument("lasso_fit: need at least one sample");
  if (x.rows() != y.size()) throw std::invalid_argument("lasso_fit: X/y row mismatch");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("lasso_fit: non-finite input");

  const Eigen::Index n = x.rows(), d = x.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector x_mean = Vector::Zero(d);
  double y_mean = 0.0;
  if (p.fit_intercept) {
    x_mean = x.colwise().mean().transpose();
    y_mean = y.mean();
  }
  const Matrix xc = x.rowwise() - x_mean.transpose();
  Vector col_sq(d);
  for (Eigen::Index j = 0; j < d; ++j) col_sq(j) = xc.col(j).squaredNorm() * inv_n;

  LassoModel m;
  m.weights = Vector::Zero(d);
  Vector resid = y.array() - y_mean;
  auto objective = [&] { return 0.5 * inv_n * resid.squaredNorm() + p.l1_penalty * m.weights.lpNorm<1>(); };

  for (int sweep = 0; sweep < p.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq(j) <= 0.0) continue;
      const double old = m.weights(j);
      const double rho = xc.col(j).dot(resid) * inv_n + col_sq(j) * old;
      const double w = soft_threshold(rho, p.l1_penalty) / col_sq(j);
      if (w != old) {
        resid.noalias() -= (w - old) * xc.col(j);
        m.weights(j) = w;
        max_change = std::max(max_change, std::abs(w - old));
      }
    }
    m.sweeps = sweep + 1;
    m.objective_trace.push_back(objective());
    if (max_change < p.tolerance) {
      m.converged = true;
      break;
    }
  }
  m.intercept = p.fit_intercept ? y_mean - x_mean.dot(m.weights) : 0.0;
  return m;
}

/// Fits on rows with holdout[i] == false for each penalty in the grid and
/// returns the one with the lowest squared error on the held-out rows (first
/// wins on ties). Falls back to p.l1_penalty when either side is empty.
inline double lasso_select_penalty(const Matrix& x, const Vector& y, const std::vector<bool>& holdout,
                                   const LassoParams& p) {
  std::vector<Eigen::Index> fit_rows, val_rows;
  for (Eigen::Index i = 0; i < x.rows(); ++i) (holdout[static_cast<std::size_t>(i)] ? val_rows : fit_rows).push_back(i);
  if (p.penalty_grid.empty() || fit_rows.empty() || val_rows.empty()) return p.l1_penalty;
  const Matrix xf = x(fit_rows, Eigen::all), xv = x(val_rows, Eigen::all);
  const Vector yf = y(fit_rows), yv = y(val_rows);
  double best = p.l1_penalty, best_err = std::numeric_limits<double>::infinity();
  for (double lambda : p.penalty_grid) {
    auto q = p;
    q.l1_penalty = lambda;
    const double err = (lasso_fit(xf, yf, q).predict(xv) - yv).squaredNorm();
    if (err < best_err) {
      best_err = err;
      best = lambda;
    }
  }
  return best;
}

inline nlohmann::json to_json(const LassoModel& m) {
  return {{"weights", std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size())},
          {"intercept", m.intercept}};
}

inline LassoModel lasso_from_json(const nlohmann::json& j) {
  LassoModel m;
  const auto w = j.at("weights").get<std::vector<double>>();
  m.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  m.intercept = j.at("intercept").get<double>();
  return m;
}

}  // namespace lactate::models
