#pragma once

// Low-rank methods on standardized stay-bin rows: probabilistic PCA (EM with
// missing entries), alternating-least-squares matrix factorization, and
// SoftImpute (iterative soft-thresholded SVD).

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <map>

#include "lactate/impute/model.hpp"
#include "lactate/rng.hpp"

namespace lactate::impute {

/// Rows grouped by their observation pattern.
struct PatternGroup {
  std::vector<Eigen::Index> observed;
  std::vector<Eigen::Index> missing;
  std::vector<Eigen::Index> rows;
};

inline std::vector<PatternGroup> group_patterns(const MaskMatrix& m) {
  std::map<std::string, std::size_t> index;
  std::vector<PatternGroup> groups;
  std::string key(static_cast<std::size_t>(m.cols()), '0');
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) key[static_cast<std::size_t>(j)] = m(i, j) ? '1' : '0';
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) {
      PatternGroup g;
      for (Eigen::Index j = 0; j < m.cols(); ++j) (m(i, j) ? g.observed : g.missing).push_back(j);
      groups.push_back(std::move(g));
    }
    groups[it->second].rows.push_back(i);
  }
  return groups;
}

inline Matrix gather(const Matrix& x, const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& cols) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = x(rows[a], cols[b]);
  return out;
}

/// Top-k right singular vectors and singular values via the Gram matrix.
inline std::pair<Matrix, Vector> top_right_singular(const Matrix& y, Eigen::Index k) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(y.transpose() * y);
  const auto f = y.cols();
  k = std::min(k, f);
  Matrix v(f, k);
  Vector s(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    v.col(c) = es.eigenvectors().col(f - 1 - c);
    s(c) = std::sqrt(std::max(0.0, es.eigenvalues()(f - 1 - c)));
  }
  return {v, s};
}

// ---------------------------------------------------------------------------

class PpcaModel : public RowModel {
 public:
  struct Report {
    int iterations = 0;
    bool converged = false;
  };

  static std::unique_ptr<PpcaModel> fit(const AlignedGrid& train, const ImputerSpec& spec) {
    auto m = std::make_unique<PpcaModel>();
    const Matrix raw = flatten_values(train);
    const MaskMatrix mask = flatten_mask(train);
    m->scaler_ = ObservedScaler::fit(raw, mask, "impute.ppca");
    const Matrix x = zero_filled(m->scaler_.forward(raw), mask);
    const auto f = x.cols();
    const Eigen::Index k = std::max<Eigen::Index>(1, std::min<Eigen::Index>(spec.ppca_components, f - 1));
    const auto groups = group_patterns(mask);

    // Initialize from the SVD of the zero-filled matrix.
    const double n_rows = std::max<double>(1.0, static_cast<double>(x.rows()));
    auto [v, s] = top_right_singular(x, f);
    m->w_ = v.leftCols(k) * (s.head(k) / std::sqrt(n_rows)).asDiagonal();
    m->mu_ = Vector::Zero(f);
    double tail = 0;
    for (Eigen::Index c = k; c < f; ++c) tail += s(c) * s(c) / n_rows;
    m->sigma2_ = f > k ? std::max(tail / static_cast<double>(f - k), 1e-3) : 1e-3;
    const double floor = 1e-12;

    for (int it = 0; it < spec.ppca_max_iter; ++it) {
      std::vector<Matrix> a(static_cast<std::size_t>(f), Matrix::Zero(k + 1, k + 1));
      std::vector<Vector> rhs(static_cast<std::size_t>(f), Vector::Zero(k + 1));
      std::vector<Matrix> z(groups.size());
      std::vector<Matrix> minv(groups.size());
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& pg = groups[g];
        if (pg.observed.empty()) continue;
        const Matrix wo = m->w_(pg.observed, Eigen::all);
        Matrix mm = wo.transpose() * wo;
        mm.diagonal().array() += m->sigma2_;
        minv[g] = mm.ldlt().solve(Matrix::Identity(k, k));
        const Matrix xo = gather(x, pg.rows, pg.observed).rowwise() - m->mu_(pg.observed).transpose();
        z[g] = xo * wo * minv[g];  // minv symmetric
        Matrix zz(k + 1, k + 1);
        const double np = static_cast<double>(pg.rows.size());
        zz.topLeftCorner(k, k) = z[g].transpose() * z[g] + np * m->sigma2_ * minv[g];
        zz.topRightCorner(k, 1) = z[g].colwise().sum().transpose();
        zz.bottomLeftCorner(1, k) = zz.topRightCorner(k, 1).transpose();
        zz(k, k) = np;
        const Matrix xraw = gather(x, pg.rows, pg.observed);
        for (std::size_t c = 0; c < pg.observed.size(); ++c) {
          const auto j = static_cast<std::size_t>(pg.observed[c]);
          a[j] += zz;
          rhs[j].head(k) += z[g].transpose() * xraw.col(static_cast<Eigen::Index>(c));
          rhs[j](k) += xraw.col(static_cast<Eigen::Index>(c)).sum();
        }
      }
      Matrix w_new = m->w_;
      Vector mu_new = m->mu_;
      for (Eigen::Index j = 0; j < f; ++j) {
        const auto& aj = a[static_cast<std::size_t>(j)];
        if (aj(k, k) == 0) continue;
        Matrix reg = aj;
        reg.topLeftCorner(k, k).diagonal().array() += 1e-12;
        const Vector sol = reg.ldlt().solve(rhs[static_cast<std::size_t>(j)]);
        w_new.row(j) = sol.head(k).transpose();
        mu_new(j) = sol(k);
      }
      double sse = 0, count = 0;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& pg = groups[g];
        if (pg.observed.empty()) continue;
        const Matrix wo = w_new(pg.observed, Eigen::all);
        const Matrix resid = (gather(x, pg.rows, pg.observed) - z[g] * wo.transpose()).rowwise() -
                             mu_new(pg.observed).transpose();
        const double np = static_cast<double>(pg.rows.size());
        sse += resid.squaredNorm() + np * m->sigma2_ * (wo * minv[g] * wo.transpose()).trace();
        count += np * static_cast<double>(pg.observed.size());
      }
      const double sigma2_new = std::max(count > 0 ? sse / count : floor, floor);
      const double scale = std::max(1e-12, std::sqrt(m->w_.squaredNorm() + m->mu_.squaredNorm()));
      const double delta = std::sqrt((w_new - m->w_).squaredNorm() + (mu_new - m->mu_).squaredNorm()) / scale;
      const double dsig = std::abs(sigma2_new - m->sigma2_) / std::max(m->sigma2_, floor);
      m->w_ = std::move(w_new);
      m->mu_ = std::move(mu_new);
      m->sigma2_ = sigma2_new;
      m->report_.iterations = it + 1;
      if (delta < spec.ppca_tolerance && (dsig < spec.ppca_tolerance || sigma2_new <= floor * 1.0000001)) {
        m->report_.converged = true;
        break;
      }
    }
    return m;
  }

  Matrix complete_rows(const Matrix& z, const MaskMatrix& mask) const override {
    Matrix out = z;
    const auto k = w_.cols();
    for (const auto& pg : group_patterns(mask)) {
      if (pg.missing.empty()) continue;
      if (pg.observed.empty()) {
        for (auto r : pg.rows)
          for (auto j : pg.missing) out(r, j) = mu_(j);
        continue;
      }
      const Matrix wo = w_(pg.observed, Eigen::all);
      Matrix mm = wo.transpose() * wo;
      mm.diagonal().array() += sigma2_;
      const Matrix proj = mm.ldlt().solve(wo.transpose());  // k x |O|
      const Matrix zs = (gather(z, pg.rows, pg.observed).rowwise() - mu_(pg.observed).transpose()) * proj.transpose();
      const Matrix fill = (zs * w_(pg.missing, Eigen::all).transpose()).rowwise() + mu_(pg.missing).transpose();
      for (std::size_t a = 0; a < pg.rows.size(); ++a)
        for (std::size_t b = 0; b < pg.missing.size(); ++b)
          out(pg.rows[a], pg.missing[b]) = fill(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
    (void)k;
    return out;
  }

  /// Posterior-mean reconstruction of every entry (observed ones included).
  Matrix reconstruct_rows(const Matrix& z, const MaskMatrix& mask) const {
    Matrix out(z.rows(), z.cols());
    for (const auto& pg : group_patterns(mask)) {
      if (pg.observed.empty()) {
        for (auto r : pg.rows) out.row(r) = mu_.transpose();
        continue;
      }
      const Matrix wo = w_(pg.observed, Eigen::all);
      Matrix mm = wo.transpose() * wo;
      mm.diagonal().array() += sigma2_;
      const Matrix proj = mm.ldlt().solve(wo.transpose());
      const Matrix zs = (gather(z, pg.rows, pg.observed).rowwise() - mu_(pg.observed).transpose()) * proj.transpose();
      const Matrix rec = (zs * w_.transpose()).rowwise() + mu_.transpose();
      for (std::size_t a = 0; a < pg.rows.size(); ++a) out.row(pg.rows[a]) = rec.row(static_cast<Eigen::Index>(a));
    }
    return out;
  }

  nlohmann::json state() const override {
    return {{"scaler", scaler_json(scaler_)}, {"w", mat_json(w_)}, {"mu", vec_json(mu_)}, {"sigma2", sigma2_}};
  }

  static std::unique_ptr<PpcaModel> from_state(const nlohmann::json& j) {
    auto m = std::make_unique<PpcaModel>();
    m->scaler_ = json_scaler(j.at("scaler"));
    m->w_ = json_mat(j.at("w"));
    m->mu_ = json_vec(j.at("mu"));
    m->sigma2_ = j.at("sigma2").get<double>();
    return m;
  }

  const Matrix& loadings() const { return w_; }
  double sigma2() const { return sigma2_; }
  const Report& report() const { return report_; }

 private:
  Matrix w_;
  Vector mu_;
  double sigma2_ = 1.0;
  Report report_;
};

// ---------------------------------------------------------------------------

/// X ~ 1 b^T + U V^T with ridge penalty on U and V (not on the column bias b).
class MfModel : public RowModel {
 public:
  static std::unique_ptr<MfModel> fit(const AlignedGrid& train, const ImputerSpec& spec) {
    auto m = std::make_unique<MfModel>();
    const Matrix raw = flatten_values(train);
    const MaskMatrix mask = flatten_mask(train);
    m->scaler_ = ObservedScaler::fit(raw, mask, "impute.mf");
    m->ridge_ = spec.mf_ridge;
    const Matrix x = zero_filled(m->scaler_.forward(raw), mask);
    const auto f = x.cols();
    const Eigen::Index r = std::max<Eigen::Index>(1, std::min<Eigen::Index>({spec.mf_rank, f, std::max<Eigen::Index>(1, x.rows())}));
    auto [v, s] = top_right_singular(x, r);
    m->v_ = v * s.cwiseSqrt().asDiagonal();
    m->b_ = Vector::Zero(f);
    const auto groups = group_patterns(mask);
    std::vector<std::vector<Eigen::Index>> col_rows(static_cast<std::size_t>(f));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < f; ++j)
        if (mask(i, j)) col_rows[static_cast<std::size_t>(j)].push_back(i);

    Matrix u = Matrix::Zero(x.rows(), r);
    double prev = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < spec.mf_sweeps; ++sweep) {
      m->solve_rows(x, groups, u);
      for (Eigen::Index j = 0; j < f; ++j) {
        const auto& rows = col_rows[static_cast<std::size_t>(j)];
        if (rows.empty()) continue;
        Matrix a = Matrix::Zero(r + 1, r + 1);
        Vector rhs = Vector::Zero(r + 1);
        for (auto i : rows) {
          a.topLeftCorner(r, r).noalias() += u.row(i).transpose() * u.row(i);
          a.topRightCorner(r, 1) += u.row(i).transpose();
          rhs.head(r) += u.row(i).transpose() * x(i, j);
          rhs(r) += x(i, j);
        }
        a.bottomLeftCorner(1, r) = a.topRightCorner(r, 1).transpose();
        a(r, r) = static_cast<double>(rows.size());
        a.topLeftCorner(r, r).diagonal().array() += m->ridge_;
        const Vector sol = a.ldlt().solve(rhs);
        m->v_.row(j) = sol.head(r).transpose();
        m->b_(j) = sol(r);
      }
      double obj = m->ridge_ * (u.squaredNorm() + m->v_.squaredNorm());
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < f; ++j)
          if (mask(i, j)) {
            const double e = x(i, j) - m->b_(j) - u.row(i).dot(m->v_.row(j));
            obj += e * e;
          }
      m->objective_.push_back(obj);
      if (std::abs(prev - obj) <= 1e-12 * std::max(1.0, obj)) break;
      prev = obj;
    }
    return m;
  }

  Matrix complete_rows(const Matrix& z, const MaskMatrix& mask) const override {
    const auto groups = group_patterns(mask);
    Matrix u(z.rows(), v_.cols());
    solve_rows(zero_filled(z, mask), groups, u);
    Matrix out = z;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      for (Eigen::Index j = 0; j < z.cols(); ++j)
        if (!mask(i, j)) out(i, j) = b_(j) + u.row(i).dot(v_.row(j));
    return out;
  }

  nlohmann::json state() const override {
    return {{"scaler", scaler_json(scaler_)}, {"v", mat_json(v_)}, {"b", vec_json(b_)}, {"ridge", ridge_}};
  }

  static std::unique_ptr<MfModel> from_state(const nlohmann::json& j) {
    auto m = std::make_unique<MfModel>();
    m->scaler_ = json_scaler(j.at("scaler"));
    m->v_ = json_mat(j.at("v"));
    m->b_ = json_vec(j.at("b"));
    m->ridge_ = j.at("ridge").get<double>();
    return m;
  }

  const std::vector<double>& objective_trace() const { return objective_; }

 private:
  void solve_rows(const Matrix& x, const std::vector<PatternGroup>& groups, Matrix& u) const {
    const auto r = v_.cols();
    for (const auto& pg : groups) {
      if (pg.observed.empty()) {
        for (auto i : pg.rows) u.row(i).setZero();
        continue;
      }
      const Matrix vo = v_(pg.observed, Eigen::all);
      Matrix a = vo.transpose() * vo;
      a.diagonal().array() += std::max(ridge_, 1e-12);
      const Eigen::LDLT<Matrix> ldlt(a);
      const Matrix xo = gather(x, pg.rows, pg.observed).rowwise() - b_(pg.observed).transpose();
      const Matrix sol = ldlt.solve(vo.transpose() * xo.transpose());  // r x rows
      for (std::size_t a2 = 0; a2 < pg.rows.size(); ++a2) u.row(pg.rows[a2]) = sol.col(static_cast<Eigen::Index>(a2)).transpose();
    }
    (void)r;
  }

  Matrix v_;
  Vector b_;
  double ridge_ = 1e-2;
  std::vector<double> objective_;
};

// ---------------------------------------------------------------------------

class SoftImputeModel : public RowModel {
 public:
  struct Trace {
    double lambda = 0;
    std::vector<double> objective;  // per iteration
  };

  static std::unique_ptr<SoftImputeModel> fit(const AlignedGrid& train, const ImputerSpec& spec) {
    auto m = std::make_unique<SoftImputeModel>();
    const Matrix raw = flatten_values(train);
    const MaskMatrix mask = flatten_mask(train);
    m->scaler_ = ObservedScaler::fit(raw, mask, "impute.soft_impute");
    const Matrix x = zero_filled(m->scaler_.forward(raw), mask);
    m->fit_rows(x, mask, spec);
    return m;
  }

  /// Runs the lambda path on a zero-filled standardized matrix.
  void fit_rows(const Matrix& x, const MaskMatrix& mask, const ImputerSpec& spec) {
    const auto f = x.cols();
    const double lambda_max = top_right_singular(x, 1).second(0);
    Matrix zhat = Matrix::Zero(x.rows(), f);
    traces_.clear();
    for (int step = 0; step < spec.soft_steps; ++step) {
      const double t = spec.soft_steps == 1 ? 1.0 : static_cast<double>(step) / (spec.soft_steps - 1);
      const double lambda = lambda_max * std::pow(spec.soft_min_ratio, t);
      Trace tr;
      tr.lambda = lambda;
      for (int it = 0; it < spec.soft_max_iter; ++it) {
        Matrix y = zhat;
        for (Eigen::Index i = 0; i < y.size(); ++i)
          if (mask.data()[i]) y.data()[i] = x.data()[i];
        auto [v, s] = top_right_singular(y, f);
        Vector d = (s.array() - lambda).cwiseMax(0.0);
        if (spec.soft_max_rank > 0)
          for (Eigen::Index c = spec.soft_max_rank; c < d.size(); ++c) d(c) = 0;
        Vector ratio = Vector::Zero(d.size());
        for (Eigen::Index c = 0; c < d.size(); ++c)
          if (d(c) > 0) ratio(c) = d(c) / s(c);
        Matrix next = y * (v * ratio.asDiagonal() * v.transpose());
        double fit_err = 0;
        for (Eigen::Index i = 0; i < next.size(); ++i)
          if (mask.data()[i]) {
            const double e = x.data()[i] - next.data()[i];
            fit_err += e * e;
          }
        tr.objective.push_back(0.5 * fit_err + lambda * d.sum());
        const double change = (next - zhat).squaredNorm() / std::max(zhat.squaredNorm(), 1e-300);
        zhat = std::move(next);
        v_ = v;
        s_ = s;
        d_ = d;
        if (change < spec.soft_tolerance) break;
      }
      traces_.push_back(std::move(tr));
    }
    build_projection();
  }

  Matrix complete_rows(const Matrix& z, const MaskMatrix& mask) const override {
    Matrix out = z;
    for (const auto& pg : group_patterns(mask)) {
      if (pg.missing.empty()) continue;
      const Matrix pmm = p_(pg.missing, pg.missing);
      const Matrix a = Matrix::Identity(static_cast<Eigen::Index>(pg.missing.size()), static_cast<Eigen::Index>(pg.missing.size())) - pmm;
      const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
      Matrix rhs = Matrix::Zero(static_cast<Eigen::Index>(pg.missing.size()), static_cast<Eigen::Index>(pg.rows.size()));
      if (!pg.observed.empty()) rhs = p_(pg.missing, pg.observed) * gather(z, pg.rows, pg.observed).transpose();
      const Matrix sol = cod.solve(rhs);
      for (std::size_t r = 0; r < pg.rows.size(); ++r)
        for (std::size_t c = 0; c < pg.missing.size(); ++c)
          out(pg.rows[r], pg.missing[c]) = sol(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r));
    }
    return out;
  }

  nlohmann::json state() const override {
    return {{"scaler", scaler_json(scaler_)}, {"v", mat_json(v_)}, {"s", vec_json(s_)}, {"d", vec_json(d_)}};
  }

  static std::unique_ptr<SoftImputeModel> from_state(const nlohmann::json& j) {
    auto m = std::make_unique<SoftImputeModel>();
    m->scaler_ = json_scaler(j.at("scaler"));
    m->v_ = json_mat(j.at("v"));
    m->s_ = json_vec(j.at("s"));
    m->d_ = json_vec(j.at("d"));
    m->build_projection();
    return m;
  }

  const std::vector<Trace>& traces() const { return traces_; }
  const Vector& shrunk_singular_values() const { return d_; }

 private:
  void build_projection() {
    Vector ratio = Vector::Zero(d_.size());
    for (Eigen::Index c = 0; c < d_.size(); ++c)
      if (d_(c) > 0) ratio(c) = d_(c) / s_(c);
    p_ = v_ * ratio.asDiagonal() * v_.transpose();
  }

  Matrix v_;
  Vector s_, d_;
  Matrix p_;
  std::vector<Trace> traces_;
};

}  // namespace lactate::impute
