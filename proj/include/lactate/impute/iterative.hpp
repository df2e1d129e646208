#pragma once

// Chained-equation methods on standardized stay-bin rows: MICE with ridge
// regressions and MissForest with random-forest regressions.

#include <Eigen/Cholesky>

#include <numeric>

#include "lactate/impute/model.hpp"
#include "lactate/models/forest.hpp"
#include "lactate/rng.hpp"

namespace lactate::impute {

/// Features in ascending order of missing count (ties by index).
inline std::vector<Eigen::Index> visit_order(const MaskMatrix& mask) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(mask.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<Eigen::Index> missing(order.size());
  for (Eigen::Index j = 0; j < mask.cols(); ++j) missing[static_cast<std::size_t>(j)] = mask.rows() - mask.col(j).count();
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return missing[static_cast<std::size_t>(a)] < missing[static_cast<std::size_t>(b)];
  });
  return order;
}

/// All columns except j.
inline Matrix drop_column(const Matrix& x, Eigen::Index j) {
  Matrix out(x.rows(), x.cols() - 1);
  out.leftCols(j) = x.leftCols(j);
  out.rightCols(x.cols() - 1 - j) = x.rightCols(x.cols() - 1 - j);
  return out;
}

class MiceModel : public RowModel {
 public:
  struct Regression {
    Vector beta;  // F - 1 weights then intercept; empty = feature skipped
    double noise_sd = 0.0;
  };

  static std::unique_ptr<MiceModel> fit(const AlignedGrid& train, const ImputerSpec& spec) {
    auto m = std::make_unique<MiceModel>();
    const Matrix raw = flatten_values(train);
    const MaskMatrix mask = flatten_mask(train);
    m->scaler_ = ObservedScaler::fit(raw, mask, "impute.mice");
    m->seed_ = spec.seed;
    m->order_ = visit_order(mask);
    const Matrix z0 = zero_filled(m->scaler_.forward(raw), mask);
    const auto f = z0.cols();
    const auto chains = static_cast<std::size_t>(spec.mice_chains), rounds = static_cast<std::size_t>(spec.mice_rounds);
    m->models_.assign(chains, std::vector<std::vector<Regression>>(rounds, std::vector<Regression>(static_cast<std::size_t>(f))));
    m->round_change_.assign(rounds, 0.0);
    for (std::size_t c = 0; c < chains; ++c) {
      Rng rng(derive_seed(spec.seed, 1, c));
      Matrix x = z0;
      for (std::size_t r = 0; r < rounds; ++r) {
        const Matrix before = x;
        for (auto j : m->order_) {
          std::vector<Eigen::Index> obs, miss;
          for (Eigen::Index i = 0; i < x.rows(); ++i) (mask(i, j) ? obs : miss).push_back(i);
          if (obs.size() < 2 || f < 2) continue;
          auto& reg = m->models_[c][r][static_cast<std::size_t>(j)];
          reg = ridge(x, j, obs, spec.mice_ridge);
          for (auto i : miss) x(i, j) = predict(reg, x, i, j) + reg.noise_sd * standard_normal(rng);
        }
        m->round_change_[r] += (x - before).squaredNorm();
      }
    }
    for (auto& v : m->round_change_) v = std::sqrt(v);
    return m;
  }

  Matrix complete_rows(const Matrix& z, const MaskMatrix& mask) const override {
    Matrix acc = Matrix::Zero(z.rows(), z.cols());
    const Matrix z0 = zero_filled(z, mask);
    for (std::size_t c = 0; c < models_.size(); ++c) {
      Rng rng(derive_seed(seed_, 2, c));
      Matrix x = z0;
      for (const auto& round : models_[c])
        for (auto j : order_) {
          const auto& reg = round[static_cast<std::size_t>(j)];
          if (reg.beta.size() == 0) continue;
          for (Eigen::Index i = 0; i < x.rows(); ++i)
            if (!mask(i, j)) x(i, j) = predict(reg, x, i, j) + reg.noise_sd * standard_normal(rng);
        }
      acc += x;
    }
    return acc / static_cast<double>(models_.size());
  }

  /// Frobenius norm of the change in the completed matrix per round, pooled over chains.
  const std::vector<double>& round_changes() const { return round_change_; }

  nlohmann::json state() const override {
    nlohmann::json chains = nlohmann::json::array();
    for (const auto& chain : models_) {
      nlohmann::json rounds = nlohmann::json::array();
      for (const auto& round : chain) {
        nlohmann::json regs = nlohmann::json::array();
        for (const auto& reg : round) regs.push_back({{"beta", vec_json(reg.beta)}, {"noise_sd", reg.noise_sd}});
        rounds.push_back(std::move(regs));
      }
      chains.push_back(std::move(rounds));
    }
    return {{"scaler", scaler_json(scaler_)},
            {"seed", seed_},
            {"order", order_},
            {"round_change", round_change_},
            {"chains", chains}};
  }

  static std::unique_ptr<MiceModel> from_state(const nlohmann::json& j) {
    auto m = std::make_unique<MiceModel>();
    m->scaler_ = json_scaler(j.at("scaler"));
    m->seed_ = j.at("seed").get<std::uint64_t>();
    m->order_ = j.at("order").get<std::vector<Eigen::Index>>();
    m->round_change_ = j.at("round_change").get<std::vector<double>>();
    for (const auto& chain : j.at("chains")) {
      auto& c = m->models_.emplace_back();
      for (const auto& round : chain) {
        auto& r = c.emplace_back();
        for (const auto& reg : round) r.push_back({json_vec(reg.at("beta")), reg.at("noise_sd").get<double>()});
      }
    }
    return m;
  }

 private:
  static Regression ridge(const Matrix& x, Eigen::Index j, const std::vector<Eigen::Index>& rows, double lambda) {
    const auto f = x.cols();
    Matrix a(static_cast<Eigen::Index>(rows.size()), f);
    Vector y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t q = 0; q < rows.size(); ++q) {
      const auto i = rows[q];
      const auto row = static_cast<Eigen::Index>(q);
      a.row(row).head(j) = x.row(i).head(j);
      a.row(row).segment(j, f - 1 - j) = x.row(i).tail(f - 1 - j);
      a(row, f - 1) = 1.0;
      y(row) = x(i, j);
    }
    Matrix g = a.transpose() * a;
    g.diagonal().head(f - 1).array() += lambda;
    g(f - 1, f - 1) += 1e-12;
    Regression reg;
    reg.beta = g.ldlt().solve(a.transpose() * y);
    reg.noise_sd = std::sqrt((y - a * reg.beta).squaredNorm() / static_cast<double>(rows.size()));
    return reg;
  }

  static double predict(const Regression& reg, const Matrix& x, Eigen::Index i, Eigen::Index j) {
    const auto f = x.cols();
    return x.row(i).head(j).dot(reg.beta.head(j)) + x.row(i).tail(f - 1 - j).dot(reg.beta.segment(j, f - 1 - j)) +
           reg.beta(f - 1);
  }

  std::uint64_t seed_ = 0;
  std::vector<Eigen::Index> order_;
  std::vector<std::vector<std::vector<Regression>>> models_;  // chain, round, feature
  std::vector<double> round_change_;
};

// ---------------------------------------------------------------------------

class MissForestModel : public RowModel {
 public:
  static std::unique_ptr<MissForestModel> fit(const AlignedGrid& train, const ImputerSpec& spec, int n_threads = 1) {
    auto m = std::make_unique<MissForestModel>();
    const Matrix raw = flatten_values(train);
    const MaskMatrix mask = flatten_mask(train);
    m->scaler_ = ObservedScaler::fit(raw, mask, "impute.missforest");
    m->order_ = visit_order(mask);
    const auto f = raw.cols();
    m->forests_.assign(static_cast<std::size_t>(f), std::nullopt);
    Matrix x = zero_filled(m->scaler_.forward(raw), mask);

    auto params_for = [&](std::uint64_t round, Eigen::Index j) {
      models::ForestParams p;
      p.n_trees = spec.forest_trees;
      p.min_samples_leaf = spec.forest_min_samples_leaf;
      p.max_features = spec.forest_max_features;
      p.max_samples = spec.forest_max_samples;
      p.rng_seed = derive_seed(spec.seed, round, static_cast<std::uint64_t>(j));
      p.n_threads = n_threads;
      return p;
    };
    auto fit_feature = [&](const Matrix& cur, Eigen::Index j, std::uint64_t round) -> std::optional<models::RandomForest> {
      std::vector<Eigen::Index> obs;
      for (Eigen::Index i = 0; i < cur.rows(); ++i)
        if (mask(i, j)) obs.push_back(i);
      if (obs.empty() || f < 2) return std::nullopt;
      const Matrix pred = drop_column(cur, j);
      Matrix xs(static_cast<Eigen::Index>(obs.size()), f - 1);
      Vector ys(static_cast<Eigen::Index>(obs.size()));
      for (std::size_t q = 0; q < obs.size(); ++q) {
        xs.row(static_cast<Eigen::Index>(q)) = pred.row(obs[q]);
        ys(static_cast<Eigen::Index>(q)) = cur(obs[q], j);
      }
      return models::forest_fit(xs, ys, params_for(round, j));
    };

    std::vector<Eigen::Index> incomplete;
    for (auto j : m->order_)
      if (mask.col(j).count() < mask.rows()) incomplete.push_back(j);

    std::vector<std::optional<models::RandomForest>> accepted(static_cast<std::size_t>(f));
    double prev_change = std::numeric_limits<double>::infinity();
    for (int it = 0; it < spec.forest_max_iter && !incomplete.empty(); ++it) {
      const Matrix before = x;
      std::vector<std::optional<models::RandomForest>> round(static_cast<std::size_t>(f));
      for (auto j : incomplete) {
        auto forest = fit_feature(x, j, static_cast<std::uint64_t>(it));
        if (!forest) continue;
        const Matrix pred = drop_column(x, j);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          if (!mask(i, j)) x(i, j) = forest->predict_row(pred.row(i));
        round[static_cast<std::size_t>(j)] = std::move(forest);
      }
      double num = 0, den = 0;
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!mask.data()[i]) {
          num += (x.data()[i] - before.data()[i]) * (x.data()[i] - before.data()[i]);
          den += x.data()[i] * x.data()[i];
        }
      const double change = den > 0 ? num / den : 0.0;
      m->changes_.push_back(change);
      if (change > prev_change) {
        x = before;
        break;
      }
      prev_change = change;
      accepted = std::move(round);
      m->rounds_ = it + 1;
      if (change == 0.0) break;
    }
    for (auto j : incomplete) m->forests_[static_cast<std::size_t>(j)] = std::move(accepted[static_cast<std::size_t>(j)]);
    // Complete training columns still need a model for grids that miss them.
    for (Eigen::Index j = 0; j < f; ++j)
      if (mask.col(j).count() == mask.rows())
        m->forests_[static_cast<std::size_t>(j)] = fit_feature(x, j, static_cast<std::uint64_t>(spec.forest_max_iter));
    m->rounds_ = std::max(m->rounds_, 1);
    return m;
  }

  Matrix complete_rows(const Matrix& z, const MaskMatrix& mask) const override {
    Matrix x = zero_filled(z, mask);
    double prev_change = std::numeric_limits<double>::infinity();
    for (int it = 0; it < rounds_; ++it) {
      const Matrix before = x;
      for (auto j : order_) {
        const auto& forest = forests_[static_cast<std::size_t>(j)];
        if (!forest || mask.col(j).count() == mask.rows()) continue;
        const Matrix pred = drop_column(x, j);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          if (!mask(i, j)) x(i, j) = forest->predict_row(pred.row(i));
      }
      double num = 0, den = 0;
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!mask.data()[i]) {
          num += (x.data()[i] - before.data()[i]) * (x.data()[i] - before.data()[i]);
          den += x.data()[i] * x.data()[i];
        }
      const double change = den > 0 ? num / den : 0.0;
      if (change > prev_change) return before;
      prev_change = change;
    }
    return x;
  }

  /// Relative change sum (new - old)^2 / sum new^2 over missing cells, per round.
  const std::vector<double>& round_changes() const { return changes_; }
  int rounds() const { return rounds_; }

  nlohmann::json state() const override {
    nlohmann::json forests = nlohmann::json::array();
    for (const auto& fo : forests_) forests.push_back(fo ? models::to_json(*fo) : nlohmann::json(nullptr));
    return {{"scaler", scaler_json(scaler_)}, {"order", order_}, {"rounds", rounds_}, {"changes", changes_}, {"forests", forests}};
  }

  static std::unique_ptr<MissForestModel> from_state(const nlohmann::json& j) {
    auto m = std::make_unique<MissForestModel>();
    m->scaler_ = json_scaler(j.at("scaler"));
    m->order_ = j.at("order").get<std::vector<Eigen::Index>>();
    m->rounds_ = j.at("rounds").get<int>();
    m->changes_ = j.at("changes").get<std::vector<double>>();
    for (const auto& fo : j.at("forests"))
      m->forests_.push_back(fo.is_null() ? std::nullopt : std::optional(models::forest_from_json(fo)));
    return m;
  }

 private:
  std::vector<Eigen::Index> order_;
  std::vector<std::optional<models::RandomForest>> forests_;
  std::vector<double> changes_;
  int rounds_ = 0;
};

}  // namespace lactate::impute
