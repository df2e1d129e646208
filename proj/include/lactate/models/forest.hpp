#pragma once

// Random-forest regression: CART trees grown greedily on variance reduction
// over bootstrap resamples, with a random feature subset per split.
// Prediction is the mean of tree outputs.

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>
#include <vector>

#include "lactate/datamodel.hpp"
#include "lactate/rng.hpp"

namespace lactate::models {

struct ForestParams {
  int n_trees = 100;
  int max_depth = -1;  // unbounded
  int min_samples_leaf = 5;
  double max_features = 1.0 / 3.0;  // fraction of columns tried per split
  bool bootstrap = true;
  std::size_t max_samples = 0;  // rows drawn per tree; 0 = n
  std::uint64_t rng_seed = 0;
  int n_threads = 1;

  void validate() const {
    if (n_trees < 1) throw ConfigError("forest: n_trees must be >= 1");
    if (min_samples_leaf < 1) throw ConfigError("forest: min_samples_leaf must be >= 1");
    if (!(max_features > 0 && max_features <= 1)) throw ConfigError("forest: max_features must lie in (0, 1]");
  }
};

struct TreeNode {
  int feature = -1;  // -1 = leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  template <typename Row>
  double predict(const Row& x) const {
    int n = 0;
    while (nodes_[static_cast<std::size_t>(n)].feature >= 0) {
      const auto& node = nodes_[static_cast<std::size_t>(n)];
      n = x(node.feature) <= node.threshold ? node.left : node.right;
    }
    return nodes_[static_cast<std::size_t>(n)].value;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int depth() const { return depth_from(0); }

 private:
  int depth_from(int n) const {
    const auto& node = nodes_[static_cast<std::size_t>(n)];
    if (node.feature < 0) return 0;
    return 1 + std::max(depth_from(node.left), depth_from(node.right));
  }

  std::vector<TreeNode> nodes_;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const Vector& y, const ForestParams& p, Rng& rng)
      : x_(x), y_(y), p_(p), rng_(rng), features_(static_cast<std::size_t>(x.cols())) {
    std::iota(features_.begin(), features_.end(), 0);
    mtry_ = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::floor(p.max_features * static_cast<double>(x.cols()))));
    mtry_ = std::min(mtry_, x.cols());
  }

  std::vector<TreeNode> build(std::vector<Eigen::Index> rows) {
    nodes_.clear();
    grow(rows, 0);
    return std::move(nodes_);
  }

 private:
  int grow(std::vector<Eigen::Index>& rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double sum = 0.0;
    for (auto r : rows) sum += y_(r);
    const double n = static_cast<double>(rows.size());
    nodes_[static_cast<std::size_t>(id)].value = sum / n;

    const auto leaf = static_cast<std::size_t>(p_.min_samples_leaf);
    if ((p_.max_depth >= 0 && depth >= p_.max_depth) || rows.size() < 2 * leaf || x_.cols() == 0) return id;
    bool constant = true;
    for (auto r : rows)
      if (y_(r) != y_(rows.front())) {
        constant = false;
        break;
      }
    if (constant) return id;

    // Partial Fisher-Yates: the first mtry entries are this node's candidates.
    for (Eigen::Index k = 0; k < mtry_; ++k) {
      const auto j = static_cast<std::size_t>(k) +
                     static_cast<std::size_t>(uniform_index(rng_, features_.size() - static_cast<std::size_t>(k)));
      std::swap(features_[static_cast<std::size_t>(k)], features_[j]);
    }

    const double parent = sum * sum / n;
    double best_gain = parent + 1e-12 * std::max(1.0, std::abs(parent));
    int best_feature = -1;
    double best_threshold = 0.0;
    pairs_.resize(rows.size());
    for (Eigen::Index k = 0; k < mtry_; ++k) {
      const int f = features_[static_cast<std::size_t>(k)];
      for (std::size_t i = 0; i < rows.size(); ++i) pairs_[i] = {x_(rows[i], f), y_(rows[i])};
      std::sort(pairs_.begin(), pairs_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      double left = 0.0;
      for (std::size_t i = 0; i + 1 < pairs_.size(); ++i) {
        left += pairs_[i].second;
        const std::size_t nl = i + 1, nr = pairs_.size() - nl;
        if (nl < leaf) continue;
        if (nr < leaf) break;
        if (pairs_[i].first == pairs_[i + 1].first) continue;
        const double right = sum - left;
        const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          double t = 0.5 * (pairs_[i].first + pairs_[i + 1].first);
          if (!(t < pairs_[i + 1].first)) t = pairs_[i].first;
          best_threshold = t;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<Eigen::Index> left_rows, right_rows;
    for (auto r : rows) (x_(r, best_feature) <= best_threshold ? left_rows : right_rows).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(left_rows, depth + 1);
    const int r = grow(right_rows, depth + 1);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  const Matrix& x_;
  const Vector& y_;
  const ForestParams& p_;
  Rng& rng_;
  std::vector<int> features_;
  Eigen::Index mtry_ = 1;
  std::vector<TreeNode> nodes_;
  std::vector<std::pair<double, double>> pairs_;
};

}  // namespace detail

class RandomForest {
 public:
  RandomForest() = default;
  explicit RandomForest(std::vector<RegressionTree> trees) : trees_(std::move(trees)) {}

  template <typename Row>
  double predict_row(const Row& x) const {
    double acc = 0.0;
    for (const auto& t : trees_) acc += t.predict(x);
    return acc / static_cast<double>(trees_.size());
  }

  Vector predict(const Matrix& x) const {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_row(x.row(i));
    return out;
  }

  const std::vector<RegressionTree>& trees() const { return trees_; }

 private:
  std::vector<RegressionTree> trees_;
};

/// Tree t uses the stream derive_seed(rng_seed, t), so the result does not
/// depend on n_threads.
inline RandomForest forest_fit(const Matrix& x, const Vector& y, const ForestParams& p) {
  p.validate();
  if (x.rows() == 0) throw std::invalid_argument("forest_fit: empty training set");
  if (x.rows() != y.size()) throw std::invalid_argument("forest_fit: X/y row mismatch");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("forest_fit: non-finite input");

  const auto n = static_cast<std::uint64_t>(x.rows());
  const std::uint64_t draw = p.max_samples > 0 ? std::min<std::uint64_t>(p.max_samples, n) : n;
  std::vector<RegressionTree> trees(static_cast<std::size_t>(p.n_trees));
  auto build = [&](int t) {
    Rng rng(derive_seed(p.rng_seed, static_cast<std::uint64_t>(t)));
    std::vector<Eigen::Index> rows(draw);
    if (p.bootstrap) {
      for (auto& r : rows) r = static_cast<Eigen::Index>(uniform_index(rng, n));
    } else if (draw == n) {
      std::iota(rows.begin(), rows.end(), 0);
    } else {
      std::vector<Eigen::Index> all(n);
      std::iota(all.begin(), all.end(), 0);
      shuffle(std::span<Eigen::Index>(all), rng);
      std::copy_n(all.begin(), draw, rows.begin());
    }
    detail::TreeBuilder builder(x, y, p, rng);
    trees[static_cast<std::size_t>(t)] = RegressionTree(builder.build(std::move(rows)));
  };

  const int threads = std::max(1, std::min(p.n_threads, p.n_trees));
  if (threads == 1) {
    for (int t = 0; t < p.n_trees; ++t) build(t);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k)
      pool.emplace_back([&] {
        for (int t = next++; t < p.n_trees; t = next++) build(t);
      });
    for (auto& th : pool) th.join();
  }
  return RandomForest(std::move(trees));
}

inline Vector forest_predict(const RandomForest& forest, const Matrix& x) { return forest.predict(x); }

inline nlohmann::json to_json(const RandomForest& f) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : f.trees()) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes()) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    trees.push_back(std::move(nodes));
  }
  return trees;
}

inline RandomForest forest_from_json(const nlohmann::json& j) {
  std::vector<RegressionTree> trees;
  for (const auto& t : j) {
    std::vector<TreeNode> nodes;
    for (const auto& n : t)
      nodes.push_back({n[0].get<int>(), n[1].get<double>(), n[2].get<int>(), n[3].get<int>(), n[4].get<double>()});
    trees.emplace_back(std::move(nodes));
  }
  return RandomForest(std::move(trees));
}

}  // namespace lactate::models
