#pragma once

// Stacked LSTM sequence regressor trained by backpropagation through time.
//
// Gate order in every parameter block is (input, forget, candidate, output).
// Sequences in a batch are left-padded to a common length; padded steps carry
// the previous (h, c) through unchanged, so they never affect the output.
// Dropout (inverted) is applied to each layer's output during training only.
// The final hidden state of the top layer feeds a linear head.

#include <json.hpp>

#include <cmath>
#include <numeric>
#include <sstream>
#include <variant>
#include <vector>

#include "lactate/datamodel.hpp"
#include "lactate/models/adam.hpp"
#include "lactate/rng.hpp"

namespace lactate::models {

struct LstmParams {
  int layers = 2;
  int hidden_units = 64;
  double dropout = 0.6;
  double learning_rate = 1e-4;
  int epochs = 20;
  int batch_size = 100;
  std::uint64_t rng_seed = 0;
  /// Train in float; predictions are returned as double either way.
  bool single_precision = false;
  /// Fit on standardized targets and invert at prediction time.
  bool standardize_target = false;

  void validate() const {
    if (layers < 1) throw ConfigError("lstm: layers must be >= 1");
    if (hidden_units < 1) throw ConfigError("lstm: hidden_units must be >= 1");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("lstm: dropout must lie in [0, 1)");
    if (!(learning_rate > 0)) throw ConfigError("lstm: learning_rate must be positive");
    if (epochs < 0 || batch_size < 1) throw ConfigError("lstm: invalid epochs/batch_size");
  }
};

template <typename Scalar>
class LstmNetwork {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  /// Left-padded batch: x is D x (T*B) with step t in columns [t*B, (t+1)*B).
  struct Batch {
    Eigen::Index steps = 0;
    Eigen::Index size = 0;
    Mat x;
    Mat mask;  // 1 x (T*B), 1 = real step
    RowVec target;
  };

  LstmNetwork() = default;

  LstmNetwork(int input_dim, int hidden, int layers) : input_dim_(input_dim), hidden_(hidden), layers_(layers) {
    Eigen::Index n = 0;
    for (int l = 0; l < layers_; ++l) {
      offsets_.push_back(n);
      const Eigen::Index d = l == 0 ? input_dim_ : hidden_;
      n += 4 * hidden_ * d + 4 * hidden_ * hidden_ + 4 * hidden_;
    }
    head_offset_ = n;
    n += hidden_ + 1;
    params_ = Vec::Zero(n);
  }

  int input_dim() const { return input_dim_; }
  int hidden() const { return hidden_; }
  int layers() const { return layers_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  /// Glorot-normal (truncated at two standard deviations) for every weight
  /// matrix, zero biases except forget-gate biases of one.
  void init_glorot(Rng& rng) {
    auto fill = [&](Eigen::Map<Mat> m, double fan_in, double fan_out) {
      const double sd = std::sqrt(2.0 / (fan_in + fan_out)) / 0.87962566103423978;
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        double z = standard_normal(rng);
        while (std::abs(z) > 2.0) z = standard_normal(rng);
        m.data()[i] = static_cast<Scalar>(sd * z);
      }
    };
    params_.setZero();
    for (int l = 0; l < layers_; ++l) {
      auto v = layer(l);
      fill(v.w, static_cast<double>(v.w.cols()), static_cast<double>(v.w.rows()));
      fill(v.u, static_cast<double>(v.u.cols()), static_cast<double>(v.u.rows()));
      v.b.segment(hidden_, hidden_).setOnes();
    }
    fill(Eigen::Map<Mat>(params_.data() + head_offset_, 1, hidden_), hidden_, 1);
  }

  struct LayerView {
    Eigen::Map<Mat> w;
    Eigen::Map<Mat> u;
    Eigen::Map<Vec> b;
  };
  struct ConstLayerView {
    Eigen::Map<const Mat> w;
    Eigen::Map<const Mat> u;
    Eigen::Map<const Vec> b;
  };

  LayerView layer(int l) { return layer_view<LayerView>(params_.data(), l); }
  ConstLayerView layer(int l) const { return layer_view<ConstLayerView>(params_.data(), l); }
  Eigen::Map<const RowVec> head_w() const { return {params_.data() + head_offset_, hidden_}; }
  Scalar head_b() const { return params_(head_offset_ + hidden_); }
  void set_head_b(Scalar v) { params_(head_offset_ + hidden_) = v; }

  /// Packs sequences (each D x L_i, oldest step first) into a left-padded batch.
  template <typename Seq>
  Batch make_batch(const std::vector<const Seq*>& seqs, const std::vector<double>* targets = nullptr) const {
    Batch batch;
    batch.size = static_cast<Eigen::Index>(seqs.size());
    for (const auto* s : seqs) batch.steps = std::max<Eigen::Index>(batch.steps, s->cols());
    const auto b = batch.size, t_max = batch.steps;
    batch.x = Mat::Zero(input_dim_, t_max * b);
    batch.mask = Mat::Zero(1, t_max * b);
    for (Eigen::Index k = 0; k < b; ++k) {
      const auto& s = *seqs[static_cast<std::size_t>(k)];
      if (s.rows() != input_dim_) throw std::invalid_argument("lstm: sequence feature count mismatch");
      const auto pad = t_max - s.cols();
      for (Eigen::Index t = 0; t < s.cols(); ++t) {
        batch.x.col((pad + t) * b + k) = s.col(t).template cast<Scalar>();
        batch.mask(0, (pad + t) * b + k) = Scalar(1);
      }
    }
    batch.target = RowVec::Zero(b);
    if (targets)
      for (Eigen::Index k = 0; k < b; ++k) batch.target(k) = static_cast<Scalar>((*targets)[static_cast<std::size_t>(k)]);
    return batch;
  }

  RowVec predict(const Batch& batch) const {
    Cache cache;
    return forward(batch, cache, 0.0, nullptr);
  }

  /// Mean squared error over the batch; fills `grad` (same layout as params).
  Scalar loss_and_gradient(const Batch& batch, Vec& grad, double dropout, Rng* rng) const {
    Cache cache;
    const RowVec y = forward(batch, cache, dropout, rng);
    const RowVec diff = y - batch.target;
    const Scalar loss = diff.squaredNorm() / static_cast<Scalar>(batch.size);
    backward(batch, cache, (Scalar(2) / static_cast<Scalar>(batch.size)) * diff, grad);
    return loss;
  }

  Scalar loss(const Batch& batch) const {
    const RowVec diff = predict(batch) - batch.target;
    return diff.squaredNorm() / static_cast<Scalar>(batch.size);
  }

 private:
  struct LayerCache {
    Mat input;       // D_l x (T*B), after the previous layer's dropout
    Mat gates;       // 4H x (T*B), post-activation
    Mat c;           // H x (T*B), masked cell state
    Mat tanh_c_new;  // H x (T*B)
    Mat h;           // H x (T*B), masked hidden state
    Mat drop;        // H x (T*B) or H x B (top layer): dropout multipliers
  };
  struct Cache {
    std::vector<LayerCache> layers;
    RowVec head_input_scale;  // unused placeholder for symmetry
    Mat top;                  // H x B, final hidden state after dropout
  };

  template <typename View, typename Ptr>
  View layer_view(Ptr base, int l) const {
    const Eigen::Index d = l == 0 ? input_dim_ : hidden_;
    auto p = base + offsets_[static_cast<std::size_t>(l)];
    const Eigen::Index h4 = 4 * hidden_;
    return View{{p, h4, d}, {p + h4 * d, h4, hidden_}, {p + h4 * d + h4 * hidden_, h4}};
  }

  static Scalar sigmoid(Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); }

  static Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
    Mat m(rows, cols);
    const auto keep = static_cast<Scalar>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(*rng) < p ? Scalar(0) : keep;
    return m;
  }

  RowVec forward(const Batch& batch, Cache& cache, double dropout, Rng* rng) const {
    const auto b = batch.size, t_max = batch.steps, h = static_cast<Eigen::Index>(hidden_);
    const bool train = dropout > 0.0 && rng != nullptr;
    cache.layers.assign(static_cast<std::size_t>(layers_), {});
    Mat input = batch.x;
    for (int l = 0; l < layers_; ++l) {
      auto& lc = cache.layers[static_cast<std::size_t>(l)];
      const auto v = layer(l);
      lc.input = std::move(input);
      lc.gates.noalias() = v.w * lc.input;
      lc.gates.colwise() += v.b;
      lc.c.resize(h, t_max * b);
      lc.h.resize(h, t_max * b);
      lc.tanh_c_new.resize(h, t_max * b);
      Mat h_prev = Mat::Zero(h, b), c_prev = Mat::Zero(h, b);
      for (Eigen::Index t = 0; t < t_max; ++t) {
        auto z = lc.gates.middleCols(t * b, b);
        z.noalias() += v.u * h_prev;
        for (Eigen::Index k = 0; k < b; ++k) {
          const Scalar m = batch.mask(0, t * b + k);
          for (Eigen::Index j = 0; j < h; ++j) {
            const Scalar ig = sigmoid(z(j, k));
            const Scalar fg = sigmoid(z(h + j, k));
            const Scalar gg = std::tanh(z(2 * h + j, k));
            const Scalar og = sigmoid(z(3 * h + j, k));
            z(j, k) = ig;
            z(h + j, k) = fg;
            z(2 * h + j, k) = gg;
            z(3 * h + j, k) = og;
            const Scalar c_new = fg * c_prev(j, k) + ig * gg;
            const Scalar tc = std::tanh(c_new);
            lc.tanh_c_new(j, t * b + k) = tc;
            if (m != Scalar(0)) {
              c_prev(j, k) = c_new;
              h_prev(j, k) = og * tc;
            }
            lc.c(j, t * b + k) = c_prev(j, k);
            lc.h(j, t * b + k) = h_prev(j, k);
          }
        }
      }
      if (l + 1 < layers_) {
        if (train) {
          lc.drop = dropout_mask(h, t_max * b, dropout, rng);
          input = lc.h.cwiseProduct(lc.drop);
        } else {
          input = lc.h;
        }
      } else {
        const auto last = lc.h.middleCols((t_max - 1) * b, b);
        if (train) {
          lc.drop = dropout_mask(h, b, dropout, rng);
          cache.top = last.cwiseProduct(lc.drop);
        } else {
          cache.top = last;
        }
      }
    }
    RowVec y = head_w() * cache.top;
    y.array() += head_b();
    return y;
  }

  void backward(const Batch& batch, const Cache& cache, const RowVec& dy, Vec& grad) const {
    const auto b = batch.size, t_max = batch.steps, h = static_cast<Eigen::Index>(hidden_);
    grad = Vec::Zero(params_.size());
    Eigen::Map<RowVec>(grad.data() + head_offset_, hidden_).noalias() = dy * cache.top.transpose();
    grad(head_offset_ + hidden_) = dy.sum();

    // Gradient w.r.t. each layer's (post-dropout) output sequence.
    Mat d_out = Mat::Zero(h, t_max * b);
    {
      Mat d_top = head_w().transpose() * dy;
      const auto& top = cache.layers.back();
      if (top.drop.size() > 0) d_top = d_top.cwiseProduct(top.drop);
      d_out.middleCols((t_max - 1) * b, b) = d_top;
    }

    for (int l = layers_ - 1; l >= 0; --l) {
      const auto& lc = cache.layers[static_cast<std::size_t>(l)];
      const auto v = layer(l);
      if (l + 1 < layers_ && lc.drop.size() > 0) d_out = d_out.cwiseProduct(lc.drop);

      Mat dz(4 * h, t_max * b);
      Mat dh_carry = Mat::Zero(h, b), dc_carry = Mat::Zero(h, b);
      for (Eigen::Index t = t_max - 1; t >= 0; --t) {
        for (Eigen::Index k = 0; k < b; ++k) {
          const Scalar m = batch.mask(0, t * b + k);
          const Eigen::Index col = t * b + k;
          for (Eigen::Index j = 0; j < h; ++j) {
            const Scalar dh = d_out(j, col) + dh_carry(j, k);
            const Scalar ig = lc.gates(j, col), fg = lc.gates(h + j, col);
            const Scalar gg = lc.gates(2 * h + j, col), og = lc.gates(3 * h + j, col);
            const Scalar tc = lc.tanh_c_new(j, col);
            const Scalar c_prev = t > 0 ? lc.c(j, col - b) : Scalar(0);
            const Scalar dh_new = m * dh;
            const Scalar dc_new = dh_new * og * (Scalar(1) - tc * tc) + m * dc_carry(j, k);
            dz(j, col) = dc_new * gg * ig * (Scalar(1) - ig);
            dz(h + j, col) = dc_new * c_prev * fg * (Scalar(1) - fg);
            dz(2 * h + j, col) = dc_new * ig * (Scalar(1) - gg * gg);
            dz(3 * h + j, col) = dh_new * tc * og * (Scalar(1) - og);
            dc_carry(j, k) = (Scalar(1) - m) * dc_carry(j, k) + dc_new * fg;
            dh_carry(j, k) = (Scalar(1) - m) * dh;
          }
        }
        dh_carry.noalias() += v.u.transpose() * dz.middleCols(t * b, b);
      }

      const Eigen::Index d = l == 0 ? input_dim_ : hidden_;
      const Eigen::Index h4 = 4 * h;
      Scalar* g = grad.data() + offsets_[static_cast<std::size_t>(l)];
      Eigen::Map<Mat>(g, h4, d).noalias() = dz * lc.input.transpose();
      if (t_max > 1) {
        Eigen::Map<Mat>(g + h4 * d, h4, h).noalias() =
            dz.rightCols((t_max - 1) * b) * lc.h.leftCols((t_max - 1) * b).transpose();
      }
      Eigen::Map<Vec>(g + h4 * d + h4 * h, h4) = dz.rowwise().sum();
      if (l > 0) d_out.noalias() = v.w.transpose() * dz;
    }
  }

  int input_dim_ = 0;
  int hidden_ = 0;
  int layers_ = 0;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index head_offset_ = 0;
  Vec params_;
};

struct LstmTrainingReport {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  long long steps = 0;
};

/// Trains `net` in place on sequences (each D x L, oldest first) and targets.
template <typename Scalar, typename Seq>
LstmTrainingReport lstm_train(LstmNetwork<Scalar>& net, const std::vector<Seq>& seqs, const std::vector<double>& targets,
                              const LstmParams& p, Rng& rng) {
  if (seqs.size() != targets.size()) throw std::invalid_argument("lstm: sequence/target count mismatch");
  LstmTrainingReport report;
  Adam<Scalar> opt(net.params().size(), AdamParams{p.learning_rate});
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  typename LstmNetwork<Scalar>::Vec grad;
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    double acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(p.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(p.batch_size));
      std::vector<const Seq*> bs;
      std::vector<double> bt;
      for (auto i = start; i < end; ++i) {
        bs.push_back(&seqs[order[i]]);
        bt.push_back(targets[order[i]]);
      }
      const auto batch = net.make_batch(bs, &bt);
      const double loss = static_cast<double>(net.loss_and_gradient(batch, grad, p.dropout, &rng));
      if (!std::isfinite(loss) || !grad.allFinite()) {
        std::ostringstream msg;
        msg << "lstm: non-finite loss at epoch " << epoch << ", step " << report.steps
            << " (learning_rate=" << p.learning_rate << ", hidden_units=" << p.hidden_units
            << ", max |param|=" << static_cast<double>(net.params().cwiseAbs().maxCoeff())
            << "); lower the learning rate or check input standardization";
        throw TrainingError(msg.str());
      }
      opt.step(net.params(), grad);
      acc += loss;
      ++batches;
      ++report.steps;
    }
    report.epoch_loss.push_back(batches ? acc / static_cast<double>(batches) : 0.0);
  }
  return report;
}

template <typename Scalar, typename Seq>
std::vector<double> lstm_predict_all(const LstmNetwork<Scalar>& net, const std::vector<Seq>& seqs,
                                     std::size_t chunk = 256) {
  std::vector<double> out;
  out.reserve(seqs.size());
  for (std::size_t start = 0; start < seqs.size(); start += chunk) {
    const auto end = std::min(seqs.size(), start + chunk);
    std::vector<const Seq*> bs;
    for (auto i = start; i < end; ++i) bs.push_back(&seqs[i]);
    const auto y = net.predict(net.make_batch(bs));
    for (Eigen::Index k = 0; k < y.size(); ++k) out.push_back(static_cast<double>(y(k)));
  }
  return out;
}

/// Precision-erased fitted regressor with optional target standardization.
class LstmRegressor {
 public:
  LstmRegressor() = default;

  static LstmRegressor fit(const std::vector<Matrix>& seqs, const std::vector<double>& targets, const LstmParams& p) {
    p.validate();
    if (seqs.empty()) throw std::invalid_argument("lstm: empty training set");
    LstmRegressor r;
    r.params_ = p;
    const int d = static_cast<int>(seqs.front().rows());
    std::vector<double> y = targets;
    if (p.standardize_target) {
      double mean = 0, sq = 0;
      for (double v : y) mean += v;
      mean /= static_cast<double>(y.size());
      for (double v : y) sq += (v - mean) * (v - mean);
      const double sd = y.size() > 1 ? std::sqrt(sq / static_cast<double>(y.size())) : 0.0;
      r.target_mean_ = mean;
      r.target_sd_ = sd > 0 ? sd : 1.0;
      for (double& v : y) v = (v - r.target_mean_) / r.target_sd_;
    }
    Rng rng(p.rng_seed);
    auto train = [&](auto net) {
      net.init_glorot(rng);
      r.report_ = lstm_train(net, seqs, y, p, rng);
      r.net_ = std::move(net);
    };
    if (p.single_precision) train(LstmNetwork<float>(d, p.hidden_units, p.layers));
    else train(LstmNetwork<double>(d, p.hidden_units, p.layers));
    return r;
  }

  std::vector<double> predict(const std::vector<Matrix>& seqs) const {
    auto out = std::visit(
        [&](const auto& net) -> std::vector<double> {
          if constexpr (std::is_same_v<std::decay_t<decltype(net)>, std::monostate>)
            throw std::logic_error("lstm: predict before fit");
          else
            return lstm_predict_all(net, seqs);
        },
        net_);
    for (double& v : out) v = v * target_sd_ + target_mean_;
    return out;
  }

  const LstmTrainingReport& report() const { return report_; }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"layers", params_.layers},         {"hidden_units", params_.hidden_units},
                        {"target_mean", target_mean_},      {"target_sd", target_sd_},
                        {"precision", std::holds_alternative<LstmNetwork<float>>(net_) ? "f32" : "f64"}};
    std::visit(
        [&](const auto& net) {
          if constexpr (!std::is_same_v<std::decay_t<decltype(net)>, std::monostate>) {
            j["input_dim"] = net.input_dim();
            std::vector<double> ps(static_cast<std::size_t>(net.params().size()));
            for (Eigen::Index i = 0; i < net.params().size(); ++i) ps[static_cast<std::size_t>(i)] = static_cast<double>(net.params()(i));
            j["params"] = ps;
          }
        },
        net_);
    return j;
  }

  static LstmRegressor from_json(const nlohmann::json& j) {
    LstmRegressor r;
    r.params_.layers = j.at("layers").get<int>();
    r.params_.hidden_units = j.at("hidden_units").get<int>();
    r.target_mean_ = j.at("target_mean").get<double>();
    r.target_sd_ = j.at("target_sd").get<double>();
    const auto ps = j.at("params").get<std::vector<double>>();
    auto load = [&](auto net) {
      if (static_cast<std::size_t>(net.params().size()) != ps.size()) throw DataError("lstm state: parameter count mismatch");
      for (std::size_t i = 0; i < ps.size(); ++i)
        net.params()(static_cast<Eigen::Index>(i)) = static_cast<typename decltype(net)::Vec::Scalar>(ps[i]);
      r.net_ = std::move(net);
    };
    const int d = j.at("input_dim").get<int>();
    if (j.value("precision", std::string("f64")) == "f32") load(LstmNetwork<float>(d, r.params_.hidden_units, r.params_.layers));
    else load(LstmNetwork<double>(d, r.params_.hidden_units, r.params_.layers));
    return r;
  }

 private:
  LstmParams params_;
  std::variant<std::monostate, LstmNetwork<double>, LstmNetwork<float>> net_;
  LstmTrainingReport report_;
  double target_mean_ = 0.0;
  double target_sd_ = 1.0;
};

inline LstmRegressor lstm_fit(const std::vector<Matrix>& seqs, const std::vector<double>& targets, const LstmParams& p) {
  return LstmRegressor::fit(seqs, targets, p);
}

inline double lstm_predict(const LstmRegressor& net, const Matrix& seq) { return net.predict({seq}).front(); }

}  // namespace lactate::models
