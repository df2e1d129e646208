#pragma once

// Under-complete autoencoder: F -> F/2 -> F/4 -> F/2 -> F with tanh hidden
// layers and a linear output, trained on min-max scaled rows with the loss
// restricted to observed entries. Training gaps are pre-filled with the
// training means; gaps of grids being imputed are pre-filled with zeros.

#include <numeric>

#include "lactate/impute/model.hpp"
#include "lactate/models/adam.hpp"
#include "lactate/rng.hpp"

namespace lactate::impute {

class AutoencoderModel : public ImputerModel {
 public:
  struct Layer {
    Matrix w;  // out x in
    Vector b;
  };

  static std::unique_ptr<AutoencoderModel> fit(const AlignedGrid& train, const ImputerSpec& spec) {
    auto m = std::make_unique<AutoencoderModel>();
    const Matrix raw = flatten_values(train);
    const MaskMatrix mask = flatten_mask(train);
    const auto f = raw.cols();
    m->lo_ = Vector::Zero(f);
    m->hi_ = Vector::Ones(f);
    for (Eigen::Index j = 0; j < f; ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (Eigen::Index i = 0; i < raw.rows(); ++i)
        if (mask(i, j)) {
          lo = std::min(lo, raw(i, j));
          hi = std::max(hi, raw(i, j));
        }
      if (!std::isfinite(lo)) {
        warn("impute.ae", "feature " + std::to_string(j) + " has no observed training entries; using 0.0");
        continue;
      }
      m->lo_(j) = lo;
      m->hi_(j) = hi > lo ? hi : lo + 1.0;
    }
    const Matrix s = m->scale(raw);
    m->train_mean_ = Vector::Zero(f);
    for (Eigen::Index j = 0; j < f; ++j) {
      double sum = 0, n = 0;
      for (Eigen::Index i = 0; i < s.rows(); ++i)
        if (mask(i, j)) {
          sum += s(i, j);
          n += 1;
        }
      m->train_mean_(j) = n > 0 ? sum / n : -m->lo_(j) / (m->hi_(j) - m->lo_(j));
    }

    const auto h1 = std::max<Eigen::Index>(1, (f + 1) / 2), h2 = std::max<Eigen::Index>(1, (f + 3) / 4);
    const std::vector<Eigen::Index> widths = {f, h1, h2, h1, f};
    Rng rng(derive_seed(spec.seed, 0xAE));
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Layer layer;
      const double limit = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
      layer.w.resize(widths[l + 1], widths[l]);
      for (Eigen::Index i = 0; i < layer.w.size(); ++i) layer.w.data()[i] = limit * (2.0 * uniform01(rng) - 1.0);
      layer.b = Vector::Zero(widths[l + 1]);
      m->layers_.push_back(std::move(layer));
    }
    m->train(m->pre_impute(s, mask, true), s, mask, spec, rng);
    return m;
  }

  /// Scaled rows with gaps filled as the network sees them: training means
  /// when `training`, zeros otherwise.
  Matrix pre_impute(const Matrix& scaled, const MaskMatrix& mask, bool training) const {
    Matrix out = scaled;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j)
        if (!mask(i, j)) out(i, j) = training ? train_mean_(j) : 0.0;
    return out;
  }

  Matrix scale(const Matrix& raw) const {
    return (raw.rowwise() - lo_.transpose()).array().rowwise() / (hi_ - lo_).transpose().array();
  }
  Matrix unscale(const Matrix& s) const {
    return (s.array().rowwise() * (hi_ - lo_).transpose().array()).rowwise() + lo_.transpose().array();
  }

  std::vector<Matrix> complete(const AlignedGrid& grid) const override {
    const Matrix raw = flatten_values(grid);
    const MaskMatrix mask = flatten_mask(grid);
    const Matrix input = pre_impute(scale(raw), mask, false);
    const Matrix out = unscale(forward(input.transpose()).back().transpose());
    Matrix filled = raw;
    for (Eigen::Index i = 0; i < filled.size(); ++i)
      if (!mask.data()[i]) filled.data()[i] = out.data()[i];
    return unflatten(filled, grid);
  }

  const std::vector<double>& epoch_loss() const { return epoch_loss_; }

  nlohmann::json state() const override {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) layers.push_back({{"w", mat_json(l.w)}, {"b", vec_json(l.b)}});
    return {{"lo", vec_json(lo_)}, {"hi", vec_json(hi_)}, {"train_mean", vec_json(train_mean_)}, {"layers", layers}};
  }

  static std::unique_ptr<AutoencoderModel> from_state(const nlohmann::json& j) {
    auto m = std::make_unique<AutoencoderModel>();
    m->lo_ = json_vec(j.at("lo"));
    m->hi_ = json_vec(j.at("hi"));
    m->train_mean_ = json_vec(j.at("train_mean"));
    for (const auto& l : j.at("layers")) m->layers_.push_back({json_mat(l.at("w")), json_vec(l.at("b"))});
    return m;
  }

 private:
  /// Activations of every layer for a batch stored column-wise (input first).
  std::vector<Matrix> forward(const Matrix& x) const {
    std::vector<Matrix> acts{x};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix a = layers_[l].w * acts.back();
      a.colwise() += layers_[l].b;
      if (l + 1 < layers_.size()) a = a.array().tanh();
      acts.push_back(std::move(a));
    }
    return acts;
  }

  void train(const Matrix& input, const Matrix& target, const MaskMatrix& mask, const ImputerSpec& spec, Rng& rng) {
    Eigen::Index n_params = 0;
    for (const auto& l : layers_) n_params += l.w.size() + l.b.size();
    Vector theta(n_params), grad(n_params);
    auto pack = [&](Vector& v, const std::vector<Layer>& ls) {
      Eigen::Index o = 0;
      for (const auto& l : ls) {
        v.segment(o, l.w.size()) = Eigen::Map<const Vector>(l.w.data(), l.w.size());
        o += l.w.size();
        v.segment(o, l.b.size()) = l.b;
        o += l.b.size();
      }
    };
    auto unpack = [&](const Vector& v) {
      Eigen::Index o = 0;
      for (auto& l : layers_) {
        Eigen::Map<Vector>(l.w.data(), l.w.size()) = v.segment(o, l.w.size());
        o += l.w.size();
        l.b = v.segment(o, l.b.size());
        o += l.b.size();
      }
    };
    pack(theta, layers_);
    models::Adam<double> opt(n_params, models::AdamParams{spec.ae_learning_rate, 0.9, 0.999, 1e-7});

    std::vector<Eigen::Index> order(static_cast<std::size_t>(input.rows()));
    std::iota(order.begin(), order.end(), 0);
    const double keep = 1.0 - spec.ae_input_dropout;
    std::vector<Layer> g(layers_.size());
    for (int epoch = 0; epoch < spec.ae_epochs; ++epoch) {
      shuffle(std::span<Eigen::Index>(order), rng);
      double loss_sum = 0, obs_sum = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(spec.ae_batch_size)) {
        const auto end = std::min(order.size(), start + static_cast<std::size_t>(spec.ae_batch_size));
        const auto b = static_cast<Eigen::Index>(end - start);
        Matrix x(input.cols(), b), y(input.cols(), b), w(input.cols(), b);
        for (Eigen::Index k = 0; k < b; ++k) {
          const auto i = order[start + static_cast<std::size_t>(k)];
          x.col(k) = input.row(i).transpose();
          y.col(k) = target.row(i).transpose();
          for (Eigen::Index j = 0; j < input.cols(); ++j) {
            w(j, k) = mask(i, j) ? 1.0 : 0.0;
            if (!mask(i, j)) y(j, k) = 0.0;
          }
        }
        if (spec.ae_input_dropout > 0)
          for (Eigen::Index q = 0; q < x.size(); ++q) x.data()[q] = uniform01(rng) < spec.ae_input_dropout ? 0.0 : x.data()[q] / keep;
        const double n_obs = w.sum();
        if (n_obs == 0) continue;
        const auto acts = forward(x);
        Matrix delta = (acts.back() - y).cwiseProduct(w);
        loss_sum += delta.squaredNorm();
        obs_sum += n_obs;
        delta *= 2.0 / n_obs;
        for (std::size_t l = layers_.size(); l-- > 0;) {
          g[l].w = delta * acts[l].transpose();
          g[l].b = delta.rowwise().sum();
          if (l > 0) delta = (layers_[l].w.transpose() * delta).cwiseProduct((1.0 - acts[l].array().square()).matrix());
        }
        pack(grad, g);
        opt.step(theta, grad);
        unpack(theta);
      }
      epoch_loss_.push_back(obs_sum > 0 ? loss_sum / obs_sum : 0.0);
    }
  }

  Vector lo_, hi_;
  Vector train_mean_;
  std::vector<Layer> layers_;
  std::vector<double> epoch_loss_;
};

}  // namespace lactate::impute
