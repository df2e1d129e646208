#pragma once

// K nearest neighbours among training rows. Distance between rows a and b is
//   sqrt( sum_{c in C} (za_c - zb_c)^2 / |C| )
// over the set C of coordinates observed in both, on standardized values.
// Candidates for filling feature j must observe j and share at least one
// coordinate with the target row; ties go to the lower training row index.
// The fill is the plain mean of the neighbours' raw values, summed in
// neighbour order.

#include <limits>

#include "lactate/impute/model.hpp"

namespace lactate::impute {

class KnnModel : public ImputerModel {
 public:
  static std::unique_ptr<KnnModel> fit(const AlignedGrid& train, const ImputerSpec& spec) {
    auto m = std::make_unique<KnnModel>();
    m->k_ = spec.knn_k;
    m->donors_ = flatten_values(train);
    m->donor_mask_ = flatten_mask(train);
    m->scaler_ = ObservedScaler::fit(m->donors_, m->donor_mask_, "impute.knn");
    m->donors_z_ = m->scaler_.forward(m->donors_);
    return m;
  }

  std::vector<Matrix> complete(const AlignedGrid& grid) const override {
    const Matrix x = flatten_values(grid);
    const MaskMatrix mask = flatten_mask(grid);
    return unflatten(complete_rows(x, mask), grid);
  }

  /// Raw (unstandardized) rows in, raw rows out.
  Matrix complete_rows(const Matrix& x, const MaskMatrix& mask) const {
    if (x.cols() != donors_.cols()) throw std::invalid_argument("knn: feature count mismatch");
    const Matrix z = scaler_.forward(x);
    const auto n = donors_.rows(), f = donors_.cols();
    Matrix out = x;
    std::vector<double> dist(static_cast<std::size_t>(n));
    std::vector<Eigen::Index> cand;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      bool any_missing = false;
      for (Eigen::Index j = 0; j < f; ++j) any_missing |= !mask(i, j);
      if (!any_missing) continue;
      for (Eigen::Index r = 0; r < n; ++r) {
        double sum = 0.0;
        int co = 0;
        for (Eigen::Index c = 0; c < f; ++c)
          if (mask(i, c) && donor_mask_(r, c)) {
            const double d = z(i, c) - donors_z_(r, c);
            sum += d * d;
            ++co;
          }
        dist[static_cast<std::size_t>(r)] = co > 0 ? std::sqrt(sum / co) : std::numeric_limits<double>::infinity();
      }
      for (Eigen::Index j = 0; j < f; ++j) {
        if (mask(i, j)) continue;
        cand.clear();
        for (Eigen::Index r = 0; r < n; ++r)
          if (donor_mask_(r, j) && std::isfinite(dist[static_cast<std::size_t>(r)])) cand.push_back(r);
        if (cand.empty()) {
          out(i, j) = scaler_.mean(j);
          continue;
        }
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(k_), cand.size());
        auto closer = [&](Eigen::Index a, Eigen::Index b) {
          const double da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
          return da < db || (da == db && a < b);
        };
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), closer);
        double sum = 0.0;
        for (std::size_t q = 0; q < take; ++q) sum += donors_(cand[q], j);
        out(i, j) = sum / static_cast<double>(take);
      }
    }
    return out;
  }

  nlohmann::json state() const override {
    nlohmann::json mask = nlohmann::json::array();
    for (Eigen::Index i = 0; i < donor_mask_.size(); ++i) mask.push_back(donor_mask_.data()[i] ? 1 : 0);
    Matrix filled = donors_;
    for (Eigen::Index i = 0; i < filled.size(); ++i)
      if (!donor_mask_.data()[i]) filled.data()[i] = 0.0;
    return {{"k", k_}, {"scaler", scaler_json(scaler_)}, {"donors", mat_json(filled)}, {"donor_mask", mask}};
  }

  static std::unique_ptr<KnnModel> from_state(const nlohmann::json& j) {
    auto m = std::make_unique<KnnModel>();
    m->k_ = j.at("k").get<int>();
    m->scaler_ = json_scaler(j.at("scaler"));
    m->donors_ = json_mat(j.at("donors"));
    const auto& mask = j.at("donor_mask");
    m->donor_mask_.resize(m->donors_.rows(), m->donors_.cols());
    if (static_cast<Eigen::Index>(mask.size()) != m->donor_mask_.size()) throw DataError("knn state: mask size mismatch");
    for (std::size_t i = 0; i < mask.size(); ++i) {
      m->donor_mask_.data()[i] = mask[i].get<int>() != 0;
      if (!m->donor_mask_.data()[i]) m->donors_.data()[i] = kMissing;
    }
    m->donors_z_ = m->scaler_.forward(m->donors_);
    return m;
  }

  const ObservedScaler& scaler() const { return scaler_; }

 private:
  int k_ = 5;
  Matrix donors_;
  Matrix donors_z_;
  MaskMatrix donor_mask_;
  ObservedScaler scaler_;
};

}  // namespace lactate::impute
