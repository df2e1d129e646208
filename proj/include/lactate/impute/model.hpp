#pragma once

#include <memory>

#include "lactate/impute/common.hpp"

namespace lactate::impute {

/// Learned state of one method. `complete` returns a value for every cell of
/// every stay; the FittedImputer wrapper restores observed cells afterwards.
class ImputerModel {
 public:
  virtual ~ImputerModel() = default;
  virtual std::vector<Matrix> complete(const AlignedGrid& grid) const = 0;
  virtual nlohmann::json state() const = 0;
};

/// Methods that work on standardized stay-bin rows.
class RowModel : public ImputerModel {
 public:
  std::vector<Matrix> complete(const AlignedGrid& grid) const override {
    const Matrix z = scaler_.forward(flatten_values(grid));
    return unflatten(scaler_.inverse(complete_rows(z, flatten_mask(grid))), grid);
  }

  /// `z` is standardized with NaN at missing entries.
  virtual Matrix complete_rows(const Matrix& z, const MaskMatrix& mask) const = 0;

  const ObservedScaler& scaler() const { return scaler_; }

 protected:
  ObservedScaler scaler_;
};

/// Replaces missing entries of `z` by zero (the standardized training mean).
inline Matrix zero_filled(const Matrix& z, const MaskMatrix& m) {
  Matrix out = z;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (!m.data()[i]) out.data()[i] = 0.0;
  return out;
}

}  // namespace lactate::impute
