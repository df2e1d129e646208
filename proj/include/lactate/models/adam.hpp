#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace lactate::models {

struct AdamParams {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Adam over one flat parameter vector.
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename Scalar>
class Adam {
 public:
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Adam(Eigen::Index n, AdamParams params) : p_(params), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

  void step(Eigen::Ref<Vec> theta, const Eigen::Ref<const Vec>& grad) {
    ++t_;
    const auto b1 = static_cast<Scalar>(p_.beta1), b2 = static_cast<Scalar>(p_.beta2);
    m_ = b1 * m_ + (Scalar(1) - b1) * grad;
    v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseProduct(grad);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(p_.beta1, t_));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(p_.beta2, t_));
    const auto lr = static_cast<Scalar>(p_.learning_rate);
    const auto eps = static_cast<Scalar>(p_.epsilon);
    theta.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }

  long long iterations() const { return t_; }

 private:
  AdamParams p_;
  Vec m_, v_;
  long long t_ = 0;
};

}  // namespace lactate::models
