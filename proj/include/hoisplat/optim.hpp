#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace hoi {

// Adaptive-moment gradient descent on a flat parameter vector.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m, v;
  long long t = 0;

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad,
            double lr) {
    if (m.size() != params.size()) {
      m = Eigen::VectorXd::Zero(params.size());
      v = Eigen::VectorXd::Zero(params.size());
      t = 0;
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, double(t));
    const double c2 = 1.0 - std::pow(beta2, double(t));
    params -= (lr / c1) * m.cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
  }
};

inline double cosine_decay(double lr, int it, int total) {
  if (total <= 1) return lr;
  return lr * 0.5 * (1.0 + std::cos(M_PI * double(it) / double(total - 1)));
}

}  // namespace hoi
