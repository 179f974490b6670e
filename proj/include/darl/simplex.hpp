// Maps onto the probability simplex {w : w_i >= 0, sum w = 1}.

#ifndef DARL_SIMPLEX_HPP_
#define DARL_SIMPLEX_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "darl/common.hpp"

namespace darl {

inline constexpr double kSimplexTolerance = 1e-9;

inline bool on_simplex(const Eigen::Ref<const Vector>& w, double tol = kSimplexTolerance) {
  return w.size() > 0 && w.allFinite() && (w.array() >= 0.0).all() && std::abs(w.sum() - 1.0) <= tol;
}

// Softmax with max subtraction.
inline Vector softmax(const Eigen::Ref<const Vector>& raw) {
  if (!raw.allFinite()) throw NumericalError("softmax input is not finite");
  const Vector e = (raw.array() - raw.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// Euclidean projection: sort descending, find the largest support size rho
// with u_rho - (sum_{j<=rho} u_j - 1)/rho > 0, then clip at that threshold.
inline Vector project_simplex(const Eigen::Ref<const Vector>& v) {
  if (!v.allFinite()) throw NumericalError("simplex projection input is not finite");
  const auto n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cumsum += u[static_cast<std::size_t>(j)];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

inline Vector equal_weights(Eigen::Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

}  // namespace darl

#endif  // DARL_SIMPLEX_HPP_
