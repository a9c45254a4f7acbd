#pragma once

// Central finite-difference oracle for analytic gradients (double precision).
//
// Step size is adaptive: h = cbrt(eps) * max(1, |x|). The error metric is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3). Elements sitting on
// a kink (ReLU at 0, max-pool ties) are detected by disagreeing one-sided
// differences and skipped; they have no derivative to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "ectnet/numerics/autograd.hpp"

namespace ectnet::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
};

inline GradCheckResult gradcheck(std::vector<Variable<double>> leaves,
                                 const std::function<Variable<double>()>& build_loss) {
  for (auto& v : leaves) v.zero_grad();
  Variable<double> loss = build_loss();
  backward(loss);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& v : leaves) analytic.push_back(v.grad());

  auto eval = [&] {
    NoGradGuard guard;
    return static_cast<double>(build_loss().value()[0]);
  };

  GradCheckResult r;
  const double f0 = eval();
  const double base_step = std::cbrt(std::numeric_limits<double>::epsilon());
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double>& x = leaves[li].mutable_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      const double h = base_step * std::max(1.0, std::abs(orig));
      x[i] = orig + h;
      const double fp = eval();
      x[i] = orig - h;
      const double fm = eval();
      x[i] = orig;
      const double forward = (fp - f0) / h;
      const double backward_d = (f0 - fm) / h;
      const double numeric = (fp - fm) / (2.0 * h);
      const double spread = std::abs(forward - backward_d);
      if (spread > 1e-2 * std::max({1.0, std::abs(forward), std::abs(backward_d)})) {
        ++r.kinks;
        continue;
      }
      const double a = analytic[li][i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.checked;
    }
  }
  return r;
}

/// Deterministic pseudo-random tensor with entries in N(0, scale^2).
template <typename T, typename Rng>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

}  // namespace ectnet::testing
