#pragma once

#include <functional>
#include <vector>

#include "swe/nn/ops.hpp"

namespace swe::testing {

// Central finite-difference check of analytic gradients. `build_loss` must
// rebuild the scalar loss from the leaf values on every call.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

inline GradCheckResult check_gradients(
    std::vector<std::pair<std::string, nn::Var<double>>> leaves,
    const std::function<nn::Var<double>()>& build_loss, double h = 1e-5) {
  for (auto& [name, v] : leaves) v.zero_grad();
  nn::Var<double> loss = build_loss();
  loss.backward();
  std::vector<nn::Tensor<double>> analytic;
  for (auto& [name, v] : leaves) analytic.push_back(v.grad().clone());

  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li].second;
    const std::int64_t n = leaf.val().numel();
    for (std::int64_t i = 0; i < n; ++i) {
      const double orig = leaf.val()[i];
      leaf.val()[i] = orig + h;
      double fp, fm;
      {
        nn::NoGradGuard ng;
        fp = build_loss().item();
      }
      leaf.val()[i] = orig - h;
      {
        nn::NoGradGuard ng;
        fm = build_loss().item();
      }
      leaf.val()[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[li][i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-4});
      const double rel = std::abs(a - fd) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = leaves[li].first + "[" + std::to_string(i) + "] a=" +
                    std::to_string(a) + " fd=" + std::to_string(fd);
      }
    }
  }
  return res;
}

inline nn::Tensor<double> random_tensor(nn::Shape s, Rng& rng,
                                        double scale = 1.0) {
  nn::Tensor<double> t(std::move(s));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = rng.gaussian() * scale;
  return t;
}

}  // namespace swe::testing
