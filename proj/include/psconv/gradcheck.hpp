#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace psconv {

// Five-point central differences of a scalar function with respect to every
// entry of x (truncation error O(h^4)). x is perturbed in place and restored.
template <typename T, typename Loss>
std::vector<T> numeric_gradient(Loss&& loss, std::span<T> x, T h) {
  std::vector<T> grad(x.size());
  const auto at = [&](std::size_t i, T v) {
    x[i] = v;
    return static_cast<double>(loss());
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = x[i];
    const double d = -at(i, saved + 2 * h) + 8 * at(i, saved + h) - 8 * at(i, saved - h) + at(i, saved - 2 * h);
    x[i] = saved;
    grad[i] = static_cast<T>(d / (12.0 * static_cast<double>(h)));
  }
  return grad;
}

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor keeps entries whose
// true gradient is zero from reporting pure rounding noise as relative error.
template <typename T>
double max_relative_error(std::span<const T> analytic, std::span<const T> numeric, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Named suites: conv, bn, linear, softmax, pool, resnet, all.
std::vector<GradCheckResult> run_gradcheck(const std::string& suite, bool f64, std::uint64_t seed = 1);

// Pass threshold for the given precision.
double gradcheck_threshold(bool f64);

}  // namespace psconv
