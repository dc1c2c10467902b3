#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace flowgov {

struct CvarResult {
  double value = 0.0;  // CVaR_alpha
  double eta = 0.0;    // minimizing threshold (the VaR level)
};

// Rockafellar-Uryasev sample CVaR of the upper tail:
//   CVaR_alpha = min_eta eta + E[(X - eta)+] / (1 - alpha)
// The objective is piecewise linear and convex, so the minimum is attained at
// a sample point; this evaluates it there directly and returns the smallest
// minimizer as eta.
inline CvarResult cvar_ru(std::vector<double> samples, double alpha) {
  if (samples.empty()) throw std::invalid_argument("cvar_ru: empty sample set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("cvar_ru: alpha outside (0,1)");
  for (double s : samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("cvar_ru: non-finite sample");
  }
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  const double denom = (1.0 - alpha) * n;

  // Suffix sums let each candidate eta be evaluated in O(1):
  //   f(eta) = eta + sum_{x_j > eta} (x_j - eta) / denom
  CvarResult best;
  double best_f = std::numeric_limits<double>::infinity();
  std::vector<double> suffix_sum(samples.size() + 1, 0.0);
  for (int i = static_cast<int>(samples.size()) - 1; i >= 0; --i) {
    suffix_sum[i] = suffix_sum[i + 1] + samples[static_cast<std::size_t>(i)];
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double eta = samples[i];
    const double count_above = static_cast<double>(samples.size() - i - 1);
    const double f = eta + (suffix_sum[i + 1] - count_above * eta) / denom;
    if (f < best_f) {
      best_f = f;
      best.eta = eta;
    }
  }
  best.value = best_f;
  return best;
}

// Lower-tail CVaR of returns (the risk functional used on per-episode
// returns): mean of the worst (1-alpha) fraction, computed by reflection.
inline double lower_tail_cvar(const std::vector<double>& returns, double alpha) {
  std::vector<double> neg(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i) neg[i] = -returns[i];
  return -cvar_ru(std::move(neg), alpha).value;
}

}  // namespace flowgov
