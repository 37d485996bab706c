#pragma once

#include <span>

namespace jsrl {

/// 100 * (makespan - reference) / reference. Throws ParameterError unless reference > 0
/// and both values are finite.
double gap(double makespan, double reference);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double p_value = 1.0;  // two-sided
  bool significant = false;
  bool indeterminate = false;  // fewer than 6 non-zero differences
  bool exact = false;          // exact null distribution (N <= 25) or normal approximation
  int n = 0;                   // non-zero differences
};

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences are
/// dropped and tied |differences| share their average rank. Throws ParameterError
/// when the lengths differ or `level` is outside (0, 1).
WilcoxonResult wilcoxon(std::span<const double> a, std::span<const double> b, double level = 0.05);

/// Two-sided p-value of W+ = `w_plus` under the exact null for the given ranks
/// (every sign pattern equally likely).
double signed_rank_exact_p(std::span<const double> ranks, double w_plus);

}  // namespace jsrl
