#include "jsrl/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "jsrl/errors.hpp"

namespace jsrl {

double gap(double makespan, double reference) {
  if (!std::isfinite(makespan) || !std::isfinite(reference)) throw ParameterError("gap: non-finite input");
  if (!(reference > 0.0)) throw ParameterError("gap: reference makespan must be positive");
  return 100.0 * (makespan - reference) / reference;
}

double signed_rank_exact_p(std::span<const double> ranks, double w_plus) {
  // Ranks are integers or halves, so doubled ranks are integral.
  std::vector<long> r2;
  r2.reserve(ranks.size());
  long total = 0;
  for (double r : ranks) {
    r2.push_back(std::lround(2.0 * r));
    total += r2.back();
  }
  // counts[s] = number of sign patterns whose doubled W+ equals s
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : r2) {
    for (long s = reach; s >= 0; --s)
      if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
    reach += r;
  }
  const double patterns = std::ldexp(1.0, static_cast<int>(ranks.size()));
  const long w = std::lround(2.0 * w_plus);
  double lower = 0.0, upper = 0.0;
  for (long s = 0; s <= total; ++s) {
    if (s <= w) lower += counts[static_cast<std::size_t>(s)];
    if (s >= w) upper += counts[static_cast<std::size_t>(s)];
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / patterns);
}

WilcoxonResult wilcoxon(std::span<const double> a, std::span<const double> b, double level) {
  if (a.size() != b.size()) throw ParameterError("wilcoxon: paired samples differ in length");
  if (!(level > 0.0 && level < 1.0)) throw ParameterError("wilcoxon: level must lie in (0, 1)");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] - b[i];
    if (!std::isfinite(x)) throw ParameterError("wilcoxon: non-finite sample");
    if (x != 0.0) d.push_back(x);
  }
  WilcoxonResult out;
  out.n = static_cast<int>(d.size());
  if (out.n < 6) {
    out.indeterminate = true;
    return out;
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> rank(d.size());
  double tie_term = 0.0;  // sum of t^3 - t over tie groups
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double n = static_cast<double>(out.n);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0.0) out.w_plus += rank[i];
  const double w_minus = n * (n + 1.0) / 2.0 - out.w_plus;
  out.statistic = std::min(out.w_plus, w_minus);

  if (out.n <= 25) {
    out.exact = true;
    out.p_value = signed_rank_exact_p(rank, out.w_plus);
  } else {
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(out.w_plus - mean) - 0.5) / std::sqrt(var);
    out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  out.significant = out.p_value < level;
  return out;
}

}  // namespace jsrl
