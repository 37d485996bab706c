#pragma once

#include <functional>
#include <vector>

#include "jsrl/autodiff.hpp"
#include "test_util.hpp"

namespace jsrl::testing {

struct FdResult {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst = 0.0;
  double pass_fraction() const { return checked ? static_cast<double>(passed) / static_cast<double>(checked) : 1.0; }
};

/// Compares reverse-mode gradients of `loss` against central differences for
/// every scalar entry of every parameter in `params`.
inline FdResult finite_difference_check(const std::vector<ad::Parameter*>& params,
                                        const std::function<ad::Var(ad::Tape&)>& loss, double h = 1e-4,
                                        double tol = 1e-4) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    ad::Tape tape(false);
    return loss(tape).scalar();
  };
  FdResult r;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value(i);
      p->value(i) = saved + h;
      const double up = eval();
      p->value(i) = saved - h;
      const double down = eval();
      p->value(i) = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = rel_error(numeric, p->grad(i));
      ++r.checked;
      if (err < tol) ++r.passed;
      r.worst = std::max(r.worst, err);
    }
  }
  return r;
}

}  // namespace jsrl::testing
