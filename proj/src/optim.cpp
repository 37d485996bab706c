#include "jsrl/optim.hpp"

#include <cmath>

#include "jsrl/errors.hpp"

namespace jsrl {

void Adam::step(const std::vector<ad::Parameter*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw ContractViolation("Adam: parameter list changed between steps");
  for (const auto* p : params)
    if (!p->grad.allFinite()) throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * p.grad;
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= opt_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.eps);
  }
}

}  // namespace jsrl
