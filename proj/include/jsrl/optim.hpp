#pragma once

#include <vector>

#include "jsrl/autodiff.hpp"

namespace jsrl {

/// Adam over a fixed, ordered parameter list.
class Adam {
 public:
  struct Options {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options opt) : opt_(opt) {}

  /// Applies one update from each parameter's accumulated grad. Throws
  /// TrainingError (naming the parameter) if any gradient is non-finite.
  void step(const std::vector<ad::Parameter*>& params);
  long steps() const { return t_; }
  const Options& options() const { return opt_; }

 private:
  Options opt_;
  long t_ = 0;
  std::vector<ad::Mat> m_, v_;
};

}  // namespace jsrl
