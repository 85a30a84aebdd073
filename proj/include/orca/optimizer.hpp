#pragma once

#include <span>
#include <string>
#include <vector>

#include "orca/common.hpp"

namespace orca {

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First-order optimizer over a flat parameter vector. Only coordinates in
// [begin, end) are touched; the rest stay bit-identical.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, std::size_t dim, std::size_t begin = 0, std::size_t end = SIZE_MAX);

  void step(std::span<double> params, std::span<const double> grad);
  int steps() const { return steps_; }
  double learning_rate() const { return cfg_.learning_rate; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  OptimizerConfig cfg_;
  std::size_t begin_;
  std::size_t end_;
  std::vector<double> m_, v_;
  int steps_ = 0;
};

}  // namespace orca
