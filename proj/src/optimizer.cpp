#include "orca/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace orca {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

Optimizer::Optimizer(const OptimizerConfig& cfg, std::size_t dim, std::size_t begin, std::size_t end)
    : cfg_(cfg), begin_(begin), end_(std::min(end, dim)) {
  if (!(cfg.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (begin_ > end_) throw ConfigError("optimizer range is empty");
  if (cfg.kind == OptimizerKind::kAdam) {
    m_.assign(end_ - begin_, 0.0);
    v_.assign(end_ - begin_, 0.0);
  }
}

void Optimizer::step(std::span<double> params, std::span<const double> grad) {
  ++steps_;
  if (cfg_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = begin_; i < end_; ++i) params[i] -= cfg_.learning_rate * grad[i];
    return;
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, steps_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, steps_);
  for (std::size_t i = begin_; i < end_; ++i) {
    const std::size_t k = i - begin_;
    const double g = grad[i];
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g * g;
    const double update = (m_[k] / c1) / (std::sqrt(v_[k] / c2) + cfg_.eps);
    params[i] -= cfg_.learning_rate * update;
  }
}

}  // namespace orca
