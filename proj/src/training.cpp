#include "orca/training.hpp"

#include <numeric>

namespace orca {

TuneResult tune_soft_prompt(const ModelParams& params, const PromptedTask& train, const TuneConfig& cfg) {
  const auto& mc = params.config();
  if (mc.prompt_len <= 0) throw ConfigError("tune_soft_prompt: the model has no soft-prompt segment");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw ConfigError("tune_soft_prompt: bad steps or batch size");
  TuneResult out{params, {}};
  if (cfg.steps == 0) return out;
  if (train.examples.empty()) throw DataError("tune_soft_prompt: no training examples");

  std::vector<LossTerm> terms;
  terms.reserve(train.examples.size());
  for (const auto& x : train.examples) terms.push_back(task_term(x, train.tpl, train.verbalizer, mc));

  const auto& span = params.layout()[Segment::kSoftPrompt];
  Optimizer opt(OptimizerConfig{OptimizerKind::kAdam, cfg.learning_rate}, params.size(), span.offset,
                span.offset + span.size);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(terms.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<LossTerm> batch;
  for (int step = 0; step < cfg.steps; ++step) {
    batch.clear();
    while (batch.size() < static_cast<std::size_t>(cfg.batch_size)) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(terms[order[cursor++]]);
      if (batch.size() == terms.size()) break;
    }
    double loss = 0.0;
    const auto grad = full_gradient(out.params, batch, cfg.workers, &loss);
    out.losses.push_back(loss);
    opt.step(out.params.flat(), grad);
  }
  return out;
}

PretrainResult pretrain_mlm(const ModelParams& init, const std::vector<PretrainExample>& examples,
                            const PretrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw ConfigError("pretrain: bad epochs or batch size");
  if (!(cfg.final_lr_fraction > 0 && cfg.final_lr_fraction <= 1)) {
    throw ConfigError("pretrain: final_lr_fraction must be in (0, 1]");
  }
  PretrainResult out{init, {}};
  if (examples.empty() || cfg.epochs == 0) return out;
  std::vector<LossTerm> terms;
  terms.reserve(examples.size());
  for (const auto& e : examples) terms.push_back(lm_term(e));
  Optimizer opt(cfg.optimizer, init.size());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(terms.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<LossTerm> batch;
  const std::size_t per_epoch = (order.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                static_cast<std::size_t>(cfg.batch_size);
  const double total_steps = static_cast<double>(per_epoch) * cfg.epochs;
  double step = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(terms[order[i]]);
      double loss = 0.0;
      const auto grad = full_gradient(out.params, batch, cfg.workers, &loss);
      const double progress = total_steps > 1.0 ? step / (total_steps - 1.0) : 0.0;
      opt.set_learning_rate(cfg.optimizer.learning_rate * (1.0 - (1.0 - cfg.final_lr_fraction) * progress));
      step += 1.0;
      total += loss * static_cast<double>(batch.size());
      opt.step(out.params.flat(), grad);
    }
    out.epoch_losses.push_back(total / static_cast<double>(order.size()));
  }
  return out;
}

}  // namespace orca
