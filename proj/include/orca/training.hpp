#pragma once

#include <vector>

#include "orca/corpus.hpp"
#include "orca/model.hpp"
#include "orca/optimizer.hpp"

namespace orca {

struct TuneConfig {
  int steps = 100;
  int batch_size = 16;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct TuneResult {
  ModelParams params;
  std::vector<double> losses;  // mean batch loss per step, before the update
};

// Adam on the soft-prompt segment only; every other segment is returned
// bit-identical. Batches are drawn from reshuffled passes over `train`.
TuneResult tune_soft_prompt(const ModelParams& params, const PromptedTask& train, const TuneConfig& cfg);

struct PretrainConfig {
  int epochs = 2;
  int batch_size = 32;
  OptimizerConfig optimizer{OptimizerKind::kAdam, 3e-3};
  // Linear decay from the base rate to base * final_lr_fraction over all steps.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct PretrainResult {
  ModelParams params;
  std::vector<double> epoch_losses;
};

// Trains a masked LM from `init` on the expanded examples. This produces the
// "original" model that attribution then explains.
PretrainResult pretrain_mlm(const ModelParams& init, const std::vector<PretrainExample>& examples,
                            const PretrainConfig& cfg);

}  // namespace orca
