#pragma once

#include <span>
#include <string>
#include <vector>

#include "orca/corpus.hpp"
#include "orca/evidence.hpp"
#include "orca/model.hpp"
#include "orca/optimizer.hpp"

namespace orca {

struct BoostConfig {
  int batch_size = 16;
  OptimizerConfig optimizer;  // Adam(0.9, 0.999, 1e-8), lr 2e-5
  std::uint64_t seed = 0;     // shuffle seed
  int workers = 1;

  void validate() const;
};

struct BoostResult {
  ModelParams params;
  int updates = 0;
};

// One pass of continued pretraining over the multiset S: shuffle with
// cfg.seed, cut into batches of batch_size (the last one may be short) and
// take one optimizer step per batch on the mean LM loss.
BoostResult boost_model(const ModelParams& original, std::span<const ExampleIndex> multiset, const CorpusIndex& corpus,
                        const BoostConfig& cfg);
// Entries are resolved by example id; unknown ids raise DataError.
BoostResult boost_model(const ModelParams& original, const EvidenceSet& evidence, const CorpusIndex& corpus,
                        const BoostConfig& cfg);

double evaluate_accuracy(const ModelParams& params, const PromptedTask& task, int workers = 1);

struct TrajectoryPoint {
  std::size_t prefix_size = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t evidence_size = 0;
  int updates = 0;
  double acc_original = 0.0;
  double acc_boosted = 0.0;
  double q = 0.0;  // acc_boosted - acc_original
  std::vector<TrajectoryPoint> trajectory;
};

// Q(S): boosted-minus-original task accuracy.
EvalReport quality_q(const ModelParams& original, const EvidenceSet& evidence, const CorpusIndex& corpus,
                     const PromptedTask& task, const BoostConfig& cfg);

// For every prefix size n, re-boosts the original model on the first n
// entries (iteration order) and evaluates it.
std::vector<TrajectoryPoint> quality_trajectory(const ModelParams& original, const EvidenceSet& evidence,
                                                const CorpusIndex& corpus, const PromptedTask& task,
                                                const BoostConfig& cfg, const std::vector<std::size_t>& checkpoints);

struct QualityAggregate {
  std::size_t runs = 0;
  double mean_q = 0.0;
  double std_q = 0.0;  // sample standard deviation (n - 1)
  double mean_acc_original = 0.0;
  double mean_acc_boosted = 0.0;
};

QualityAggregate aggregate(std::span<const EvalReport> reports);

}  // namespace orca
