#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "orca/boost.hpp"
#include "orca/corpus.hpp"
#include "orca/evidence.hpp"
#include "orca/model.hpp"

namespace orca {

// Score given to examples whose vector has zero norm; never selected.
inline constexpr double kZeroScore = -std::numeric_limits<double>::infinity();

// a.b / (|a| |b|), or kZeroScore when either vector is zero.
double cosine_sim(std::span<const double> a, std::span<const double> b);

struct TaskReference {
  Backend backend = Backend::kGradient;
  std::string filter_id;  // gradient backend only
  std::vector<double> vector;
};

// Task-side vector compared against every pretraining example.
//   gradient:  mean task-loss gradient over all task examples
//   embedding: mean last hidden state at the mask with the gold verbalizer
//              token filled in
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual Backend backend() const = 0;
  virtual TaskReference reference(const ModelParams& params, const PromptedTask& task) const = 0;
  // One score per example, in input order. Bit-identical for any worker count.
  virtual std::vector<double> score(const CorpusIndex& corpus, const ModelParams& scoring_model,
                                    const TaskReference& ref) const = 0;
};

std::unique_ptr<Scorer> make_scorer(Backend backend, const std::string& filter_id = "lm", int workers = 1);

TaskReference task_reference(const ModelParams& params, const PromptedTask& task, Backend backend,
                             const std::string& filter_id = "lm", int workers = 1);
std::vector<double> score_corpus(const CorpusIndex& corpus, const ModelParams& scoring_model,
                                 const TaskReference& ref, int workers = 1);

// Top per_iter eligible examples by (score desc, index asc). An example is
// eligible when its multiplicity so far is below `cap` and its score is not
// kZeroScore. Throws SelectionShortfall when too few are eligible.
std::vector<ExampleIndex> select_iteration(std::span<const double> scores, std::size_t per_iter,
                                           std::span<const int> multiplicity, int cap);

struct SelectionConfig {
  int m = 20;
  int per_iter = 100;
  Lagging lagging = Lagging::kMaxLag;
  Backend backend = Backend::kGradient;
  std::string filter_id = "lm";
  bool replacement = true;  // cap = m, else each example at most once
  std::uint64_t seed = 0;   // task subsampling
  int task_subsample = 0;   // 0 = all task examples in the reference batch
  int workers = 1;

  void validate() const;
  int cap() const { return replacement ? m : 1; }
};

struct IterationTrace {
  int iteration = 0;
  double threshold = 0.0;  // score of the last selected example
  std::size_t zero_scores = 0;
};

struct OrcaResult {
  EvidenceSet evidence;
  ModelParams boosted;  // model after the last iteration
  std::vector<IterationTrace> trace;
};

using ScoreSink = std::function<void(int iteration, std::span<const double> scores)>;

// Iterative selection. Iteration i builds the task reference at the previous
// intermediate model, scores the corpus at the original model (max lag) or
// the previous intermediate model (no lag), takes the top per_iter eligible
// examples, then re-boosts the original model on the union so far.
OrcaResult orca_select(const CorpusIndex& corpus, const PromptedTask& task, const ModelParams& initial,
                       const SelectionConfig& cfg, const BoostConfig& boost, const ScoreSink& sink = {});

// Uniform sample without replacement.
EvidenceSet baseline_random(const CorpusIndex& corpus, std::size_t size, std::uint64_t seed);

struct KnnConfig {
  int t = 1000;
  int k = 10;
  int max_r = 1;
  int size = 2000;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct KnnResult {
  EvidenceSet evidence;
  std::vector<ExampleIndex> pool;  // t * k candidates, per task example in rank order
  std::vector<double> pool_scores;
};

// Embedding nearest neighbours: sample t task examples, take each one's top k
// pretraining examples by hidden-state cosine, then sample `size` entries
// from the pool with at most max_r copies of any example.
KnnResult baseline_knn(const CorpusIndex& corpus, const PromptedTask& task, const ModelParams& params,
                       const KnnConfig& cfg);

// Hidden states at the masked position with the gold token filled in.
std::vector<std::vector<double>> corpus_embeddings(const CorpusIndex& corpus, const ModelParams& params,
                                                   int workers = 1);
std::vector<double> task_embedding(const ModelParams& params, const TaskExample& x, const Template& tpl,
                                   const Verbalizer& vb);

}  // namespace orca
