#include "orca/boost.hpp"

#include <cmath>

namespace orca {

void BoostConfig::validate() const {
  if (batch_size < 1) throw ConfigError("boost: batch_size must be at least 1");
  if (!(optimizer.learning_rate > 0)) throw ConfigError("boost: learning rate must be positive");
}

BoostResult boost_model(const ModelParams& original, std::span<const ExampleIndex> multiset, const CorpusIndex& corpus,
                        const BoostConfig& cfg) {
  cfg.validate();
  BoostResult out{original, 0};
  if (multiset.empty()) return out;
  for (ExampleIndex i : multiset) {
    if (i >= corpus.size()) throw DataError("evidence index " + std::to_string(i) + " outside corpus");
  }
  std::vector<ExampleIndex> order(multiset.begin(), multiset.end());
  Rng rng(cfg.seed);
  rng.shuffle(order);

  Optimizer opt(cfg.optimizer, original.size());
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<LossTerm> terms;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t end = std::min(order.size(), start + batch);
    terms.clear();
    for (std::size_t i = start; i < end; ++i) terms.push_back(lm_term(corpus[order[i]]));
    const auto grad = full_gradient(out.params, terms, cfg.workers);
    opt.step(out.params.flat(), grad);
    ++out.updates;
  }
  return out;
}

BoostResult boost_model(const ModelParams& original, const EvidenceSet& evidence, const CorpusIndex& corpus,
                        const BoostConfig& cfg) {
  std::vector<ExampleIndex> indices;
  indices.reserve(evidence.size());
  for (const auto& e : evidence.entries) indices.push_back(corpus.index_of(e.example_id));
  return boost_model(original, indices, corpus, cfg);
}

double evaluate_accuracy(const ModelParams& params, const PromptedTask& task, int workers) {
  if (task.examples.empty()) throw DataError("evaluate_accuracy: no task examples");
  std::vector<char> correct(task.examples.size(), 0);
  parallel_for(task.examples.size(), workers, [&](std::size_t i) {
    const auto& x = task.examples[i];
    correct[i] = predict_label(params, x, task.tpl, task.verbalizer) == x.label ? 1 : 0;
  });
  std::size_t hits = 0;
  for (char c : correct) hits += static_cast<std::size_t>(c);
  return static_cast<double>(hits) / static_cast<double>(task.examples.size());
}

EvalReport quality_q(const ModelParams& original, const EvidenceSet& evidence, const CorpusIndex& corpus,
                     const PromptedTask& task, const BoostConfig& cfg) {
  EvalReport r;
  r.method = evidence.method;
  r.seed = cfg.seed;
  r.evidence_size = evidence.size();
  r.acc_original = evaluate_accuracy(original, task, cfg.workers);
  if (evidence.empty()) {
    r.acc_boosted = r.acc_original;
  } else {
    const auto boosted = boost_model(original, evidence, corpus, cfg);
    r.updates = boosted.updates;
    r.acc_boosted = evaluate_accuracy(boosted.params, task, cfg.workers);
  }
  r.q = r.acc_boosted - r.acc_original;
  return r;
}

std::vector<TrajectoryPoint> quality_trajectory(const ModelParams& original, const EvidenceSet& evidence,
                                                const CorpusIndex& corpus, const PromptedTask& task,
                                                const BoostConfig& cfg, const std::vector<std::size_t>& checkpoints) {
  std::vector<ExampleIndex> indices;
  indices.reserve(evidence.size());
  for (const auto& e : evidence.entries) indices.push_back(corpus.index_of(e.example_id));
  std::vector<TrajectoryPoint> out;
  std::size_t previous = 0;
  for (std::size_t n : checkpoints) {
    if (n > indices.size()) {
      throw ConfigError("trajectory checkpoint " + std::to_string(n) + " exceeds evidence size " +
                        std::to_string(indices.size()));
    }
    if (!out.empty() && n < previous) throw ConfigError("trajectory checkpoints must be ascending");
    previous = n;
    const auto boosted = boost_model(original, std::span(indices).first(n), corpus, cfg);
    out.push_back(TrajectoryPoint{n, evaluate_accuracy(boosted.params, task, cfg.workers)});
  }
  return out;
}

QualityAggregate aggregate(std::span<const EvalReport> reports) {
  QualityAggregate a;
  a.runs = reports.size();
  if (reports.empty()) return a;
  for (const auto& r : reports) {
    a.mean_q += r.q;
    a.mean_acc_original += r.acc_original;
    a.mean_acc_boosted += r.acc_boosted;
  }
  const double n = static_cast<double>(reports.size());
  a.mean_q /= n;
  a.mean_acc_original /= n;
  a.mean_acc_boosted /= n;
  if (reports.size() > 1) {
    double ss = 0.0;
    for (const auto& r : reports) ss += (r.q - a.mean_q) * (r.q - a.mean_q);
    a.std_q = std::sqrt(ss / (n - 1.0));
  }
  return a;
}

}  // namespace orca
