#include "orca/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace orca {

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("cosine_sim: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return kZeroScore;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

std::vector<SegmentSpan> filter_spans(const GradientFilter& filter, const ParamLayout& layout) {
  std::vector<SegmentSpan> spans;
  for (int s = 0; s < kNumSegments; ++s) {
    const auto seg = static_cast<Segment>(s);
    if (filter.includes(seg) && layout[seg].size > 0) spans.push_back(layout[seg]);
  }
  return spans;
}

// Cosine between the filtered part of a full-layout vector and an already
// filtered reference, without materializing the extraction.
double filtered_cosine(std::span<const double> full, const std::vector<SegmentSpan>& spans,
                       std::span<const double> ref, double ref_norm) {
  double dot = 0.0, norm = 0.0;
  std::size_t cursor = 0;
  for (const auto& sp : spans) {
    const double* g = full.data() + sp.offset;
    const double* r = ref.data() + cursor;
    for (std::size_t i = 0; i < sp.size; ++i) {
      dot += g[i] * r[i];
      norm += g[i] * g[i];
    }
    cursor += sp.size;
  }
  if (norm == 0.0 || ref_norm == 0.0) return kZeroScore;
  return dot / (std::sqrt(norm) * ref_norm);
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void require_task(const PromptedTask& task) {
  if (task.examples.empty()) throw DataError("task reference: task data is empty");
}

class GradientScorer final : public Scorer {
 public:
  GradientScorer(std::string filter_id, int workers) : filter_id_(std::move(filter_id)), workers_(workers) {
    GradientFilter::by_id(filter_id_);
  }

  Backend backend() const override { return Backend::kGradient; }

  TaskReference reference(const ModelParams& params, const PromptedTask& task) const override {
    require_task(task);
    std::vector<LossTerm> terms;
    terms.reserve(task.examples.size());
    for (const auto& x : task.examples) terms.push_back(task_term(x, task.tpl, task.verbalizer, params.config()));
    const auto filter = GradientFilter::by_id(filter_id_);
    const auto full = full_gradient(params, terms, workers_);
    TaskReference ref{Backend::kGradient, filter_id_, std::vector<double>(filter.dimension(params.layout()))};
    filter.extract(params.layout(), full, ref.vector);
    return ref;
  }

  std::vector<double> score(const CorpusIndex& corpus, const ModelParams& scoring_model,
                            const TaskReference& ref) const override {
    if (ref.backend != Backend::kGradient || ref.filter_id != filter_id_) {
      throw ConfigError("score_corpus: task reference does not match the gradient scorer");
    }
    const auto filter = GradientFilter::by_id(filter_id_);
    const auto& layout = scoring_model.layout();
    if (ref.vector.size() != filter.dimension(layout)) throw ConfigError("score_corpus: reference dimension mismatch");
    const auto spans = filter_spans(filter, layout);
    const double ref_norm = norm2(ref.vector);
    std::vector<double> scores(corpus.size(), kZeroScore);
    const MaskedLm lm(scoring_model);
    parallel_chunks(corpus.size(), workers_, [&](std::size_t, std::size_t begin, std::size_t end) {
      Workspace ws;
      std::vector<double> grad(scoring_model.size());
      for (std::size_t i = begin; i < end; ++i) {
        std::fill(grad.begin(), grad.end(), 0.0);
        lm.accumulate_gradient(lm_term(corpus[static_cast<ExampleIndex>(i)]), 1.0, grad, ws);
        scores[i] = filtered_cosine(grad, spans, ref.vector, ref_norm);
      }
    });
    return scores;
  }

 private:
  std::string filter_id_;
  int workers_;
};

class EmbeddingScorer final : public Scorer {
 public:
  explicit EmbeddingScorer(int workers) : workers_(workers) {}

  Backend backend() const override { return Backend::kEmbedding; }

  TaskReference reference(const ModelParams& params, const PromptedTask& task) const override {
    require_task(task);
    TaskReference ref{Backend::kEmbedding, "", std::vector<double>(static_cast<std::size_t>(params.config().dim), 0.0)};
    for (const auto& x : task.examples) {
      const auto h = task_embedding(params, x, task.tpl, task.verbalizer);
      for (std::size_t j = 0; j < h.size(); ++j) ref.vector[j] += h[j];
    }
    for (double& v : ref.vector) v /= static_cast<double>(task.examples.size());
    return ref;
  }

  std::vector<double> score(const CorpusIndex& corpus, const ModelParams& scoring_model,
                            const TaskReference& ref) const override {
    if (ref.backend != Backend::kEmbedding) {
      throw ConfigError("score_corpus: task reference does not match the embedding scorer");
    }
    if (ref.vector.size() != static_cast<std::size_t>(scoring_model.config().dim)) {
      throw ConfigError("score_corpus: reference dimension mismatch");
    }
    std::vector<double> scores(corpus.size(), kZeroScore);
    parallel_chunks(corpus.size(), workers_, [&](std::size_t, std::size_t begin, std::size_t end) {
      Workspace ws;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ex = corpus[static_cast<ExampleIndex>(i)];
        const auto h = hidden_with_token(scoring_model, ex.context, ex.masked_position, ex.masked_token, false, ws);
        scores[i] = cosine_sim(h, ref.vector);
      }
    });
    return scores;
  }

 private:
  int workers_;
};

std::string method_name(const SelectionConfig& cfg) {
  std::string name = "orca";
  if (cfg.backend == Backend::kEmbedding) name += "_embed";
  if (cfg.lagging == Lagging::kNoLag) name += "_nl";
  return name;
}

}  // namespace

std::unique_ptr<Scorer> make_scorer(Backend backend, const std::string& filter_id, int workers) {
  if (backend == Backend::kEmbedding) return std::make_unique<EmbeddingScorer>(workers);
  return std::make_unique<GradientScorer>(filter_id, workers);
}

TaskReference task_reference(const ModelParams& params, const PromptedTask& task, Backend backend,
                             const std::string& filter_id, int workers) {
  return make_scorer(backend, filter_id, workers)->reference(params, task);
}

std::vector<double> score_corpus(const CorpusIndex& corpus, const ModelParams& scoring_model,
                                 const TaskReference& ref, int workers) {
  if (corpus.empty()) throw DataError("score_corpus: corpus is empty");
  return make_scorer(ref.backend, ref.backend == Backend::kGradient ? ref.filter_id : "lm", workers)
      ->score(corpus, scoring_model, ref);
}

std::vector<ExampleIndex> select_iteration(std::span<const double> scores, std::size_t per_iter,
                                           std::span<const int> multiplicity, int cap) {
  if (per_iter == 0) throw ConfigError("select_iteration: per_iter must be at least 1");
  if (multiplicity.size() != scores.size()) throw ConfigError("select_iteration: multiplicity size mismatch");
  std::vector<ExampleIndex> eligible;
  eligible.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (multiplicity[i] < cap && scores[i] != kZeroScore && !std::isnan(scores[i])) {
      eligible.push_back(static_cast<ExampleIndex>(i));
    }
  }
  if (eligible.size() < per_iter) throw SelectionShortfall(per_iter, eligible.size());
  const auto better = [&](ExampleIndex a, ExampleIndex b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(per_iter), eligible.end(),
                    better);
  eligible.resize(per_iter);
  return eligible;
}

void SelectionConfig::validate() const {
  if (m < 1) throw ConfigError("selection: m must be at least 1");
  if (per_iter < 1) throw ConfigError("selection: per_iter must be at least 1");
  if (task_subsample < 0) throw ConfigError("selection: task_subsample must be non-negative");
  if (backend == Backend::kGradient) GradientFilter::by_id(filter_id);
}

OrcaResult orca_select(const CorpusIndex& corpus, const PromptedTask& task, const ModelParams& initial,
                       const SelectionConfig& cfg, const BoostConfig& boost, const ScoreSink& sink) {
  cfg.validate();
  boost.validate();
  if (corpus.empty()) throw DataError("orca_select: corpus is empty");
  if (task.examples.empty()) throw DataError("orca_select: task data is empty");

  PromptedTask batch = task;
  if (cfg.task_subsample > 0 && static_cast<std::size_t>(cfg.task_subsample) < task.examples.size()) {
    std::vector<std::size_t> order(task.examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed);
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(cfg.task_subsample));
    std::sort(order.begin(), order.end());
    batch.examples.clear();
    for (std::size_t i : order) batch.examples.push_back(task.examples[i]);
  }

  const auto scorer = make_scorer(cfg.backend, cfg.filter_id, cfg.workers);
  OrcaResult out;
  out.evidence.method = method_name(cfg);
  out.evidence.backend = to_string(cfg.backend);
  out.evidence.lagging = to_string(cfg.lagging);
  out.evidence.seed = cfg.seed;
  out.boosted = initial;

  std::vector<int> multiplicity(corpus.size(), 0);
  std::vector<ExampleIndex> selected;
  for (int it = 1; it <= cfg.m; ++it) {
    const auto ref = scorer->reference(out.boosted, batch);
    const ModelParams& scoring = cfg.lagging == Lagging::kMaxLag ? initial : out.boosted;
    const auto scores = scorer->score(corpus, scoring, ref);
    if (sink) sink(it, scores);

    const auto chosen = select_iteration(scores, static_cast<std::size_t>(cfg.per_iter), multiplicity, cfg.cap());
    IterationTrace trace{it, scores[chosen.back()], 0};
    trace.zero_scores = static_cast<std::size_t>(std::count(scores.begin(), scores.end(), kZeroScore));
    out.trace.push_back(trace);
    for (ExampleIndex i : chosen) {
      ++multiplicity[i];
      selected.push_back(i);
      out.evidence.entries.push_back(EvidenceEntry{i, corpus[i].id, it, scores[i]});
    }
    out.boosted = boost_model(initial, selected, corpus, boost).params;
  }
  return out;
}

EvidenceSet baseline_random(const CorpusIndex& corpus, std::size_t size, std::uint64_t seed) {
  if (size > corpus.size()) {
    throw ConfigError("random baseline: size " + std::to_string(size) + " exceeds corpus size " +
                      std::to_string(corpus.size()));
  }
  std::vector<ExampleIndex> order(corpus.size());
  std::iota(order.begin(), order.end(), ExampleIndex{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first `size` slots are a uniform sample.
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(order.size() - i));
    std::swap(order[i], order[j]);
  }
  EvidenceSet ev;
  ev.method = "random";
  ev.seed = seed;
  for (std::size_t i = 0; i < size; ++i) ev.entries.push_back(EvidenceEntry{order[i], corpus[order[i]].id, 1, 0.0});
  return ev;
}

std::vector<double> task_embedding(const ModelParams& params, const TaskExample& x, const Template& tpl,
                                   const Verbalizer& vb) {
  const auto& cfg = params.config();
  const auto rendered = apply_template(x, tpl, static_cast<std::size_t>(cfg.context_len), cfg.special());
  Workspace ws;
  return hidden_with_token(params, rendered.context, rendered.mask_position, vb.token(x.label), true, ws);
}

std::vector<std::vector<double>> corpus_embeddings(const CorpusIndex& corpus, const ModelParams& params,
                                                   int workers) {
  std::vector<std::vector<double>> out(corpus.size());
  parallel_chunks(corpus.size(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    Workspace ws;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& ex = corpus[static_cast<ExampleIndex>(i)];
      out[i] = hidden_with_token(params, ex.context, ex.masked_position, ex.masked_token, false, ws);
    }
  });
  return out;
}

KnnResult baseline_knn(const CorpusIndex& corpus, const PromptedTask& task, const ModelParams& params,
                       const KnnConfig& cfg) {
  if (cfg.t < 1 || cfg.k < 1 || cfg.max_r < 1 || cfg.size < 0) throw ConfigError("knn: t, k and max_r must be positive");
  if (static_cast<std::size_t>(cfg.t) > task.examples.size()) {
    throw ConfigError("knn: t=" + std::to_string(cfg.t) + " exceeds task size " + std::to_string(task.examples.size()));
  }
  if (static_cast<std::size_t>(cfg.k) > corpus.size()) {
    throw ConfigError("knn: k=" + std::to_string(cfg.k) + " exceeds corpus size " + std::to_string(corpus.size()));
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> tasks(task.examples.size());
  std::iota(tasks.begin(), tasks.end(), 0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.t); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(tasks.size() - i));
    std::swap(tasks[i], tasks[j]);
  }
  tasks.resize(static_cast<std::size_t>(cfg.t));

  const auto emb = corpus_embeddings(corpus, params, cfg.workers);
  const std::size_t k = static_cast<std::size_t>(cfg.k);
  std::vector<std::vector<ExampleIndex>> top(tasks.size());
  std::vector<std::vector<double>> top_scores(tasks.size());
  parallel_for(tasks.size(), cfg.workers, [&](std::size_t q) {
    const auto& x = task.examples[tasks[q]];
    const auto h = task_embedding(params, x, task.tpl, task.verbalizer);
    std::vector<double> scores(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) scores[i] = cosine_sim(emb[i], h);
    std::vector<ExampleIndex> order(corpus.size());
    std::iota(order.begin(), order.end(), ExampleIndex{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](ExampleIndex a, ExampleIndex b) {
                        if (scores[a] != scores[b]) return scores[a] > scores[b];
                        return a < b;
                      });
    order.resize(k);
    top_scores[q].reserve(k);
    for (ExampleIndex i : order) top_scores[q].push_back(scores[i]);
    top[q] = std::move(order);
  });

  KnnResult out;
  for (std::size_t q = 0; q < tasks.size(); ++q) {
    out.pool.insert(out.pool.end(), top[q].begin(), top[q].end());
    out.pool_scores.insert(out.pool_scores.end(), top_scores[q].begin(), top_scores[q].end());
  }
  std::map<ExampleIndex, int> in_pool;
  for (ExampleIndex i : out.pool) ++in_pool[i];
  std::size_t feasible = 0;
  for (const auto& [i, c] : in_pool) feasible += static_cast<std::size_t>(std::min(c, cfg.max_r));
  const auto size = static_cast<std::size_t>(cfg.size);
  if (feasible < size) {
    throw ConfigError("knn: cannot draw " + std::to_string(size) + " entries from a pool of " +
                      std::to_string(out.pool.size()) + " with max_r=" + std::to_string(cfg.max_r) + " (at most " +
                      std::to_string(feasible) + ")");
  }

  std::vector<std::size_t> slots(out.pool.size());
  std::iota(slots.begin(), slots.end(), 0);
  rng.shuffle(slots);
  out.evidence.method = "knn";
  out.evidence.backend = to_string(Backend::kEmbedding);
  out.evidence.seed = cfg.seed;
  std::map<ExampleIndex, int> taken;
  for (std::size_t s : slots) {
    if (out.evidence.size() == size) break;
    const ExampleIndex i = out.pool[s];
    if (taken[i] >= cfg.max_r) continue;
    ++taken[i];
    out.evidence.entries.push_back(EvidenceEntry{i, corpus[i].id, 1, out.pool_scores[s]});
  }
  return out;
}

}  // namespace orca
