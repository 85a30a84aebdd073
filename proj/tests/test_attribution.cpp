#include <cmath>

#include "doctest.h"
#include "orca/synthetic.hpp"
#include "orca/training.hpp"
#include "support.hpp"

using namespace orca;
using namespace fixture;

namespace {

struct World {
  ModelConfig mc;
  ModelParams params;
  CorpusIndex corpus;
  PromptedTask task;
};

World world(int n, std::uint64_t seed, int prompt = 0) {
  World w;
  w.mc = tiny_model(24, 12, 8, prompt);
  w.params = ModelParams::random(w.mc, seed, 0.3);
  w.corpus = CorpusIndex(random_examples(n, w.mc, mix_seed(seed, 1)));
  w.task = random_task(16, w.mc, mix_seed(seed, 2));
  return w;
}

BoostConfig fast_boost() {
  BoostConfig b;
  b.batch_size = 4;
  b.optimizer.learning_rate = 1e-2;
  return b;
}

std::vector<ExampleIndex> ids(const EvidenceSet& s) { return s.indices(); }

}  // namespace

TEST_CASE("cosine similarity: self, scale, zero and high-precision oracle") {
  Rng rng(3);
  std::vector<double> g(1000), h(1000);
  for (auto& v : g) v = rng.normal();
  for (auto& v : h) v = rng.normal() * 1e-3 + 0.1;
  CHECK(std::abs(cosine_sim(g, g) - 1.0) <= 1e-9);
  std::vector<double> scaled = g;
  for (auto& v : scaled) v *= 3.7;
  CHECK(std::abs(cosine_sim(scaled, h) - cosine_sim(g, h)) <= 1e-9);
  const auto oracle = cosine_oracle(g, h);
  REQUIRE(oracle);
  CHECK(std::abs(cosine_sim(g, h) - oracle->convert_to<double>()) <= 1e-9);
  std::vector<double> zero(1000, 0.0);
  CHECK(cosine_sim(zero, g) == kZeroScore);
  CHECK_THROWS_AS(cosine_sim(g, std::vector<double>(3, 1.0)), ConfigError);
}

TEST_CASE("task reference: singleton, duplicated and embedding mean") {
  auto w = world(10, 4);
  PromptedTask one = w.task;
  one.examples.resize(1);
  const auto ref = task_reference(w.params, one, Backend::kGradient, "lm");
  const auto direct = task_gradient(w.params, one, "lm");
  REQUIRE(ref.vector.size() == direct.size());
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(ref.vector[i] == doctest::Approx(direct[i]).epsilon(1e-12));

  PromptedTask two = one;
  two.examples.push_back(one.examples[0]);
  const auto ref2 = task_reference(w.params, two, Backend::kGradient, "lm");
  for (std::size_t i = 0; i < direct.size(); ++i) CHECK(ref2.vector[i] == doctest::Approx(ref.vector[i]).epsilon(1e-12));

  // Embedding reference: mean hidden state with the gold verbalizer filled in.
  const auto emb = task_reference(w.params, w.task, Backend::kEmbedding);
  std::vector<double> mean(static_cast<std::size_t>(w.mc.dim), 0.0);
  MaskedLm lm(w.params);
  Workspace ws;
  for (const auto& x : w.task.examples) {
    auto r = apply_template(x, w.task.tpl, 12, w.mc.special());
    r.context[r.mask_position] = w.task.verbalizer.token(x.label);
    lm.forward(r.context, r.mask_position, true, ws);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += ws.hidden[i] / static_cast<double>(w.task.examples.size());
  }
  for (std::size_t i = 0; i < mean.size(); ++i) CHECK(emb.vector[i] == doctest::Approx(mean[i]).epsilon(1e-12));
}

TEST_CASE("a task example recast as a pretraining example aligns with its own reference") {
  auto w = world(4, 5);
  for (const auto& x : w.task.examples) {
    const auto r = apply_template(x, w.task.tpl, 12, w.mc.special());
    PretrainExample e{"self:0000", "self", "A", r.context, r.mask_position, w.task.verbalizer.token(x.label)};
    PromptedTask single{{x}, w.task.tpl, w.task.verbalizer};
    const auto ref = task_reference(w.params, single, Backend::kGradient, "lm");
    const auto scores = score_corpus(CorpusIndex({e}), w.params, ref);
    CHECK(std::abs(scores[0] - 1.0) <= 1e-6);
  }
}

TEST_CASE("scores are bit-identical for 1 and 8 workers") {
  auto w = world(120, 6);
  for (Backend b : {Backend::kGradient, Backend::kEmbedding}) {
    const auto ref = task_reference(w.params, w.task, b, "lm", 1);
    const auto one = score_corpus(w.corpus, w.params, ref, 1);
    CHECK(score_corpus(w.corpus, w.params, ref, 8) == one);
    CHECK(task_reference(w.params, w.task, b, "lm", 8).vector == ref.vector);
  }
}

TEST_CASE("select_iteration tie-break, total selection and shortfall") {
  const std::vector<double> s{0.9, 0.5, 0.9, 0.1};
  std::vector<int> mult(4, 0);
  CHECK(select_iteration(s, 2, mult, 1) == std::vector<ExampleIndex>{0, 2});
  const auto all = select_iteration(s, 4, mult, 1);
  CHECK(std::set<ExampleIndex>(all.begin(), all.end()).size() == 4);
  mult[0] = 1;
  CHECK(select_iteration(s, 2, mult, 1) == std::vector<ExampleIndex>{2, 1});
  CHECK_THROWS_AS(select_iteration(s, 4, mult, 1), SelectionShortfall);
  const std::vector<double> z{kZeroScore, 0.2, std::nan("")};
  CHECK_THROWS_AS(select_iteration(z, 2, std::vector<int>(3, 0), 1), SelectionShortfall);
}

TEST_CASE("select_iteration equals an exhaustive sort oracle on 200 examples") {
  Rng rng(8);
  std::vector<double> s(200);
  for (auto& v : s) v = std::round(rng.normal() * 20.0) / 20.0;  // plenty of ties
  std::vector<ExampleIndex> order(200);
  for (ExampleIndex i = 0; i < 200; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](ExampleIndex a, ExampleIndex b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
  for (std::size_t k : {1u, 17u, 100u, 200u}) {
    CHECK(select_iteration(s, k, std::vector<int>(200, 0), 1) ==
          std::vector<ExampleIndex>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)));
  }
}

TEST_CASE("ORCA with m=1 is the exhaustive top-per_iter by cosine") {
  auto w = world(300, 7);
  SelectionConfig cfg;
  cfg.m = 1;
  cfg.per_iter = 25;
  const auto r = orca_select(w.corpus, w.task, w.params, cfg, fast_boost());
  const auto rank = exhaustive_ranking(example_gradients(w.params, w.corpus, "lm"), task_gradient(w.params, w.task, "lm"));
  CHECK(ids(r.evidence) == std::vector<ExampleIndex>(rank.begin(), rank.begin() + 25));
  const auto ref = task_reference(w.params, w.task, Backend::kGradient, "lm");
  CHECK(ids(r.evidence) == select_iteration(score_corpus(w.corpus, w.params, ref), 25, std::vector<int>(300, 0), 1));
  CHECK(r.evidence.method == "orca");
}

TEST_CASE("ORCA with m=2 matches the scripted recurrence id for id") {
  auto w = world(100, 9);
  for (const std::string filter : {"lm", "head", "all"}) {
    SelectionConfig cfg;
    cfg.m = 2;
    cfg.per_iter = 10;
    cfg.filter_id = filter;
    const auto r = orca_select(w.corpus, w.task, w.params, cfg, fast_boost());
    CHECK(ids(r.evidence) == scripted_orca(w.corpus, w.task, w.params, 2, 10, filter, fast_boost()));
    CHECK(r.evidence.entries[10].iteration == 2);
  }
}

TEST_CASE("reference scaling leaves every selection unchanged") {
  auto w = world(150, 10);
  auto ref = task_reference(w.params, w.task, Backend::kGradient, "lm");
  const auto base = score_corpus(w.corpus, w.params, ref);
  for (auto& v : ref.vector) v *= 123.5;
  const auto scaled = score_corpus(w.corpus, w.params, ref);
  std::vector<int> mult(150, 0);
  CHECK(select_iteration(base, 30, mult, 1) == select_iteration(scaled, 30, mult, 1));
}

TEST_CASE("lagging and backend variants share the control flow") {
  auto w = world(80, 11, 2);
  SelectionConfig cfg;
  cfg.m = 3;
  cfg.per_iter = 5;
  const auto max_lag = orca_select(w.corpus, w.task, w.params, cfg, fast_boost());
  cfg.lagging = Lagging::kNoLag;
  const auto no_lag = orca_select(w.corpus, w.task, w.params, cfg, fast_boost());
  CHECK(no_lag.evidence.method == "orca_nl");
  CHECK(no_lag.evidence.iteration(1) == max_lag.evidence.iteration(1));
  cfg.lagging = Lagging::kMaxLag;
  cfg.backend = Backend::kEmbedding;
  int calls = 0;
  const auto emb = orca_select(w.corpus, w.task, w.params, cfg, fast_boost(), [&](int it, std::span<const double> s) {
    CHECK(it == ++calls);
    CHECK(s.size() == 80);
  });
  CHECK(calls == 3);
  CHECK(emb.evidence.method == "orca_embed");
  CHECK(emb.evidence.backend == "embedding");
  CHECK(emb.evidence.size() == 15);
}

TEST_CASE("ORCA multiplicity respects the cap over random configurations") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 10 + static_cast<int>(rng.uniform_index(40));
    auto w = world(n, 100 + static_cast<std::uint64_t>(trial));
    SelectionConfig cfg;
    cfg.m = 1 + static_cast<int>(rng.uniform_index(4));
    cfg.per_iter = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n)));
    cfg.replacement = rng.bernoulli(0.5);
    cfg.filter_id = "head";
    const bool feasible = cfg.replacement || cfg.m * cfg.per_iter <= n;
    if (!feasible) {
      CHECK_THROWS_AS(orca_select(w.corpus, w.task, w.params, cfg, fast_boost()), SelectionShortfall);
      continue;
    }
    const auto r = orca_select(w.corpus, w.task, w.params, cfg, fast_boost());
    CHECK(r.evidence.size() == static_cast<std::size_t>(cfg.m * cfg.per_iter));
    for (const auto& [i, c] : r.evidence.multiplicity()) CHECK(c <= cfg.cap());
    for (int it = 1; it <= cfg.m; ++it) {
      std::set<std::string> seen;
      for (const auto& e : r.evidence.iteration(it)) CHECK(seen.insert(e.example_id).second);
    }
  }
}

TEST_CASE("ORCA selection is deterministic across runs and worker counts") {
  auto w = world(90, 13);
  SelectionConfig cfg;
  cfg.m = 3;
  cfg.per_iter = 7;
  cfg.task_subsample = 8;
  cfg.seed = 4;
  const auto a = orca_select(w.corpus, w.task, w.params, cfg, fast_boost());
  cfg.workers = 8;
  auto boost = fast_boost();
  boost.workers = 8;
  const auto b = orca_select(w.corpus, w.task, w.params, cfg, boost);
  CHECK(a.evidence == b.evidence);
  CHECK(a.boosted == b.boosted);
}

TEST_CASE("random baseline: permutation, determinism and uniform inclusion") {
  auto w = world(1000, 14);
  auto perm = baseline_random(w.corpus, 1000, 1).indices();
  std::sort(perm.begin(), perm.end());
  for (ExampleIndex i = 0; i < 1000; ++i) CHECK(perm[i] == i);
  CHECK(baseline_random(w.corpus, 50, 3) == baseline_random(w.corpus, 50, 3));
  CHECK(baseline_random(w.corpus, 50, 3).indices() != baseline_random(w.corpus, 50, 4).indices());
  CHECK_THROWS_AS(baseline_random(w.corpus, 1001, 1), ConfigError);

  auto small = world(20, 15);
  std::vector<int> hits(20, 0);
  const int trials = 1000, size = 5;
  for (int s = 0; s < trials; ++s) {
    const auto ev = baseline_random(small.corpus, size, static_cast<std::uint64_t>(s));
    std::set<ExampleIndex> distinct;
    for (ExampleIndex i : ev.indices()) {
      ++hits[i];
      distinct.insert(i);
    }
    CHECK(distinct.size() == static_cast<std::size_t>(size));
  }
  const double p = static_cast<double>(size) / 20.0;
  const double mean = trials * p, sigma = std::sqrt(trials * p * (1 - p));
  for (int h : hits) CHECK(std::abs(h - mean) <= 3 * sigma);
}

TEST_CASE("kNN with t=1 and k=N ranks the whole corpus like an exhaustive oracle") {
  auto w = world(60, 16);
  PromptedTask one = w.task;
  one.examples.resize(1);
  KnnConfig cfg;
  cfg.t = 1;
  cfg.k = 60;
  cfg.max_r = 1;
  cfg.size = 60;
  const auto r = baseline_knn(w.corpus, one, w.params, cfg);
  const auto query = task_embedding(w.params, one.examples[0], one.tpl, one.verbalizer);
  const auto rank = exhaustive_ranking(corpus_embeddings(w.corpus, w.params), query);
  CHECK(r.pool == rank);
  auto sel = r.evidence.indices();
  std::sort(sel.begin(), sel.end());
  CHECK(std::adjacent_find(sel.begin(), sel.end()) == sel.end());
  CHECK(sel.size() == 60);
}

TEST_CASE("kNN fuzz: pool size, repetition cap and feasibility") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 8 + static_cast<int>(rng.uniform_index(30));
    auto w = world(n, 200 + static_cast<std::uint64_t>(trial));
    KnnConfig cfg;
    cfg.t = 1 + static_cast<int>(rng.uniform_index(w.task.examples.size()));
    cfg.k = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n)));
    cfg.max_r = 1 + static_cast<int>(rng.uniform_index(4));
    cfg.size = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n)));
    cfg.seed = static_cast<std::uint64_t>(trial);
    cfg.workers = 1 + static_cast<int>(rng.uniform_index(4));
    try {
      const auto r = baseline_knn(w.corpus, w.task, w.params, cfg);
      CHECK(r.pool.size() <= static_cast<std::size_t>(cfg.t * cfg.k));
      CHECK(r.evidence.size() == static_cast<std::size_t>(cfg.size));
      std::map<ExampleIndex, int> pool_count;
      for (ExampleIndex i : r.pool) ++pool_count[i];
      for (const auto& [i, c] : r.evidence.multiplicity()) {
        CHECK(c <= cfg.max_r);
        CHECK(c <= pool_count[i]);
      }
    } catch (const ConfigError&) {
      // Only allowed when the pool cannot supply `size` entries under the cap.
      const int wanted = cfg.size;
      cfg.size = 1;
      const auto r = baseline_knn(w.corpus, w.task, w.params, cfg);
      std::map<ExampleIndex, int> pool_count;
      for (ExampleIndex i : r.pool) ++pool_count[i];
      int supply = 0;
      for (const auto& [i, c] : pool_count) supply += std::min(c, cfg.max_r);
      CHECK(supply < wanted);
    }
  }
  auto w = world(30, 3);
  KnnConfig bad;
  bad.t = 0;
  CHECK_THROWS_AS(baseline_knn(w.corpus, w.task, w.params, bad), ConfigError);
}

TEST_CASE("planted verbalizer examples score above the corpus median on a small testbed") {
  SyntheticConfig sc;
  sc.docs_a = 120;
  sc.docs_b = 120;
  sc.task_examples = 60;
  const auto tb = generate_synthetic(sc, 3);
  ModelConfig mc;
  mc.vocab_size = sc.vocab_size;
  mc.context_len = sc.context_len;
  mc.dim = 16;
  mc.ffn_dim = 32;
  PretrainConfig pc;
  pc.epochs = 4;
  pc.final_lr_fraction = 0.1;
  const auto pt = pretrain_mlm(ModelParams::random(mc, 1), tb.examples, pc);
  CorpusIndex corpus(tb.examples);
  PromptedTask task{tb.task, Template::parse(tb.template_pattern, tb.vocab),
                    Verbalizer({tb.vocab.resolve(tb.verbalizer_words[0]), tb.vocab.resolve(tb.verbalizer_words[1])})};
  const auto ref = task_reference(pt.params, task, Backend::kGradient, "head");
  const auto scores = score_corpus(corpus, pt.params, ref);
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  std::vector<double> verbal;
  for (ExampleIndex i = 0; i < corpus.size(); ++i) {
    if (task.verbalizer.contains(corpus[i].masked_token)) verbal.push_back(scores[i]);
  }
  REQUIRE(!verbal.empty());
  std::sort(verbal.begin(), verbal.end());
  CHECK(verbal[verbal.size() / 2] > median);
}
