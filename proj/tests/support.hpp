#pragma once
// Fixtures and independent oracles shared by the unit tests and the
// acceptance suite.

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "orca/attribution.hpp"
#include "orca/boost.hpp"
#include "orca/model.hpp"

namespace fixture {

using namespace orca;
using big = boost::multiprecision::cpp_bin_float_50;

inline ModelConfig tiny_model(int vocab = 24, int context = 12, int dim = 8, int prompt = 0) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.context_len = context;
  c.dim = dim;
  c.ffn_dim = dim + dim / 2;
  c.heads = 2;
  c.rel_window = 2;
  c.prompt_len = prompt;
  return c;
}

// n random examples; sources alternate A, B; ids "d<i>:<pos>".
inline std::vector<PretrainExample> random_examples(int n, const ModelConfig& mc, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PretrainExample> out;
  const int L = mc.context_len;
  for (int i = 0; i < n; ++i) {
    PretrainExample e;
    e.doc_id = "d" + std::to_string(i);
    e.source = i % 2 == 0 ? "SOURCE_A" : "SOURCE_B";
    const int len = 3 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(L - 3)));
    e.context.assign(static_cast<std::size_t>(L), mc.pad_id);
    for (int p = 0; p < len; ++p) {
      e.context[static_cast<std::size_t>(p)] = 2 + static_cast<TokenId>(rng.uniform_index(static_cast<std::size_t>(mc.vocab_size - 2)));
    }
    e.masked_position = static_cast<std::uint32_t>(rng.uniform_index(static_cast<std::size_t>(len)));
    e.masked_token = e.context[e.masked_position];
    e.context[e.masked_position] = mc.mask_id;
    e.id = example_id(e.doc_id, e.masked_position);
    out.push_back(std::move(e));
  }
  return out;
}

// Template "<x> [MASK]" with verbalizer tokens {2, 3}.
inline PromptedTask random_task(int n, const ModelConfig& mc, std::uint64_t seed) {
  Rng rng(seed);
  PromptedTask t;
  t.tpl = Template({Template::Slot{"x"}, Template::Mask{}});
  t.verbalizer = Verbalizer({2, 3});
  for (int i = 0; i < n; ++i) {
    TaskExample x;
    x.id = "t" + std::to_string(i);
    const int len = 2 + static_cast<int>(rng.uniform_index(4));
    for (int p = 0; p < len; ++p) {
      x.slots["x"].push_back(4 + static_cast<TokenId>(rng.uniform_index(static_cast<std::size_t>(mc.vocab_size - 4))));
    }
    x.label = static_cast<int>(rng.uniform_index(2));
    t.examples.push_back(std::move(x));
  }
  return t;
}

// ---------------------------------------------------------------- oracles

// Cosine in 50-digit arithmetic; nullopt when either vector is zero.
inline std::optional<big> cosine_oracle(std::span<const double> a, std::span<const double> b) {
  big dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += big(a[i]) * big(b[i]);
    na += big(a[i]) * big(a[i]);
    nb += big(b[i]) * big(b[i]);
  }
  if (na == 0 || nb == 0) return std::nullopt;
  return dot / (sqrt(na) * sqrt(nb));
}

// Per-example filtered gradients computed one term at a time.
inline std::vector<std::vector<double>> example_gradients(const ModelParams& p, const CorpusIndex& corpus,
                                                          const std::string& filter) {
  const auto f = GradientFilter::by_id(filter);
  std::vector<std::vector<double>> out;
  for (const auto& ex : corpus.examples()) {
    const LossTerm t = lm_term(ex);
    out.push_back(gradient(p, std::span(&t, 1), f).values);
  }
  return out;
}

inline std::vector<double> task_gradient(const ModelParams& p, const PromptedTask& task, const std::string& filter) {
  std::vector<LossTerm> terms;
  for (const auto& x : task.examples) terms.push_back(task_term(x, task.tpl, task.verbalizer, p.config()));
  return gradient(p, terms, GradientFilter::by_id(filter)).values;
}

// Exhaustive ranking: every example sorted by (oracle cosine desc, index asc);
// zero vectors are dropped.
inline std::vector<ExampleIndex> exhaustive_ranking(const std::vector<std::vector<double>>& vecs,
                                                    std::span<const double> ref) {
  std::vector<std::pair<big, ExampleIndex>> scored;
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    if (auto c = cosine_oracle(vecs[i], ref)) scored.emplace_back(*c, static_cast<ExampleIndex>(i));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  std::vector<ExampleIndex> out;
  for (const auto& s : scored) out.push_back(s.second);
  return out;
}

// Scripted ORCA recurrence (max lag, gradient backend), written out
// iteration by iteration from the definition rather than through orca_select.
inline std::vector<ExampleIndex> scripted_orca(const CorpusIndex& corpus, const PromptedTask& task,
                                               const ModelParams& theta0, int m, int per_iter,
                                               const std::string& filter, const BoostConfig& boost) {
  const auto grads = example_gradients(theta0, corpus, filter);
  std::vector<ExampleIndex> chosen;
  std::map<ExampleIndex, int> mult;
  ModelParams theta = theta0;
  for (int it = 0; it < m; ++it) {
    const auto ref = task_gradient(theta, task, filter);
    int taken = 0;
    for (ExampleIndex i : exhaustive_ranking(grads, ref)) {
      if (taken == per_iter) break;
      if (mult[i] >= m) continue;
      ++mult[i];
      chosen.push_back(i);
      ++taken;
    }
    theta = boost_model(theta0, chosen, corpus, boost).params;
  }
  return chosen;
}

// 1 - JSD_2 over epsilon-smoothed unigram distributions, in 50 digits.
inline big jsd_similarity_oracle(const std::vector<std::vector<TokenId>>& a,
                                 const std::vector<std::vector<TokenId>>& b, double eps) {
  std::map<TokenId, big> ca, cb;
  big na = 0, nb = 0;
  for (const auto& s : a) {
    for (TokenId t : s) {
      ca[t] += 1;
      cb[t] += 0;
      na += 1;
    }
  }
  for (const auto& s : b) {
    for (TokenId t : s) {
      cb[t] += 1;
      ca[t] += 0;
      nb += 1;
    }
  }
  const big e(eps);
  const big k = static_cast<int>(ca.size());
  big jsd = 0;
  const big ln2 = log(big(2));
  for (const auto& [t, c] : ca) {
    const big p = (c + e) / (na + e * k);
    const big q = (cb[t] + e) / (nb + e * k);
    const big mid = (p + q) / 2;
    jsd += (p * log(p / mid) + q * log(q / mid)) / (2 * ln2);
  }
  return 1 - jsd;
}

// Central finite differences of the mean loss over `terms` against the
// analytic gradient at `coords`; returns the largest relative error
// |a - n| / max(|a|, |n|, 1e-6).
inline double fd_max_rel_error(const ModelParams& params, std::span<const LossTerm> terms,
                               const std::vector<std::size_t>& coords, double h = 1e-5) {
  const auto analytic = full_gradient(params, terms);
  ModelParams p = params;
  Workspace ws;
  auto mean_loss = [&](const ModelParams& q) {
    MaskedLm lm(q);
    double s = 0.0;
    for (const auto& t : terms) s += lm.loss(t, ws);
    return s / static_cast<double>(terms.size());
  };
  double worst = 0.0;
  for (std::size_t c : coords) {
    const double orig = p.flat()[c];
    p.flat()[c] = orig + h;
    const double up = mean_loss(p);
    p.flat()[c] = orig - h;
    const double down = mean_loss(p);
    p.flat()[c] = orig;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[c] - numeric) / denom);
  }
  return worst;
}


struct SegmentCheck {
  Segment segment{};
  std::size_t checks = 0;
  double worst = 0.0;
};

// Checks at least `min_checks` (batch, coordinate) pairs in every non-empty
// segment. Large segments take distinct coordinates on the first batch;
// segments smaller than `min_checks` are swept completely on successive
// batches until the count is reached.
inline std::vector<SegmentCheck> fd_sweep(const ModelParams& params,
                                          const std::vector<std::vector<LossTerm>>& batches,
                                          std::size_t min_checks, std::uint64_t seed) {
  std::vector<SegmentCheck> out;
  Rng rng(seed);
  for (int s = 0; s < kNumSegments; ++s) {
    const auto seg = static_cast<Segment>(s);
    const auto& span = params.layout()[seg];
    if (span.size == 0) continue;
    SegmentCheck c{seg, 0, 0.0};
    for (std::size_t b = 0; c.checks < min_checks; ++b) {
      if (b == batches.size()) throw std::runtime_error("fd_sweep: not enough batches");
      std::vector<std::size_t> idx(span.size);
      for (std::size_t i = 0; i < span.size; ++i) idx[i] = span.offset + i;
      const std::size_t take = std::min(span.size, min_checks - c.checks);
      for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.uniform_index(idx.size() - i)]);
      idx.resize(take);
      c.worst = std::max(c.worst, fd_max_rel_error(params, batches[b], idx));
      c.checks += take;
    }
    out.push_back(c);
  }
  return out;
}

// A <=50k-parameter model with every segment live, and term batches that
// mix pretraining terms with prompted task terms.
struct FdSetup {
  ModelParams params;
  std::vector<std::vector<LossTerm>> batches;
};

inline FdSetup fd_setup(std::uint64_t seed) {
  ModelConfig mc;
  mc.vocab_size = 40;
  mc.context_len = 16;
  mc.dim = 32;
  mc.ffn_dim = 48;
  mc.heads = 4;
  mc.rel_window = 3;
  mc.prompt_len = 3;
  FdSetup s{ModelParams::random(mc, seed, 0.3), {}};
  // Non-zero biases and norm parameters so no segment sits at a special point.
  Rng rng(mix_seed(seed, 7));
  for (Segment seg : {Segment::kQueryBias, Segment::kRelativeBias, Segment::kValueBias, Segment::kAttnOutBias,
                      Segment::kFfnInBias, Segment::kFfnOutBias, Segment::kNormBias, Segment::kOutputBias}) {
    for (double& v : s.params.segment(seg)) v = 0.3 * rng.normal();
  }
  for (double& v : s.params.segment(Segment::kNormGain)) v = 1.0 + 0.3 * rng.normal();
  const auto examples = random_examples(64, mc, mix_seed(seed, 8));
  const auto task = random_task(32, mc, mix_seed(seed, 9));
  for (std::size_t b = 0; b < 32; ++b) {
    std::vector<LossTerm> batch{lm_term(examples[2 * b]), lm_term(examples[2 * b + 1]),
                                task_term(task.examples[b], task.tpl, task.verbalizer, mc)};
    s.batches.push_back(std::move(batch));
  }
  return s;
}

}  // namespace fixture
