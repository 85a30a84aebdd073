#include "orca/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

namespace orca {

using nlohmann::ordered_json;

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<ExampleIndex> resolve(const EvidenceSet& evidence, const CorpusIndex& corpus) {
  std::vector<ExampleIndex> out;
  out.reserve(evidence.size());
  for (const auto& e : evidence.entries) out.push_back(corpus.index_of(e.example_id));
  return out;
}

std::map<TokenId, double> unigram_counts(const std::vector<std::vector<TokenId>>& seqs, std::size_t& total) {
  std::map<TokenId, double> counts;
  total = 0;
  for (const auto& s : seqs) {
    for (TokenId t : s) counts[t] += 1.0;
    total += s.size();
  }
  return counts;
}

std::vector<TokenId> task_tokens(const TaskExample& x) {
  std::vector<TokenId> out;
  for (const auto& [name, tokens] : x.slots) out.insert(out.end(), tokens.begin(), tokens.end());
  return out;
}

std::string fixed(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << std::fixed << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string token_name(TokenId t, const Vocabulary* vocab) {
  if (vocab != nullptr && static_cast<std::size_t>(t) < vocab->size()) return vocab->token(t);
  return std::to_string(t);
}

}  // namespace

SourceDistribution source_distribution(const EvidenceSet& evidence, const CorpusIndex& corpus) {
  SourceDistribution d;
  for (const auto& ex : corpus.examples()) {
    ++d.base_counts[ex.source];
    d.counts.try_emplace(ex.source, 0);
  }
  d.corpus_total = corpus.size();
  for (ExampleIndex i : resolve(evidence, corpus)) ++d.counts[corpus[i].source];
  d.total = evidence.size();
  for (const auto& [src, n] : d.counts) d.fractions[src] = ratio(n, d.total);
  for (const auto& [src, n] : d.base_counts) d.base_fractions[src] = ratio(n, d.corpus_total);
  return d;
}

MaskedTokenStats masked_token_stats(const EvidenceSet& evidence, const CorpusIndex& corpus, const Verbalizer& vb,
                                    const std::vector<std::vector<TokenId>>& synonyms) {
  MaskedTokenStats s;
  std::set<TokenId> syn;
  for (const auto& group : synonyms) {
    for (TokenId t : group) {
      if (!vb.contains(t)) syn.insert(t);
    }
  }
  std::map<TokenId, std::size_t> counts;
  std::size_t syn_count = 0;
  for (ExampleIndex i : resolve(evidence, corpus)) {
    const TokenId t = corpus[i].masked_token;
    ++counts[t];
    if (vb.contains(t)) ++s.verbalizer_exact;
    if (syn.count(t) != 0) ++syn_count;
  }
  s.total = evidence.size();
  s.distinct = counts.size();
  for (const auto& [t, n] : counts) s.table.push_back(TokenCount{t, n});
  std::stable_sort(s.table.begin(), s.table.end(),
                   [](const TokenCount& a, const TokenCount& b) { return a.count > b.count; });
  s.verbalizer_exact_fraction = ratio(s.verbalizer_exact, s.total);
  if (!synonyms.empty()) {
    s.synonym_count = syn_count;
    s.synonym_fraction = ratio(syn_count, s.total);
  }
  for (const auto& ex : corpus.examples()) {
    if (vb.contains(ex.masked_token)) ++s.corpus_verbalizer_exact;
  }
  s.corpus_verbalizer_fraction = ratio(s.corpus_verbalizer_exact, corpus.size());
  return s;
}

double jsd_similarity(const std::vector<std::vector<TokenId>>& a, const std::vector<std::vector<TokenId>>& b,
                      double epsilon) {
  std::size_t na = 0;
  std::size_t nb = 0;
  auto ca = unigram_counts(a, na);
  auto cb = unigram_counts(b, nb);
  if (na == 0 || nb == 0) throw DataError("context_divergence: empty token set");
  std::set<TokenId> types;
  for (const auto& [t, n] : ca) types.insert(t);
  for (const auto& [t, n] : cb) types.insert(t);
  const double k = static_cast<double>(types.size());
  const double za = static_cast<double>(na) + epsilon * k;
  const double zb = static_cast<double>(nb) + epsilon * k;
  double jsd = 0.0;
  for (TokenId t : types) {
    const auto ia = ca.find(t);
    const auto ib = cb.find(t);
    const double p = ((ia == ca.end() ? 0.0 : ia->second) + epsilon) / za;
    const double q = ((ib == cb.end() ? 0.0 : ib->second) + epsilon) / zb;
    const double m = 0.5 * (p + q);
    jsd += 0.5 * (p * std::log2(p / m) + q * std::log2(q / m));
  }
  return std::clamp(1.0 - jsd, 0.0, 1.0);
}

std::vector<TokenId> context_window(const PretrainExample& ex, int window, const SpecialTokens& special) {
  if (window < 0) throw ConfigError("context window must be non-negative");
  const auto n = static_cast<std::ptrdiff_t>(ex.context.size());
  const auto pos = static_cast<std::ptrdiff_t>(ex.masked_position);
  std::ptrdiff_t lo = 0;
  std::ptrdiff_t hi = n;
  if (window != kFullWindow) {
    lo = std::max<std::ptrdiff_t>(0, pos - window / 2);
    hi = std::min<std::ptrdiff_t>(n, pos + 1 + (window - window / 2));
  }
  std::vector<TokenId> out;
  for (std::ptrdiff_t i = lo; i < hi; ++i) {
    const TokenId t = ex.context[static_cast<std::size_t>(i)];
    if (i != pos && !special.is_special(t)) out.push_back(t);
  }
  return out;
}

DivergenceReport context_divergence(const EvidenceSet& evidence, const CorpusIndex& corpus,
                                    const std::vector<TaskExample>& task, const std::vector<TaskExample>& task_train,
                                    const DivergenceConfig& cfg, const SpecialTokens& special) {
  if (evidence.empty()) throw DataError("context_divergence: empty evidence set");
  if (task.empty()) throw DataError("context_divergence: empty task data");
  if (cfg.sample_size < 0 || static_cast<std::size_t>(cfg.sample_size) > task.size()) {
    throw ConfigError("context_divergence: sample_size exceeds the task data");
  }
  std::vector<std::size_t> order(task.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t take = cfg.sample_size == 0 ? task.size() : static_cast<std::size_t>(cfg.sample_size);
  Rng rng(cfg.seed);
  for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
  std::vector<std::vector<TokenId>> sample;
  sample.reserve(take);
  for (std::size_t i = 0; i < take; ++i) sample.push_back(task_tokens(task[order[i]]));

  const auto indices = resolve(evidence, corpus);
  DivergenceReport r;
  for (int w : cfg.windows) {
    std::vector<std::vector<TokenId>> contexts;
    contexts.reserve(indices.size());
    for (ExampleIndex i : indices) contexts.push_back(context_window(corpus[i], w, special));
    r.scores.emplace_back(w, jsd_similarity(contexts, sample));
  }
  if (!task_train.empty()) {
    std::vector<std::vector<TokenId>> train;
    train.reserve(task_train.size());
    for (const auto& x : task_train) train.push_back(task_tokens(x));
    r.reference = jsd_similarity(train, sample);
  }
  return r;
}

AnalysisReport analyze_evidence(const EvidenceSet& evidence, const CorpusIndex& corpus, const PromptedTask& task,
                                const std::vector<TaskExample>& task_train,
                                const std::vector<std::vector<TokenId>>& synonyms, const DivergenceConfig& div,
                                const SpecialTokens& special) {
  AnalysisReport r;
  r.method = evidence.method;
  r.seed = evidence.seed;
  r.sources = source_distribution(evidence, corpus);
  r.tokens = masked_token_stats(evidence, corpus, task.verbalizer, synonyms);
  if (!evidence.empty()) r.divergence = context_divergence(evidence, corpus, task.examples, task_train, div, special);
  return r;
}

std::string window_label(int window) { return window == kFullWindow ? "full" : std::to_string(window); }

std::string analysis_to_json(const AnalysisReport& r, const Vocabulary* vocab) {
  ordered_json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["evidence_size"] = r.sources.total;
  ordered_json src;
  for (const auto& [name, n] : r.sources.counts) {
    src[name] = {{"count", n},
                 {"fraction", r.sources.fractions.at(name)},
                 {"base_count", r.sources.base_counts.at(name)},
                 {"base_fraction", r.sources.base_fractions.at(name)}};
  }
  j["sources"] = src;
  ordered_json tok;
  tok["distinct"] = r.tokens.distinct;
  tok["verbalizer_exact"] = r.tokens.verbalizer_exact;
  tok["verbalizer_exact_fraction"] = r.tokens.verbalizer_exact_fraction;
  tok["corpus_verbalizer_exact"] = r.tokens.corpus_verbalizer_exact;
  tok["corpus_verbalizer_fraction"] = r.tokens.corpus_verbalizer_fraction;
  if (r.tokens.synonym_count) {
    tok["synonym_count"] = *r.tokens.synonym_count;
    tok["synonym_fraction"] = *r.tokens.synonym_fraction;
  }
  ordered_json table = ordered_json::array();
  for (const auto& tc : r.tokens.table) {
    table.push_back({{"token", token_name(tc.token, vocab)}, {"id", tc.token}, {"count", tc.count}});
  }
  tok["table"] = table;
  j["masked_tokens"] = tok;
  ordered_json div;
  div["proxy"] = r.divergence.proxy;
  ordered_json scores = ordered_json::object();
  for (const auto& [w, s] : r.divergence.scores) scores[window_label(w)] = s;
  div["scores"] = scores;
  div["reference"] = r.divergence.reference ? ordered_json(*r.divergence.reference) : ordered_json(nullptr);
  j["divergence"] = div;
  return j.dump(2) + "\n";
}

std::string sources_csv(const AnalysisReport& r) {
  std::string out = "source,count,fraction,base_count,base_fraction\n";
  for (const auto& [name, n] : r.sources.counts) {
    out += csv_field(name) + "," + std::to_string(n) + "," + fixed(r.sources.fractions.at(name)) + "," +
           std::to_string(r.sources.base_counts.at(name)) + "," + fixed(r.sources.base_fractions.at(name)) + "\n";
  }
  return out;
}

std::string tokens_csv(const AnalysisReport& r, std::size_t top_n, const Vocabulary* vocab) {
  std::string out = "rank,token,id,count\n";
  for (std::size_t i = 0; i < std::min(top_n, r.tokens.table.size()); ++i) {
    const auto& tc = r.tokens.table[i];
    out += std::to_string(i + 1) + "," + csv_field(token_name(tc.token, vocab)) + "," + std::to_string(tc.token) +
           "," + std::to_string(tc.count) + "\n";
  }
  return out;
}

std::string divergence_csv(const AnalysisReport& r) {
  std::string out = "window,score\n";
  for (const auto& [w, s] : r.divergence.scores) out += window_label(w) + "," + fixed(s) + "\n";
  if (r.divergence.reference) out += "reference," + fixed(*r.divergence.reference) + "\n";
  return out;
}

}  // namespace orca
