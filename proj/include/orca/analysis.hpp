#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "orca/corpus.hpp"
#include "orca/evidence.hpp"

namespace orca {

struct SourceDistribution {
  std::map<std::string, std::size_t> counts;  // multiset-weighted over S
  std::map<std::string, std::size_t> base_counts;  // every example of the corpus
  std::map<std::string, double> fractions;
  std::map<std::string, double> base_fractions;
  std::size_t total = 0;
  std::size_t corpus_total = 0;
};

// Every source present in the corpus appears in both maps, possibly with 0.
SourceDistribution source_distribution(const EvidenceSet& evidence, const CorpusIndex& corpus);

struct TokenCount {
  TokenId token = 0;
  std::size_t count = 0;

  bool operator==(const TokenCount&) const = default;
};

struct MaskedTokenStats {
  std::vector<TokenCount> table;  // count desc, token id asc
  std::size_t total = 0;
  std::size_t distinct = 0;
  std::size_t verbalizer_exact = 0;
  double verbalizer_exact_fraction = 0.0;
  // Only set when synonym sets were given; synonyms exclude the verbalizer itself.
  std::optional<std::size_t> synonym_count;
  std::optional<double> synonym_fraction;
  // Share of all corpus examples whose masked token is a verbalizer token.
  std::size_t corpus_verbalizer_exact = 0;
  double corpus_verbalizer_fraction = 0.0;
};

MaskedTokenStats masked_token_stats(const EvidenceSet& evidence, const CorpusIndex& corpus, const Verbalizer& vb,
                                    const std::vector<std::vector<TokenId>>& synonyms = {});

inline constexpr double kDivergenceEpsilon = 1e-9;
inline const std::string kDivergenceProxy = "jsd_unigram";
// Window value meaning "the whole context".
inline constexpr int kFullWindow = 0;

// 1 - JSD (base 2) between the epsilon-smoothed unigram distributions of
// two token multisets, over the union of their types. 1 for identical
// distributions, near 0 for disjoint vocabularies. Throws DataError when
// either side is empty.
double jsd_similarity(const std::vector<std::vector<TokenId>>& a, const std::vector<std::vector<TokenId>>& b,
                      double epsilon = kDivergenceEpsilon);

// The c tokens around the masked position (floor(c/2) before, the rest
// after), skipping the mask and special tokens. kFullWindow keeps all.
std::vector<TokenId> context_window(const PretrainExample& ex, int window, const SpecialTokens& special);

struct DivergenceConfig {
  std::vector<int> windows{8, 16, 32, kFullWindow};
  int sample_size = 0;  // task inputs sampled; 0 = all
  std::uint64_t seed = 0;
};

struct DivergenceReport {
  std::string proxy = kDivergenceProxy;
  std::vector<std::pair<int, double>> scores;  // in window order
  std::optional<double> reference;              // task train vs. task sample
};

// Compares truncated evidence contexts with a sample of task inputs (all
// slots concatenated). When `task_train` is non-empty, also scores it
// against the same task sample.
DivergenceReport context_divergence(const EvidenceSet& evidence, const CorpusIndex& corpus,
                                    const std::vector<TaskExample>& task, const std::vector<TaskExample>& task_train,
                                    const DivergenceConfig& cfg, const SpecialTokens& special = {});

struct AnalysisReport {
  std::string method;
  std::uint64_t seed = 0;
  SourceDistribution sources;
  MaskedTokenStats tokens;
  DivergenceReport divergence;
};

AnalysisReport analyze_evidence(const EvidenceSet& evidence, const CorpusIndex& corpus, const PromptedTask& task,
                                const std::vector<TaskExample>& task_train,
                                const std::vector<std::vector<TokenId>>& synonyms, const DivergenceConfig& div,
                                const SpecialTokens& special = {});

// JSON with token strings when a vocabulary is given. Deterministic bytes.
std::string analysis_to_json(const AnalysisReport& r, const Vocabulary* vocab = nullptr);
std::string sources_csv(const AnalysisReport& r);
std::string tokens_csv(const AnalysisReport& r, std::size_t top_n, const Vocabulary* vocab = nullptr);
std::string divergence_csv(const AnalysisReport& r);

std::string window_label(int window);

}  // namespace orca
