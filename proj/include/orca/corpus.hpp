#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "orca/common.hpp"

namespace orca {

// Reserved ids shared by the corpus and the model.
struct SpecialTokens {
  TokenId pad = 0;
  TokenId mask = 1;
  std::vector<TokenId> others;  // e.g. [UNK]; never masked

  bool is_special(TokenId t) const;
};

// Token strings indexed by id. Optional: corpora may be pure id streams.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(const std::string& s) const;
  // Accepts a vocabulary string or a decimal id.
  TokenId resolve(const std::string& s) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Document {
  std::string id;
  std::string source;
  std::vector<TokenId> tokens;

  bool operator==(const Document&) const = default;
};

// One masked position of a document, treated as its own example.
struct PretrainExample {
  std::string id;
  std::string doc_id;
  std::string source;
  std::vector<TokenId> context;  // length L, context[masked_position] == mask
  std::uint32_t masked_position = 0;
  TokenId masked_token = 0;

  bool operator==(const PretrainExample&) const = default;
};

struct TaskExample {
  std::string id;
  std::map<std::string, std::vector<TokenId>> slots;
  int label = 0;

  bool operator==(const TaskExample&) const = default;
};

class Template {
 public:
  struct Literal {
    TokenId token;
  };
  struct Slot {
    std::string name;
  };
  struct Mask {};
  using Element = std::variant<Literal, Slot, Mask>;

  Template() = default;
  // Throws ConfigError unless exactly one Mask element is present.
  explicit Template(std::vector<Element> pattern);
  // "[MASK]" is the mask, "<name>" a slot, anything else a literal token.
  static Template parse(const std::vector<std::string>& pattern, const Vocabulary& vocab);

  const std::vector<Element>& pattern() const { return pattern_; }
  std::vector<std::string> slot_names() const;

 private:
  std::vector<Element> pattern_;
};

class Verbalizer {
 public:
  Verbalizer() = default;
  // tokens[label] is the word predicted for that label; must be injective.
  explicit Verbalizer(std::vector<TokenId> tokens);

  std::size_t num_classes() const { return tokens_.size(); }
  TokenId token(int label) const;
  const std::vector<TokenId>& tokens() const { return tokens_; }
  bool contains(TokenId t) const;

 private:
  std::vector<TokenId> tokens_;
};

// Labeled task data with the prompt machinery that maps it into the LM.
struct PromptedTask {
  std::vector<TaskExample> examples;
  Template tpl;
  Verbalizer verbalizer;
};

struct TemplatedInput {
  std::vector<TokenId> context;  // length L
  std::uint32_t mask_position = 0;
};

// Renders x into a length-L sequence. When the slots do not fit, tokens are
// removed from the end of the currently longest slot (first slot on ties).
TemplatedInput apply_template(const TaskExample& x, const Template& tpl, std::size_t context_len,
                              const SpecialTokens& special = {});

// Picks max(1, floor(mask_rate * |tokens|)) distinct maskable positions
// (capped at the number available) with a seeded partial Fisher-Yates over
// the maskable positions in ascending order. Results are sorted by position.
std::vector<std::uint32_t> sample_mask_positions(const Document& doc, double mask_rate, std::uint64_t seed,
                                                 const SpecialTokens& special = {});

std::vector<PretrainExample> expand_masked(const Document& doc, double mask_rate, std::uint64_t seed,
                                           std::size_t context_len, const SpecialTokens& special = {});

// Per-document seeds are mix_seed(seed, hash_string(doc.id)).
std::vector<PretrainExample> expand_corpus(const std::vector<Document>& docs, double mask_rate, std::uint64_t seed,
                                           std::size_t context_len, const SpecialTokens& special = {});

std::string example_id(const std::string& doc_id, std::uint32_t position);

// Expanded corpus with id lookup.
class CorpusIndex {
 public:
  CorpusIndex() = default;
  explicit CorpusIndex(std::vector<PretrainExample> examples);

  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const PretrainExample& operator[](ExampleIndex i) const { return examples_[i]; }
  const std::vector<PretrainExample>& examples() const { return examples_; }
  // Throws DataError naming the id when it is not in the corpus.
  ExampleIndex index_of(const std::string& id) const;
  std::optional<ExampleIndex> find(const std::string& id) const;

 private:
  std::vector<PretrainExample> examples_;
  std::unordered_map<std::string, ExampleIndex> by_id_;
};

}  // namespace orca
