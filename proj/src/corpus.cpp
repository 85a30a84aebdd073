#include "orca/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

namespace orca {

bool SpecialTokens::is_special(TokenId t) const {
  return t == pad || t == mask || std::find(others.begin(), others.end(), t) != others.end();
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw ConfigError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("vocabulary: token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(const std::string& s) const {
  auto it = index_.find(s);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::resolve(const std::string& s) const {
  if (auto id = find(s)) return *id;
  TokenId value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec == std::errc() && ptr == s.data() + s.size() && value >= 0) {
    if (!tokens_.empty() && static_cast<std::size_t>(value) >= tokens_.size()) {
      throw ConfigError("token id " + s + " outside vocabulary of size " + std::to_string(tokens_.size()));
    }
    return value;
  }
  throw ConfigError("unknown token '" + s + "'");
}

Template::Template(std::vector<Element> pattern) : pattern_(std::move(pattern)) {
  const auto masks = std::count_if(pattern_.begin(), pattern_.end(),
                                   [](const Element& e) { return std::holds_alternative<Mask>(e); });
  if (masks != 1) {
    throw ConfigError("template must contain exactly one [MASK], found " + std::to_string(masks));
  }
}

Template Template::parse(const std::vector<std::string>& pattern, const Vocabulary& vocab) {
  std::vector<Element> elements;
  elements.reserve(pattern.size());
  for (const auto& item : pattern) {
    if (item == "[MASK]") {
      elements.emplace_back(Mask{});
    } else if (item.size() > 2 && item.front() == '<' && item.back() == '>') {
      elements.emplace_back(Slot{item.substr(1, item.size() - 2)});
    } else {
      elements.emplace_back(Literal{vocab.resolve(item)});
    }
  }
  return Template(std::move(elements));
}

std::vector<std::string> Template::slot_names() const {
  std::vector<std::string> names;
  for (const auto& e : pattern_) {
    if (const auto* slot = std::get_if<Slot>(&e)) names.push_back(slot->name);
  }
  return names;
}

Verbalizer::Verbalizer(std::vector<TokenId> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw ConfigError("verbalizer: no classes");
  std::set<TokenId> seen(tokens_.begin(), tokens_.end());
  if (seen.size() != tokens_.size()) throw ConfigError("verbalizer must map labels to distinct tokens");
}

TokenId Verbalizer::token(int label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= tokens_.size()) {
    throw DataError("label " + std::to_string(label) + " outside verbalizer with " +
                    std::to_string(tokens_.size()) + " classes");
  }
  return tokens_[static_cast<std::size_t>(label)];
}

bool Verbalizer::contains(TokenId t) const {
  return std::find(tokens_.begin(), tokens_.end(), t) != tokens_.end();
}

TemplatedInput apply_template(const TaskExample& x, const Template& tpl, std::size_t context_len,
                              const SpecialTokens& special) {
  const auto& pattern = tpl.pattern();
  std::vector<const std::vector<TokenId>*> slot_tokens(pattern.size(), nullptr);
  std::vector<std::size_t> keep(pattern.size(), 0);
  std::size_t fixed = 0;
  std::size_t slot_total = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (const auto* slot = std::get_if<Template::Slot>(&pattern[i])) {
      auto it = x.slots.find(slot->name);
      if (it == x.slots.end()) {
        throw DataError("task example '" + x.id + "' is missing slot '" + slot->name + "'");
      }
      slot_tokens[i] = &it->second;
      keep[i] = it->second.size();
      slot_total += keep[i];
    } else {
      ++fixed;
    }
  }
  if (fixed > context_len) {
    throw ConfigError("template literals need " + std::to_string(fixed) + " positions but context length is " +
                      std::to_string(context_len));
  }
  const std::size_t budget = context_len - fixed;
  while (slot_total > budget) {
    std::size_t longest = pattern.size();
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      if (slot_tokens[i] != nullptr && (longest == pattern.size() || keep[i] > keep[longest])) longest = i;
    }
    --keep[longest];
    --slot_total;
  }

  TemplatedInput out;
  out.context.reserve(context_len);
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const auto& e = pattern[i];
    if (const auto* lit = std::get_if<Template::Literal>(&e)) {
      out.context.push_back(lit->token);
    } else if (std::holds_alternative<Template::Mask>(e)) {
      out.mask_position = static_cast<std::uint32_t>(out.context.size());
      out.context.push_back(special.mask);
    } else {
      out.context.insert(out.context.end(), slot_tokens[i]->begin(), slot_tokens[i]->begin() + keep[i]);
    }
  }
  out.context.resize(context_len, special.pad);
  return out;
}

std::vector<std::uint32_t> sample_mask_positions(const Document& doc, double mask_rate, std::uint64_t seed,
                                                 const SpecialTokens& special) {
  if (!(mask_rate > 0.0 && mask_rate <= 1.0)) {
    throw ConfigError("mask_rate must be in (0, 1], got " + std::to_string(mask_rate));
  }
  if (doc.tokens.empty()) throw DataError("document '" + doc.id + "' is empty");
  std::vector<std::uint32_t> maskable;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    if (!special.is_special(doc.tokens[i])) maskable.push_back(static_cast<std::uint32_t>(i));
  }
  if (maskable.empty()) throw DataError("document '" + doc.id + "': no maskable positions");
  const auto wanted = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(mask_rate * static_cast<double>(doc.tokens.size()))));
  const std::size_t count = std::min(wanted, maskable.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.uniform_index(maskable.size() - i);
    std::swap(maskable[i], maskable[j]);
  }
  maskable.resize(count);
  std::sort(maskable.begin(), maskable.end());
  return maskable;
}

std::string example_id(const std::string& doc_id, std::uint32_t position) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), ":%04u", position);
  return doc_id + buf;
}

std::vector<PretrainExample> expand_masked(const Document& doc, double mask_rate, std::uint64_t seed,
                                           std::size_t context_len, const SpecialTokens& special) {
  if (context_len == 0) throw ConfigError("context length must be positive");
  const auto positions = sample_mask_positions(doc, mask_rate, seed, special);
  const std::size_t n = doc.tokens.size();
  std::vector<PretrainExample> out;
  out.reserve(positions.size());
  for (const auto pos : positions) {
    // Long documents contribute the length-L window centred on the position.
    std::size_t start = 0;
    if (n > context_len) {
      const std::size_t half = context_len / 2;
      start = pos > half ? pos - half : 0;
      start = std::min(start, n - context_len);
    }
    const std::size_t end = std::min(n, start + context_len);
    PretrainExample ex;
    ex.id = example_id(doc.id, pos);
    ex.doc_id = doc.id;
    ex.source = doc.source;
    ex.context.assign(doc.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                      doc.tokens.begin() + static_cast<std::ptrdiff_t>(end));
    ex.context.resize(context_len, special.pad);
    ex.masked_position = static_cast<std::uint32_t>(pos - start);
    ex.masked_token = doc.tokens[pos];
    ex.context[ex.masked_position] = special.mask;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<PretrainExample> expand_corpus(const std::vector<Document>& docs, double mask_rate, std::uint64_t seed,
                                           std::size_t context_len, const SpecialTokens& special) {
  std::vector<PretrainExample> out;
  for (const auto& doc : docs) {
    auto part = expand_masked(doc, mask_rate, mix_seed(seed, hash_string(doc.id)), context_len, special);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

CorpusIndex::CorpusIndex(std::vector<PretrainExample> examples) : examples_(std::move(examples)) {
  by_id_.reserve(examples_.size());
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    auto [it, inserted] = by_id_.emplace(examples_[i].id, static_cast<ExampleIndex>(i));
    if (!inserted) throw DataError("duplicate pretraining example id '" + examples_[i].id + "'");
  }
}

std::optional<ExampleIndex> CorpusIndex::find(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

ExampleIndex CorpusIndex::index_of(const std::string& id) const {
  if (auto i = find(id)) return *i;
  throw DataError("evidence id '" + id + "' not found in corpus");
}

}  // namespace orca
