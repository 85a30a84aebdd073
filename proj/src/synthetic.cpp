#include "orca/synthetic.hpp"

#include <algorithm>
#include <cstdio>

namespace orca {

namespace {

struct ClassWords {
  std::string verbalizer;
  std::vector<std::string> synonyms;
};

std::vector<ClassWords> class_words(TaskKind kind) {
  if (kind == TaskKind::kSentiment) {
    return {{"good", {"great", "excellent", "fine", "nice", "wonderful"}},
            {"bad", {"terrible", "awful", "poor", "horrible", "worse"}}};
  }
  return {{"yes", {"yeah", "sure", "right", "indeed", "true"}},
          {"no", {"nope", "never", "not", "wrong", "false"}},
          {"maybe", {"perhaps", "possibly", "probably", "might", "unsure"}}};
}

std::string numbered(const char* prefix, int k, int width = 3) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, k);
  return buf;
}

struct Lexicon {
  std::vector<std::string> tokens;
  std::vector<TokenId> verbalizer;             // per class
  std::vector<std::vector<TokenId>> synonyms;  // per class
  std::vector<std::vector<TokenId>> cues;      // per class
  std::vector<TokenId> filler_a, filler_b, filler_shared;
  TokenId period = 0;
  TokenId it = 0, was = 0;

  TokenId add(const std::string& s) {
    tokens.push_back(s);
    return static_cast<TokenId>(tokens.size() - 1);
  }
};

Lexicon build_lexicon(const SyntheticConfig& cfg) {
  Lexicon lx;
  lx.add("[PAD]");
  lx.add("[MASK]");
  lx.add("[UNK]");
  lx.it = lx.add("it");
  lx.was = lx.add("was");
  lx.period = lx.add(".");
  lx.add(",");
  const auto words = class_words(cfg.task_kind);
  const int classes = static_cast<int>(words.size());
  lx.synonyms.resize(words.size());
  lx.cues.resize(words.size());
  for (const auto& w : words) lx.verbalizer.push_back(lx.add(w.verbalizer));
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < cfg.synonyms_per_class; ++k) {
      const auto& pool = words[static_cast<std::size_t>(c)].synonyms;
      const std::string name = k < static_cast<int>(pool.size())
                                   ? pool[static_cast<std::size_t>(k)]
                                   : numbered(("syn" + std::to_string(c) + "_").c_str(), k);
      lx.synonyms[static_cast<std::size_t>(c)].push_back(lx.add(name));
    }
  }
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < cfg.cue_words_per_class; ++k) {
      lx.cues[static_cast<std::size_t>(c)].push_back(lx.add(numbered(("cue" + std::to_string(c) + "_").c_str(), k)));
    }
  }
  const int reserved = static_cast<int>(lx.tokens.size());
  const int fillers = cfg.vocab_size - reserved;
  if (fillers < 10) {
    throw ConfigError("synthetic: vocab_size " + std::to_string(cfg.vocab_size) + " leaves " +
                      std::to_string(fillers) + " filler words; need at least 10 beyond " +
                      std::to_string(reserved) + " reserved tokens");
  }
  const int shared = fillers / 5;
  const int per_source = (fillers - shared) / 2;
  for (int k = 0; k < per_source; ++k) lx.filler_a.push_back(lx.add(numbered("wa", k)));
  for (int k = 0; k < per_source; ++k) lx.filler_b.push_back(lx.add(numbered("bk", k)));
  for (int k = 0; lx.tokens.size() < static_cast<std::size_t>(cfg.vocab_size); ++k) {
    lx.filler_shared.push_back(lx.add(numbered("sh", k)));
  }
  return lx;
}

TokenId pick(Rng& rng, const std::vector<TokenId>& pool) { return pool[rng.uniform_index(pool.size())]; }

TokenId filler(Rng& rng, const Lexicon& lx, bool source_b) {
  const auto& own = source_b ? lx.filler_b : lx.filler_a;
  if (rng.bernoulli(0.25)) return pick(rng, lx.filler_shared);
  return pick(rng, own);
}

TokenId cue(Rng& rng, const Lexicon& lx, int cls, double noise) {
  const int classes = static_cast<int>(lx.cues.size());
  if (rng.bernoulli(noise)) {
    const int other = (cls + 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(classes - 1)))) % classes;
    return pick(rng, lx.cues[static_cast<std::size_t>(other)]);
  }
  return pick(rng, lx.cues[static_cast<std::size_t>(cls)]);
}

void relevant_sentence(Rng& rng, const Lexicon& lx, const SyntheticConfig& cfg, bool source_b, int cls,
                       std::vector<TokenId>& out) {
  std::vector<TokenId> s;
  const std::size_t cues = 2 + rng.uniform_index(2);
  for (std::size_t i = 0; i < cues; ++i) s.push_back(cue(rng, lx, cls, cfg.cue_noise));
  const std::size_t fill = 1 + rng.uniform_index(3);
  for (std::size_t i = 0; i < fill; ++i) s.push_back(filler(rng, lx, source_b));
  rng.shuffle(s);
  if (rng.bernoulli(cfg.polarity_word_rate)) {
    const TokenId verbalizer = lx.verbalizer[static_cast<std::size_t>(cls)];
    const auto& syn = lx.synonyms[static_cast<std::size_t>(cls)];
    if (rng.bernoulli(cfg.frame_rate)) {
      const TokenId framed =
          rng.bernoulli(cfg.frame_noise) ? lx.verbalizer[rng.uniform_index(lx.verbalizer.size())] : verbalizer;
      out.insert(out.end(), {lx.it, lx.was, framed, lx.period});
    } else {
      const TokenId word = (syn.empty() || rng.bernoulli(0.5)) ? verbalizer : pick(rng, syn);
      s.insert(s.begin() + static_cast<std::ptrdiff_t>(rng.uniform_index(s.size() + 1)), word);
    }
  }
  s.push_back(lx.period);
  out.insert(out.end(), s.begin(), s.end());
}

void filler_sentence(Rng& rng, const Lexicon& lx, const SyntheticConfig& cfg, bool source_b,
                     std::vector<TokenId>& out) {
  const std::size_t len = 4 + rng.uniform_index(5);
  for (std::size_t i = 0; i < len; ++i) {
    if (rng.bernoulli(cfg.stray_cue_rate)) {
      out.push_back(pick(rng, lx.cues[rng.uniform_index(lx.cues.size())]));
    } else {
      out.push_back(filler(rng, lx, source_b));
    }
  }
  out.push_back(lx.period);
}

std::vector<TokenId> task_text(Rng& rng, const Lexicon& lx, const SyntheticConfig& cfg, int cls, double cue_rate) {
  const std::size_t span = static_cast<std::size_t>(cfg.input_len_max - cfg.input_len_min + 1);
  const std::size_t len = static_cast<std::size_t>(cfg.input_len_min) + rng.uniform_index(span);
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < len; ++i) {
    if (rng.bernoulli(cue_rate)) {
      out.push_back(cue(rng, lx, cls, cfg.input_noise));
    } else {
      out.push_back(rng.bernoulli(0.5) ? pick(rng, lx.filler_shared) : filler(rng, lx, rng.bernoulli(0.5)));
    }
  }
  return out;
}

std::vector<TaskExample> make_tasks(Rng& rng, const Lexicon& lx, const SyntheticConfig& cfg, int count,
                                    const std::string& prefix) {
  const int classes = static_cast<int>(lx.verbalizer.size());
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
  rng.shuffle(labels);
  std::vector<TaskExample> out;
  out.reserve(labels.size());
  for (int i = 0; i < count; ++i) {
    TaskExample t;
    t.id = numbered(prefix.c_str(), i, 5);
    t.label = labels[static_cast<std::size_t>(i)];
    if (cfg.task_kind == TaskKind::kSentiment) {
      t.slots["review"] = task_text(rng, lx, cfg, t.label, cfg.input_cue_rate);
    } else {
      // The premise is label-neutral filler; the hypothesis carries the cues.
      t.slots["premise"] = task_text(rng, lx, cfg, t.label, 0.0);
      t.slots["hypothesis"] = task_text(rng, lx, cfg, t.label, cfg.input_cue_rate);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::string to_string(TaskKind k) { return k == TaskKind::kSentiment ? "sentiment" : "entailment"; }

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "sentiment") return TaskKind::kSentiment;
  if (s == "entailment") return TaskKind::kEntailment;
  throw ConfigError("unknown task kind '" + s + "' (expected sentiment or entailment)");
}

void SyntheticConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("synthetic: vocab_size must be positive");
  if (docs_a < 0 || docs_b < 0 || docs_a + docs_b == 0) throw ConfigError("synthetic: need at least one document");
  if (context_len <= 0) throw ConfigError("synthetic: context_len must be positive");
  if (doc_len_min < 1 || doc_len_max < doc_len_min) throw ConfigError("synthetic: bad document length range");
  if (doc_len_max > context_len) throw ConfigError("synthetic: doc_len_max exceeds context_len");
  if (relevant_rate_a < 0 || relevant_rate_a > 1 || relevant_rate_b < 0 || relevant_rate_b > 1) {
    throw ConfigError("synthetic: relevant rates must lie in [0, 1]");
  }
  if (frame_rate < 0 || frame_rate > 1 || frame_noise < 0 || frame_noise > 1) {
    throw ConfigError("synthetic: frame_rate and frame_noise must lie in [0, 1]");
  }
  if (polarity_word_rate < 0 || polarity_word_rate > 1) throw ConfigError("synthetic: polarity_word_rate must lie in [0, 1]");
  if (cue_words_per_class < 1 || synonyms_per_class < 0) throw ConfigError("synthetic: bad cue/synonym counts");
  if (task_examples < 1 || task_train_examples < 0) throw ConfigError("synthetic: need task examples");
  if (input_len_min < 1 || input_len_max < input_len_min) throw ConfigError("synthetic: bad task input length range");
  if (!(mask_rate > 0 && mask_rate <= 1)) throw ConfigError("synthetic: mask_rate must be in (0, 1]");
}

SyntheticTestbed generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Lexicon lx = build_lexicon(cfg);
  SyntheticTestbed tb;
  tb.vocab = Vocabulary(lx.tokens);
  tb.special = SpecialTokens{0, 1, {2}};

  Rng doc_rng(mix_seed(seed, 1));
  const auto make_docs = [&](int count, bool source_b) {
    const double rate = source_b ? cfg.relevant_rate_b : cfg.relevant_rate_a;
    for (int i = 0; i < count; ++i) {
      Document d;
      d.id = numbered(source_b ? "b" : "a", i, 6);
      d.source = source_b ? kSourceB : kSourceA;
      const std::size_t span = static_cast<std::size_t>(cfg.doc_len_max - cfg.doc_len_min + 1);
      const std::size_t len = static_cast<std::size_t>(cfg.doc_len_min) + doc_rng.uniform_index(span);
      // One polarity per document, like a review.
      const int cls = static_cast<int>(doc_rng.uniform_index(lx.verbalizer.size()));
      while (d.tokens.size() < len) {
        if (doc_rng.bernoulli(rate)) {
          relevant_sentence(doc_rng, lx, cfg, source_b, cls, d.tokens);
        } else {
          filler_sentence(doc_rng, lx, cfg, source_b, d.tokens);
        }
      }
      d.tokens.resize(len);
      tb.documents.push_back(std::move(d));
    }
  };
  make_docs(cfg.docs_a, false);
  make_docs(cfg.docs_b, true);

  tb.examples = expand_corpus(tb.documents, cfg.mask_rate, mix_seed(seed, 3),
                              static_cast<std::size_t>(cfg.context_len), tb.special);

  std::set<TokenId> relevant(lx.verbalizer.begin(), lx.verbalizer.end());
  for (const auto& syn : lx.synonyms) relevant.insert(syn.begin(), syn.end());
  for (const auto& ex : tb.examples) {
    if (relevant.count(ex.masked_token) != 0) tb.planted_ids.insert(ex.id);
  }

  Rng task_rng(mix_seed(seed, 2));
  tb.task = make_tasks(task_rng, lx, cfg, cfg.task_examples, "t");
  tb.task_train = make_tasks(task_rng, lx, cfg, cfg.task_train_examples, "r");

  if (cfg.task_kind == TaskKind::kSentiment) {
    tb.template_pattern = {"it", "was", "[MASK]", ".", "<review>"};
  } else {
    tb.template_pattern = {"<premise>", "[MASK]", ",", "<hypothesis>"};
  }
  for (std::size_t c = 0; c < lx.verbalizer.size(); ++c) {
    tb.verbalizer_words.push_back(lx.tokens[static_cast<std::size_t>(lx.verbalizer[c])]);
    std::vector<std::string> syn;
    for (TokenId t : lx.synonyms[c]) syn.push_back(lx.tokens[static_cast<std::size_t>(t)]);
    tb.synonyms.push_back(std::move(syn));
  }
  return tb;
}

}  // namespace orca
