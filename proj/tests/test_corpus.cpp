#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "orca/io.hpp"
#include "orca/synthetic.hpp"

using namespace orca;
namespace fs = std::filesystem;

namespace {

Document numbered_doc(const std::string& id, int n, TokenId first = 2) {
  Document d{id, "SOURCE_A", {}};
  for (int i = 0; i < n; ++i) d.tokens.push_back(first + i);
  return d;
}

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "orca_corpus_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("expand_masked produces floor(rate * n) examples, at least one") {
  const auto ex = expand_masked(numbered_doc("doc", 100), 0.15, 3, 128);
  CHECK(ex.size() == 15);
  std::set<std::uint32_t> positions;
  for (const auto& e : ex) {
    CHECK(e.doc_id == "doc");
    positions.insert(e.masked_position);
    CHECK(std::count(e.context.begin(), e.context.end(), 1) == 1);
    CHECK(e.context[e.masked_position] == 1);
    CHECK(e.masked_token == static_cast<TokenId>(2 + e.masked_position));
  }
  CHECK(positions.size() == 15);
  CHECK(expand_masked(numbered_doc("one", 1), 0.15, 3, 8).size() == 1);
}

TEST_CASE("mask positions replay an independent seeded partial Fisher-Yates") {
  const auto doc = numbered_doc("ten", 10);
  const auto got = sample_mask_positions(doc, 0.3, 7);

  // Oracle: mt19937_64 seeded through splitmix64, rejection-sampled bounded draws.
  std::uint64_t x = 7 + 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  std::mt19937_64 eng(x ^ (x >> 31));
  auto bounded = [&](std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do v = eng();
    while (v >= limit);
    return v % n;
  };
  std::vector<std::uint32_t> pos{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (std::size_t i = 0; i < 3; ++i) std::swap(pos[i], pos[i + bounded(10 - i)]);
  pos.resize(3);
  std::sort(pos.begin(), pos.end());
  CHECK(got == pos);
}

TEST_CASE("expand_masked rejects documents without maskable tokens") {
  Document d{"pads", "A", {0, 1, 0}};
  CHECK_THROWS_WITH_AS(expand_masked(d, 0.5, 1, 8), doctest::Contains("no maskable positions"), DataError);
  CHECK_THROWS_AS(expand_masked(numbered_doc("x", 4), 0.0, 1, 8), ConfigError);
}

TEST_CASE("long documents use a window that keeps the masked token") {
  const auto ex = expand_masked(numbered_doc("long", 40), 1.0, 5, 16);
  REQUIRE(ex.size() == 40);
  for (const auto& e : ex) {
    CHECK(e.context.size() == 16);
    CHECK(e.context[e.masked_position] == 1);
  }
}

TEST_CASE("apply_template renders literals, slot and mask") {
  Vocabulary vocab({"[PAD]", "[MASK]", "it", "was", ".", "great", "movie"});
  const auto tpl = Template::parse({"it", "was", "[MASK]", ".", "<review>"}, vocab);
  TaskExample x{"r", {{"review", {5, 6}}}, 0};
  const auto r = apply_template(x, tpl, 10);
  CHECK(r.mask_position == 2);
  CHECK(std::vector<TokenId>(r.context.begin(), r.context.begin() + 6) == std::vector<TokenId>{2, 3, 1, 4, 5, 6});
  CHECK(r.context.size() == 10);
  CHECK(r.context[6] == 0);

  TaskExample empty{"e", {{"review", {}}}, 0};
  const auto e = apply_template(empty, tpl, 10);
  CHECK(e.mask_position == 2);
  CHECK(std::count(e.context.begin(), e.context.end(), 1) == 1);

  TaskExample longx{"l", {{"review", std::vector<TokenId>(30, 5)}}, 0};
  const auto l = apply_template(longx, tpl, 10);
  CHECK(l.context.size() == 10);
  CHECK(l.context[l.mask_position] == 1);
  CHECK(std::count(l.context.begin(), l.context.end(), 5) == 6);

  TaskExample missing{"m", {{"other", {5}}}, 0};
  CHECK_THROWS_WITH_AS(apply_template(missing, tpl, 10), doctest::Contains("review"), DataError);
}

TEST_CASE("overflow trims the longest slot from its end") {
  const Template tpl({Template::Slot{"a"}, Template::Mask{}, Template::Slot{"b"}});
  TaskExample x{"x", {{"a", {2, 3, 4, 5, 6}}, {"b", {7, 8}}}, 0};
  const auto r = apply_template(x, tpl, 6);
  CHECK(r.context == std::vector<TokenId>{2, 3, 4, 1, 7, 8});
}

TEST_CASE("template needs exactly one mask; verbalizer must be injective") {
  CHECK_THROWS_AS(Template({Template::Slot{"a"}}), ConfigError);
  CHECK_THROWS_AS(Template({Template::Mask{}, Template::Mask{}}), ConfigError);
  CHECK_THROWS_AS(Verbalizer({3, 3}), ConfigError);
}

TEST_CASE("synthetic generator plants relevant tokens only in SOURCE_B") {
  SyntheticConfig cfg;
  cfg.docs_a = 200;
  cfg.docs_b = 200;
  cfg.relevant_rate_a = 0.0;
  cfg.relevant_rate_b = 0.2;
  const auto tb = generate_synthetic(cfg, 4);
  REQUIRE(!tb.planted_ids.empty());
  std::set<TokenId> relevant;
  for (const auto& w : tb.verbalizer_words) relevant.insert(tb.vocab.resolve(w));
  for (const auto& g : tb.synonyms) {
    for (const auto& w : g) relevant.insert(tb.vocab.resolve(w));
  }
  std::size_t b_total = 0, b_planted = 0;
  std::set<std::string> counted;
  for (const auto& e : tb.examples) {
    const bool planted = tb.planted_ids.count(e.id) != 0;
    if (planted) CHECK(e.source == kSourceB);
    CHECK(planted == (relevant.count(e.masked_token) != 0));
    if (e.source == kSourceB) {
      ++b_total;
      b_planted += planted ? 1 : 0;
    }
    if (relevant.count(e.masked_token) != 0) counted.insert(e.id);
  }
  CHECK(counted == tb.planted_ids);

  // Round trip through JSONL and recount.
  const auto path = temp_path("synthetic_examples.jsonl");
  io::save_examples(path, tb.examples);
  std::size_t recount_b = 0, recount_planted = 0;
  for (const auto& e : io::load_examples(path)) {
    if (e.source != kSourceB) continue;
    ++recount_b;
    recount_planted += relevant.count(e.masked_token);
  }
  const double direct = static_cast<double>(recount_planted) / static_cast<double>(recount_b);
  const double reported = static_cast<double>(b_planted) / static_cast<double>(b_total);
  CHECK(std::abs(reported - direct) <= 0.2 * direct);

  CHECK(generate_synthetic(cfg, 4).planted_ids == tb.planted_ids);
  CHECK(generate_synthetic(cfg, 5).planted_ids != tb.planted_ids);
}

TEST_CASE("synthetic config errors") {
  SyntheticConfig cfg;
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg, 1), ConfigError);
  cfg = SyntheticConfig{};
  cfg.docs_a = 0;
  cfg.docs_b = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg, 1), ConfigError);
}

TEST_CASE("corpus JSONL round trip and malformed lines") {
  const auto path = temp_path("docs.jsonl");
  std::vector<Document> docs{{"a", "SOURCE_A", {2, 3}}, {"b", "SOURCE_B", {4}}, {"c", "SOURCE_A", {5, 6, 7}}};
  io::save_corpus(path, docs);
  CHECK(io::load_corpus(path) == docs);

  {
    std::ofstream out(path, std::ios::app);
    out << "{\"id\": \"d\", \"source\": \"A\", \"tok";
  }
  CHECK_THROWS_WITH_AS(io::load_corpus(path), doctest::Contains("line 4"), DataError);
}

TEST_CASE("10k-document file loads with a matching line count") {
  const auto path = temp_path("big.jsonl");
  std::vector<Document> docs;
  for (int i = 0; i < 10000; ++i) docs.push_back({"d" + std::to_string(i), i % 3 ? "A" : "B", {2, 3, 4}});
  io::save_corpus(path, docs);
  std::ifstream in(path);
  std::size_t lines = 0;
  for (std::string s; std::getline(in, s);) lines += s.empty() ? 0 : 1;
  CHECK(io::load_corpus(path).size() == lines);
  CHECK(lines == 10000);
}

TEST_CASE("evidence JSONL round trip keeps ids, iterations, scores and metadata") {
  std::vector<PretrainExample> ex(3);
  for (int i = 0; i < 3; ++i) {
    ex[i].id = "d" + std::to_string(i) + ":0001";
    ex[i].context = {2, 1};
    ex[i].masked_position = 1;
  }
  CorpusIndex corpus(ex);
  EvidenceSet s;
  s.method = "orca";
  s.backend = "gradient";
  s.lagging = "max_lag";
  s.seed = 9;
  s.entries = {{2, ex[2].id, 1, 0.75}, {0, ex[0].id, 2, 0.125}, {2, ex[2].id, 2, 0.1}};
  const auto path = temp_path("evidence.jsonl");
  io::save_evidence(path, s);
  CHECK(io::load_evidence(path, corpus) == s);
  CorpusIndex small(std::vector<PretrainExample>{ex[0]});
  CHECK_THROWS_WITH_AS(io::load_evidence(path, small), doctest::Contains(ex[2].id.c_str()), DataError);
}
