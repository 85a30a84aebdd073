#include "orca/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace orca::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'O', 'R', 'C', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return in;
}

// Calls fn(json, line_number) for every non-blank line.
template <typename Fn>
void for_each_jsonl(const fs::path& path, Fn&& fn) {
  auto in = open_in(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line), line_no);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) {
    text += r.dump();
    text += '\n';
  }
  write_text_atomic(path, text);
}

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  return j.at(key).get<T>();
}

json config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"context_len", c.context_len}, {"dim", c.dim},
              {"ffn_dim", c.ffn_dim},       {"heads", c.heads},             {"rel_window", c.rel_window},
              {"prompt_len", c.prompt_len}, {"pad_id", c.pad_id},         {"mask_id", c.mask_id}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.dim = j.at("dim").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.rel_window = j.at("rel_window").get<int>();
  c.prompt_len = j.at("prompt_len").get<int>();
  c.pad_id = j.at("pad_id").get<TokenId>();
  c.mask_id = j.at("mask_id").get<TokenId>();
  return c;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const fs::path& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("'" + path.string() + "': truncated binary file");
  return v;
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    out << text;
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Document> load_corpus(const fs::path& path) {
  std::vector<Document> docs;
  for_each_jsonl(path, [&](const json& j, std::size_t) {
    Document d;
    d.id = required<std::string>(j, "id");
    d.source = required<std::string>(j, "source");
    d.tokens = required<std::vector<TokenId>>(j, "tokens");
    if (d.tokens.empty()) throw DataError("document '" + d.id + "' has no tokens");
    docs.push_back(std::move(d));
  });
  return docs;
}

void save_corpus(const fs::path& path, const std::vector<Document>& docs) {
  std::vector<json> rows;
  rows.reserve(docs.size());
  for (const auto& d : docs) rows.push_back(json{{"id", d.id}, {"source", d.source}, {"tokens", d.tokens}});
  write_jsonl(path, rows);
}

std::vector<PretrainExample> load_examples(const fs::path& path) {
  std::vector<PretrainExample> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) {
    PretrainExample e;
    e.id = required<std::string>(j, "id");
    e.doc_id = required<std::string>(j, "doc_id");
    e.source = required<std::string>(j, "source");
    e.context = required<std::vector<TokenId>>(j, "context");
    e.masked_position = required<std::uint32_t>(j, "masked_position");
    e.masked_token = required<TokenId>(j, "masked_token");
    if (e.masked_position >= e.context.size()) throw DataError("masked_position outside context");
    out.push_back(std::move(e));
  });
  return out;
}

void save_examples(const fs::path& path, const std::vector<PretrainExample>& examples) {
  std::vector<json> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples) {
    rows.push_back(json{{"id", e.id},
                        {"doc_id", e.doc_id},
                        {"source", e.source},
                        {"context", e.context},
                        {"masked_position", e.masked_position},
                        {"masked_token", e.masked_token}});
  }
  write_jsonl(path, rows);
}

std::vector<TaskExample> load_tasks(const fs::path& path) {
  std::vector<TaskExample> out;
  for_each_jsonl(path, [&](const json& j, std::size_t) {
    TaskExample t;
    t.id = required<std::string>(j, "id");
    t.slots = required<std::map<std::string, std::vector<TokenId>>>(j, "slots");
    t.label = required<int>(j, "label");
    if (t.label < 0) throw DataError("negative label");
    out.push_back(std::move(t));
  });
  return out;
}

void save_tasks(const fs::path& path, const std::vector<TaskExample>& tasks) {
  std::vector<json> rows;
  rows.reserve(tasks.size());
  for (const auto& t : tasks) rows.push_back(json{{"id", t.id}, {"slots", t.slots}, {"label", t.label}});
  write_jsonl(path, rows);
}

Vocabulary load_vocab(const fs::path& path) {
  try {
    return Vocabulary(json::parse(read_text(path)).get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

void save_vocab(const fs::path& path, const Vocabulary& vocab) {
  write_text_atomic(path, json(vocab.tokens()).dump(1) + "\n");
}

EvidenceSet load_evidence_raw(const fs::path& path) {
  EvidenceSet ev;
  bool first = true;
  for_each_jsonl(path, [&](const json& j, std::size_t) {
    EvidenceEntry e;
    e.example_id = required<std::string>(j, "example_id");
    e.iteration = required<int>(j, "iteration");
    e.score = required<double>(j, "score");
    if (first) {
      ev.method = required<std::string>(j, "method");
      ev.backend = required<std::string>(j, "backend");
      ev.lagging = required<std::string>(j, "lagging");
      ev.seed = required<std::uint64_t>(j, "seed");
      first = false;
    }
    ev.entries.push_back(std::move(e));
  });
  return ev;
}

EvidenceSet load_evidence(const fs::path& path, const CorpusIndex& corpus) {
  auto ev = load_evidence_raw(path);
  for (auto& e : ev.entries) e.index = corpus.index_of(e.example_id);
  return ev;
}

void save_evidence(const fs::path& path, const EvidenceSet& evidence) {
  std::vector<json> rows;
  rows.reserve(evidence.size());
  for (const auto& e : evidence.entries) {
    rows.push_back(json{{"example_id", e.example_id},
                        {"iteration", e.iteration},
                        {"score", e.score},
                        {"method", evidence.method},
                        {"backend", evidence.backend},
                        {"lagging", evidence.lagging},
                        {"seed", evidence.seed}});
  }
  write_jsonl(path, rows);
}

void save_checkpoint(const fs::path& path, const ModelParams& params) {
  json header;
  header["format"] = "orca-masked-lm";
  header["config"] = config_to_json(params.config());
  json segments = json::array();
  for (int i = 0; i < kNumSegments; ++i) {
    const auto s = static_cast<Segment>(i);
    segments.push_back(json{{"name", segment_name(s)}, {"offset", params.layout()[s].offset},
                            {"size", params.layout()[s].size}});
  }
  header["segments"] = segments;
  header["num_params"] = params.size();
  const std::string header_text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint64_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    const auto flat = params.flat();
    out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

ModelParams load_checkpoint(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("'" + path.string() + "' is not a checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(in, path);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("'" + path.string() + "': truncated header");
  ModelConfig cfg;
  std::size_t count = 0;
  try {
    const auto header = json::parse(header_text);
    cfg = config_from_json(header.at("config"));
    count = header.at("num_params").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "': bad header: " + e.what());
  }
  ModelParams params(cfg);
  if (count != params.size()) {
    throw DataError("'" + path.string() + "': header declares " + std::to_string(count) +
                    " parameters but the config implies " + std::to_string(params.size()));
  }
  auto flat = params.flat();
  in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!in) throw DataError("'" + path.string() + "': truncated parameter array");
  return params;
}

ModelParams load_checkpoint(const fs::path& path, const ModelConfig& expected) {
  auto params = load_checkpoint(path);
  if (!(params.config() == expected)) {
    throw ConfigError("checkpoint '" + path.string() + "' header " + config_to_json(params.config()).dump() +
                      " does not match expected " + config_to_json(expected).dump());
  }
  return params;
}

void append_score_dump(const fs::path& path, std::uint32_t iteration, std::span<const double> scores) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_pod(out, iteration);
  write_pod(out, static_cast<std::uint64_t>(scores.size()));
  for (std::size_t i = 0; i < scores.size(); ++i) {
    write_pod(out, static_cast<std::uint32_t>(i));
    write_pod(out, static_cast<float>(scores[i]));
  }
}

std::vector<ScoreDumpRecord> load_score_dump(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  std::vector<ScoreDumpRecord> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    ScoreDumpRecord rec;
    rec.iteration = read_pod<std::uint32_t>(in, path);
    const auto count = read_pod<std::uint64_t>(in, path);
    rec.scores.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto id = read_pod<std::uint32_t>(in, path);
      const auto score = read_pod<float>(in, path);
      rec.scores.emplace_back(id, score);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace orca::io
