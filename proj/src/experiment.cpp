#include "orca/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "orca/io.hpp"

namespace orca {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Method m) {
  switch (m) {
    case Method::kNull: return "null";
    case Method::kRandom: return "random";
    case Method::kKnn: return "knn";
    case Method::kOrca: return "orca";
    case Method::kOrcaNoLag: return "orca_nl";
    case Method::kOrcaEmbed: return "orca_embed";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kNull, Method::kRandom, Method::kKnn, Method::kOrca, Method::kOrcaNoLag,
                   Method::kOrcaEmbed}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s + "' (expected null, random, knn, orca, orca_nl or orca_embed)");
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kData: return "data";
    case Stage::kPretrain: return "pretrain";
    case Stage::kTune: return "tune";
    case Stage::kSelect: return "select";
    case Stage::kBoost: return "boost";
    case Stage::kEval: return "eval";
    case Stage::kAnalyze: return "analyze";
    case Stage::kReport: return "report";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (Stage st : {Stage::kData, Stage::kPretrain, Stage::kTune, Stage::kSelect, Stage::kBoost, Stage::kEval,
                   Stage::kAnalyze, Stage::kReport}) {
    if (to_string(st) == s) return st;
  }
  throw ConfigError("unknown stage '" + s + "'");
}

fs::path seed_dir(const fs::path& out, Method m, std::uint64_t seed) {
  return out / to_string(m) / ("seed_" + std::to_string(seed));
}

// ---------------------------------------------------------------- config

namespace {

// Reads fields of one JSON object, remembering which keys were consumed so
// that leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config field '" + where() + "' must be an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + path_ + key + "' has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    std::string s;
    if (!has(key)) return;
    get(key, s);
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError("config field '" + path_ + key + "': " + e.what());
    }
  }

  // Accepts a key without reading it, e.g. derived values in a config echo.
  void ignore(const std::string& key) { used_.insert(key); }

  Fields sub(const std::string& key) {
    if (!has(key)) return Fields(empty(), path_ + key + ".");
    return Fields(j_.at(key), path_ + key + ".");
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (used_.count(key) == 0) throw ConfigError("unknown config field '" + path_ + key + "'");
    }
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  std::string where() const { return path_.empty() ? "<root>" : path_.substr(0, path_.size() - 1); }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_synthetic(Fields f, SyntheticConfig& s) {
  f.get_enum("task_kind", s.task_kind, task_kind_from_string);
  f.get("vocab_size", s.vocab_size);
  f.get("context_len", s.context_len);
  f.get("docs_a", s.docs_a);
  f.get("docs_b", s.docs_b);
  f.get("doc_len_min", s.doc_len_min);
  f.get("doc_len_max", s.doc_len_max);
  f.get("relevant_rate_a", s.relevant_rate_a);
  f.get("relevant_rate_b", s.relevant_rate_b);
  f.get("cue_words_per_class", s.cue_words_per_class);
  f.get("synonyms_per_class", s.synonyms_per_class);
  f.get("polarity_word_rate", s.polarity_word_rate);
  f.get("frame_rate", s.frame_rate);
  f.get("frame_noise", s.frame_noise);
  f.get("cue_noise", s.cue_noise);
  f.get("stray_cue_rate", s.stray_cue_rate);
  f.get("task_examples", s.task_examples);
  f.get("task_train_examples", s.task_train_examples);
  f.get("input_len_min", s.input_len_min);
  f.get("input_len_max", s.input_len_max);
  f.get("input_cue_rate", s.input_cue_rate);
  f.get("input_noise", s.input_noise);
  f.get("mask_rate", s.mask_rate);
  f.finish();
}

ordered_json synthetic_json(const SyntheticConfig& s) {
  return ordered_json{{"task_kind", to_string(s.task_kind)},
                      {"vocab_size", s.vocab_size},
                      {"context_len", s.context_len},
                      {"docs_a", s.docs_a},
                      {"docs_b", s.docs_b},
                      {"doc_len_min", s.doc_len_min},
                      {"doc_len_max", s.doc_len_max},
                      {"relevant_rate_a", s.relevant_rate_a},
                      {"relevant_rate_b", s.relevant_rate_b},
                      {"cue_words_per_class", s.cue_words_per_class},
                      {"synonyms_per_class", s.synonyms_per_class},
                      {"polarity_word_rate", s.polarity_word_rate},
                      {"frame_rate", s.frame_rate},
                      {"frame_noise", s.frame_noise},
                      {"cue_noise", s.cue_noise},
                      {"stray_cue_rate", s.stray_cue_rate},
                      {"task_examples", s.task_examples},
                      {"task_train_examples", s.task_train_examples},
                      {"input_len_min", s.input_len_min},
                      {"input_len_max", s.input_len_max},
                      {"input_cue_rate", s.input_cue_rate},
                      {"input_noise", s.input_noise},
                      {"mask_rate", s.mask_rate}};
}

ordered_json optimizer_json(const OptimizerConfig& o) {
  return ordered_json{{"optimizer", to_string(o.kind)},
                      {"learning_rate", o.learning_rate},
                      {"beta1", o.beta1},
                      {"beta2", o.beta2},
                      {"eps", o.eps}};
}

void apply_override(json& root, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not of the form key=value");
  const std::string path = item.substr(0, eq);
  const std::string text = item.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + item + "' has an empty key");
    if (!node->is_object()) throw ConfigError("override '" + item + "': '" + key + "' is inside a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("config field 'methods' must not be empty");
  if (seeds.empty()) throw ConfigError("config field 'seeds' must not be empty");
  if (workers < 1) throw ConfigError("config field 'workers' must be at least 1");
  if (output_dir.empty()) throw ConfigError("config field 'output_dir' must be set");
  if (data.synthetic) {
    data.synthetic->validate();
  } else {
    if (data.corpus.empty() && data.examples.empty()) {
      throw ConfigError("config field 'data' needs 'synthetic', 'corpus' or 'examples'");
    }
    if (data.vocab.empty()) throw ConfigError("config field 'data.vocab' is required for file inputs");
    if (data.task.empty()) throw ConfigError("config field 'data.task' is required for file inputs");
    if (data.template_pattern.empty()) throw ConfigError("config field 'data.template' is required for file inputs");
    if (data.verbalizer.empty()) throw ConfigError("config field 'data.verbalizer' is required for file inputs");
  }
  if (!(data.mask_rate > 0 && data.mask_rate <= 1)) throw ConfigError("config field 'data.mask_rate' must be in (0, 1]");
  ModelConfig probe = model;
  if (probe.vocab_size == 0) probe.vocab_size = 8;
  try {
    probe.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config field 'model': ") + e.what());
  }
  if (pretrain.epochs < 0 || pretrain.batch_size < 1) throw ConfigError("config field 'pretrain' has bad epochs or batch_size");
  if (!(pretrain.final_lr_fraction > 0 && pretrain.final_lr_fraction <= 1)) {
    throw ConfigError("config field 'pretrain.final_lr_fraction' must be in (0, 1]");
  }
  if (tune.steps < 0 || tune.batch_size < 1) throw ConfigError("config field 'tune' has bad steps or batch_size");
  if (tune.steps > 0 && model.prompt_len == 0) throw ConfigError("config field 'tune.steps' needs model.prompt_len > 0");
  try {
    selection.validate();
    boost.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config field 'selection'/'boost': ") + e.what());
  }
  const bool uses_knn = std::find(methods.begin(), methods.end(), Method::kKnn) != methods.end();
  if (uses_knn && (knn.t < 1 || knn.k < 1 || knn.max_r < 1)) throw ConfigError("config field 'knn' needs t, k, max_r >= 1");
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    if (trajectory[i] > evidence_size()) throw ConfigError("config field 'trajectory' exceeds the evidence size");
    if (i > 0 && trajectory[i] < trajectory[i - 1]) throw ConfigError("config field 'trajectory' must be ascending");
  }
  for (int w : divergence.windows) {
    if (w < 0) throw ConfigError("config field 'analysis.windows' must be non-negative");
  }
  if (divergence.sample_size < 0) throw ConfigError("config field 'analysis.sample_size' must be non-negative");
}

ExperimentConfig parse_experiment_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& o : overrides) apply_override(root, o);

  ExperimentConfig c;
  Fields f(root, "");
  std::string out = c.output_dir.string();
  f.get("output_dir", out);
  c.output_dir = out;
  if (f.has("methods")) {
    std::vector<std::string> names;
    f.get("methods", names);
    c.methods.clear();
    for (const auto& n : names) {
      try {
        c.methods.push_back(method_from_string(n));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("config field 'methods': ") + e.what());
      }
    }
  }
  f.get("seeds", c.seeds);
  f.get("workers", c.workers);
  f.ignore("version");

  {
    Fields d = f.sub("data");
    if (d.has("synthetic")) {
      c.data.synthetic = SyntheticConfig{};
      read_synthetic(d.sub("synthetic"), *c.data.synthetic);
    }
    d.get("synthetic_seed", c.data.synthetic_seed);
    d.get("corpus", c.data.corpus);
    d.get("examples", c.data.examples);
    d.get("vocab", c.data.vocab);
    d.get("task", c.data.task);
    d.get("task_train", c.data.task_train);
    d.get("mask_rate", c.data.mask_rate);
    d.get("expand_seed", c.data.expand_seed);
    d.get("template", c.data.template_pattern);
    d.get("verbalizer", c.data.verbalizer);
    d.get("synonyms", c.data.synonyms);
    d.finish();
  }
  {
    Fields m = f.sub("model");
    m.get("vocab_size", c.model.vocab_size);
    m.get("context_len", c.model.context_len);
    m.get("dim", c.model.dim);
    m.get("ffn_dim", c.model.ffn_dim);
    m.get("heads", c.model.heads);
    m.get("rel_window", c.model.rel_window);
    m.get("prompt_len", c.model.prompt_len);
    m.get("init_seed", c.init_seed);
    m.get("init_scale", c.init_scale);
    m.get("checkpoint", c.checkpoint);
    m.finish();
  }
  {
    Fields p = f.sub("pretrain");
    p.get("epochs", c.pretrain.epochs);
    p.get("batch_size", c.pretrain.batch_size);
    p.get("final_lr_fraction", c.pretrain.final_lr_fraction);
    p.get("seed", c.pretrain.seed);
    OptimizerConfig& o = c.pretrain.optimizer;
    p.get_enum("optimizer", o.kind, optimizer_from_string);
    p.get("learning_rate", o.learning_rate);
    p.get("beta1", o.beta1);
    p.get("beta2", o.beta2);
    p.get("eps", o.eps);
    p.finish();
  }
  {
    Fields t = f.sub("tune");
    t.get("steps", c.tune.steps);
    t.get("batch_size", c.tune.batch_size);
    t.get("learning_rate", c.tune.learning_rate);
    t.get("seed", c.tune.seed);
    t.finish();
  }
  {
    Fields s = f.sub("selection");
    s.get("m", c.selection.m);
    s.get("per_iter", c.selection.per_iter);
    s.get("filter_id", c.selection.filter_id);
    s.get("replacement", c.selection.replacement);
    s.get("task_subsample", c.selection.task_subsample);
    s.get("dump_scores", c.dump_scores);
    s.ignore("evidence_size");
    s.finish();
  }
  {
    Fields k = f.sub("knn");
    k.get("t", c.knn.t);
    k.get("k", c.knn.k);
    k.get("max_r", c.knn.max_r);
    k.finish();
  }
  {
    Fields b = f.sub("boost");
    b.get("batch_size", c.boost.batch_size);
    OptimizerConfig& o = c.boost.optimizer;
    b.get_enum("optimizer", o.kind, optimizer_from_string);
    b.get("learning_rate", o.learning_rate);
    b.get("beta1", o.beta1);
    b.get("beta2", o.beta2);
    b.get("eps", o.eps);
    b.finish();
  }
  {
    Fields e = f.sub("evaluation");
    e.get("trajectory", c.trajectory);
    e.finish();
  }
  {
    Fields a = f.sub("analysis");
    a.get("windows", c.divergence.windows);
    a.get("sample_size", c.divergence.sample_size);
    a.get("top_tokens", c.top_tokens);
    a.ignore("proxy");
    a.finish();
  }
  f.finish();

  c.selection.workers = c.workers;
  c.knn.workers = c.workers;
  c.boost.workers = c.workers;
  c.pretrain.workers = c.workers;
  c.tune.workers = c.workers;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), overrides);
}

namespace {

ordered_json config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["version"] = std::string(kVersion);
  j["output_dir"] = c.output_dir.string();
  ordered_json methods = ordered_json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  j["methods"] = methods;
  j["seeds"] = c.seeds;
  j["workers"] = c.workers;
  ordered_json d;
  if (c.data.synthetic) {
    d["synthetic"] = synthetic_json(*c.data.synthetic);
    d["synthetic_seed"] = c.data.synthetic_seed;
  } else {
    d["corpus"] = c.data.corpus;
    d["examples"] = c.data.examples;
    d["vocab"] = c.data.vocab;
    d["task"] = c.data.task;
    d["task_train"] = c.data.task_train;
    d["mask_rate"] = c.data.mask_rate;
    d["expand_seed"] = c.data.expand_seed;
  }
  d["template"] = c.data.template_pattern;
  d["verbalizer"] = c.data.verbalizer;
  d["synonyms"] = c.data.synonyms;
  j["data"] = d;
  j["model"] = {{"vocab_size", c.model.vocab_size}, {"context_len", c.model.context_len}, {"dim", c.model.dim},
                {"ffn_dim", c.model.ffn_dim},       {"heads", c.model.heads},             {"rel_window", c.model.rel_window},
                {"prompt_len", c.model.prompt_len}, {"init_seed", c.init_seed},           {"init_scale", c.init_scale},
                {"checkpoint", c.checkpoint}};
  ordered_json p = {{"epochs", c.pretrain.epochs},
                    {"batch_size", c.pretrain.batch_size},
                    {"final_lr_fraction", c.pretrain.final_lr_fraction},
                    {"seed", c.pretrain.seed}};
  p.update(optimizer_json(c.pretrain.optimizer));
  j["pretrain"] = p;
  j["tune"] = {{"steps", c.tune.steps},
               {"batch_size", c.tune.batch_size},
               {"learning_rate", c.tune.learning_rate},
               {"seed", c.tune.seed}};
  j["selection"] = {{"m", c.selection.m},
                    {"per_iter", c.selection.per_iter},
                    {"evidence_size", c.evidence_size()},
                    {"filter_id", c.selection.filter_id},
                    {"replacement", c.selection.replacement},
                    {"task_subsample", c.selection.task_subsample},
                    {"dump_scores", c.dump_scores}};
  j["knn"] = {{"t", c.knn.t}, {"k", c.knn.k}, {"max_r", c.knn.max_r}};
  ordered_json b = {{"batch_size", c.boost.batch_size}};
  b.update(optimizer_json(c.boost.optimizer));
  j["boost"] = b;
  j["evaluation"] = {{"trajectory", c.trajectory}};
  j["analysis"] = {{"proxy", kDivergenceProxy},
                   {"windows", c.divergence.windows},
                   {"sample_size", c.divergence.sample_size},
                   {"top_tokens", c.top_tokens}};
  return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

// -------------------------------------------------------------- pipeline

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string chain_key(const std::string& prev, const ordered_json& section) {
  return hex(hash_string(prev + "|" + section.dump()));
}

json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_text(p));
  } catch (const json::exception& e) {
    throw DataError("'" + p.string() + "': " + e.what());
  }
}

std::vector<std::size_t> trajectory_points(const ExperimentConfig& cfg, std::size_t size) {
  if (!cfg.trajectory.empty()) {
    std::vector<std::size_t> out;
    for (std::size_t n : cfg.trajectory) out.push_back(std::min(n, size));
    return out;
  }
  std::vector<std::size_t> out;
  for (std::size_t q = 1; q <= 4; ++q) {
    const std::size_t n = (size * q + 3) / 4;
    if (n > 0 && (out.empty() || out.back() != n)) out.push_back(n);
  }
  return out;
}

struct Prompt {
  std::vector<std::string> pattern;
  std::vector<std::string> verbalizer;
  std::vector<std::vector<std::string>> synonyms;
};

// Loaded products of the data and model stages.
struct Workbench {
  Vocabulary vocab;
  CorpusIndex corpus;
  PromptedTask task;
  std::vector<TaskExample> task_train;
  std::vector<std::vector<TokenId>> synonyms;
  ModelParams original;
};

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts), out_(cfg.output_dir) {}

  void run() {
    std::set<Stage> want = opts_.targets;
    if (want.empty()) {
      want = {Stage::kData, Stage::kPretrain, Stage::kTune, Stage::kSelect,
              Stage::kBoost, Stage::kEval, Stage::kAnalyze, Stage::kReport};
    }
    auto need = [&](Stage s) { return want.count(s) != 0; };
    if (need(Stage::kReport)) want.insert({Stage::kEval, Stage::kAnalyze});
    if (need(Stage::kEval)) want.insert(Stage::kBoost);
    if (need(Stage::kBoost) || need(Stage::kAnalyze)) want.insert(Stage::kSelect);
    if (need(Stage::kSelect)) want.insert(Stage::kTune);
    if (need(Stage::kTune)) want.insert(Stage::kPretrain);
    if (need(Stage::kPretrain)) want.insert(Stage::kData);

    fs::create_directories(out_);
    io::write_text_atomic(out_ / "config.json", config_to_json(cfg_));

    keys_data_ = data_key();
    stage(Stage::kData, out_ / "data", keys_data_, {"vocab.json", "examples.jsonl", "task.jsonl", "prompt.json"},
          [&](const fs::path& dir) { return run_data(dir); });
    keys_pretrain_ = chain_key(keys_data_, model_section());
    if (need(Stage::kPretrain)) {
      stage(Stage::kPretrain, out_ / "model", keys_pretrain_, {"pretrained.ckpt"},
            [&](const fs::path& dir) { return run_pretrain(dir); });
    }
    keys_tune_ = chain_key(keys_pretrain_, ordered_json{{"steps", cfg_.tune.steps},
                                                         {"batch_size", cfg_.tune.batch_size},
                                                         {"learning_rate", cfg_.tune.learning_rate},
                                                         {"seed", cfg_.tune.seed}});
    if (need(Stage::kTune)) {
      stage(Stage::kTune, out_ / "model", keys_tune_, {"original.ckpt"},
            [&](const fs::path& dir) { return run_tune(dir); });
    }
    if (need(Stage::kSelect)) {
      for (Method m : cfg_.methods) {
        for (std::uint64_t s : cfg_.seeds) run_seed(m, s, want);
      }
    }
    if (need(Stage::kReport)) {
      try {
        emit_report(out_);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(Stage::kReport, e.what());
      }
    }
  }

 private:
  void log(const std::string& line) const {
    if (opts_.log != nullptr) *opts_.log << line << "\n" << std::flush;
  }

  // Runs fn(dir) unless the stage manifest in dir matches `key` and every
  // listed output exists. fn returns extra manifest fields.
  template <typename Fn>
  void stage(Stage st, const fs::path& dir, const std::string& key, const std::vector<std::string>& outputs, Fn&& fn,
             const std::string& label = {}) {
    const std::string name = to_string(st);
    const fs::path manifest = dir / (name + ".manifest.json");
    const fs::path failed = dir / (name + ".FAILED");
    const std::string tag = label.empty() ? name : name + " " + label;
    const bool forced = opts_.force && opts_.targets.count(st) != 0;
    if (!forced && fs::exists(manifest)) {
      bool ok = false;
      try {
        const json m = read_json(manifest);
        ok = m.value("key", "") == key;
      } catch (const DataError&) {
        ok = false;
      }
      for (const auto& o : outputs) ok = ok && fs::exists(dir / o);
      if (ok) {
        log("[skip] " + tag + " (up to date)");
        return;
      }
    }
    log("[run]  " + tag);
    fs::create_directories(dir);
    fs::remove(manifest);
    ordered_json extra;
    try {
      extra = fn(dir);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      io::write_text_atomic(failed, std::string(e.what()) + "\n");
      throw StageError(st, e.what());
    }
    fs::remove(failed);
    ordered_json m{{"stage", name}, {"key", key}, {"version", std::string(kVersion)}, {"outputs", outputs}};
    if (!extra.is_null()) m["details"] = extra;
    io::write_text_atomic(manifest, m.dump(2) + "\n");
  }

  std::string data_key() const {
    ordered_json d = config_json(cfg_)["data"];
    d["context_len"] = cfg_.model.context_len;
    return chain_key(std::string(kVersion), d);
  }

  ordered_json model_section() const {
    ordered_json j = config_json(cfg_)["model"];
    j["pretrain"] = config_json(cfg_)["pretrain"];
    if (!cfg_.checkpoint.empty()) j["checkpoint_hash"] = hex(hash_string(io::read_text(cfg_.checkpoint)));
    return j;
  }

  ordered_json run_data(const fs::path& dir) {
    Prompt prompt{cfg_.data.template_pattern, cfg_.data.verbalizer, cfg_.data.synonyms};
    ordered_json details;
    if (cfg_.data.synthetic) {
      SyntheticConfig sc = *cfg_.data.synthetic;
      if (sc.context_len != cfg_.model.context_len) {
        throw ConfigError("config field 'data.synthetic.context_len' must equal model.context_len");
      }
      auto tb = generate_synthetic(sc, cfg_.data.synthetic_seed);
      io::save_vocab(dir / "vocab.json", tb.vocab);
      io::save_corpus(dir / "documents.jsonl", tb.documents);
      io::save_examples(dir / "examples.jsonl", tb.examples);
      io::save_tasks(dir / "task.jsonl", tb.task);
      io::save_tasks(dir / "task_train.jsonl", tb.task_train);
      if (prompt.pattern.empty()) prompt.pattern = tb.template_pattern;
      if (prompt.verbalizer.empty()) prompt.verbalizer = tb.verbalizer_words;
      if (prompt.synonyms.empty()) prompt.synonyms = tb.synonyms;
      details["documents"] = tb.documents.size();
      details["examples"] = tb.examples.size();
      details["planted_examples"] = tb.planted_ids.size();
    } else {
      const Vocabulary vocab = io::load_vocab(cfg_.data.vocab);
      std::vector<PretrainExample> examples;
      if (!cfg_.data.examples.empty()) {
        examples = io::load_examples(cfg_.data.examples);
      } else {
        const auto docs = io::load_corpus(cfg_.data.corpus);
        examples = expand_corpus(docs, cfg_.data.mask_rate, cfg_.data.expand_seed,
                                 static_cast<std::size_t>(cfg_.model.context_len), cfg_.model.special());
        details["documents"] = docs.size();
      }
      for (const auto& e : examples) {
        if (e.context.size() != static_cast<std::size_t>(cfg_.model.context_len)) {
          throw DataError("example '" + e.id + "' has context length " + std::to_string(e.context.size()) +
                          ", expected " + std::to_string(cfg_.model.context_len));
        }
      }
      io::save_vocab(dir / "vocab.json", vocab);
      io::save_examples(dir / "examples.jsonl", examples);
      io::save_tasks(dir / "task.jsonl", io::load_tasks(cfg_.data.task));
      std::vector<TaskExample> train;
      if (!cfg_.data.task_train.empty()) train = io::load_tasks(cfg_.data.task_train);
      io::save_tasks(dir / "task_train.jsonl", train);
      details["examples"] = examples.size();
    }
    ordered_json pj{{"template", prompt.pattern}, {"verbalizer", prompt.verbalizer}, {"synonyms", prompt.synonyms}};
    io::write_text_atomic(dir / "prompt.json", pj.dump(2) + "\n");
    return details;
  }

  // Loads the data-stage products (once).
  Workbench& bench(bool with_model) {
    if (!bench_) {
      const fs::path dir = out_ / "data";
      Workbench w;
      w.vocab = io::load_vocab(dir / "vocab.json");
      w.corpus = CorpusIndex(io::load_examples(dir / "examples.jsonl"));
      const json pj = read_json(dir / "prompt.json");
      const auto pattern = pj.at("template").get<std::vector<std::string>>();
      std::vector<TokenId> vtok;
      for (const auto& v : pj.at("verbalizer").get<std::vector<std::string>>()) vtok.push_back(w.vocab.resolve(v));
      w.task.examples = io::load_tasks(dir / "task.jsonl");
      w.task.tpl = Template::parse(pattern, w.vocab);
      w.task.verbalizer = Verbalizer(vtok);
      if (fs::exists(dir / "task_train.jsonl")) w.task_train = io::load_tasks(dir / "task_train.jsonl");
      for (const auto& group : pj.at("synonyms").get<std::vector<std::vector<std::string>>>()) {
        std::vector<TokenId> g;
        for (const auto& s : group) g.push_back(w.vocab.resolve(s));
        w.synonyms.push_back(g);
      }
      bench_ = std::move(w);
    }
    if (with_model && bench_->original.size() == 0) {
      bench_->original = io::load_checkpoint(out_ / "model" / "original.ckpt");
    }
    return *bench_;
  }

  ModelConfig resolved_model(const Workbench& w) const {
    ModelConfig mc = cfg_.model;
    if (mc.vocab_size == 0) mc.vocab_size = static_cast<int>(w.vocab.size());
    if (static_cast<std::size_t>(mc.vocab_size) < w.vocab.size()) {
      throw ConfigError("config field 'model.vocab_size' is smaller than the vocabulary");
    }
    return mc;
  }

  ordered_json run_pretrain(const fs::path& dir) {
    auto& w = bench(false);
    const ModelConfig mc = resolved_model(w);
    ModelParams params;
    ordered_json details;
    if (!cfg_.checkpoint.empty()) {
      params = io::load_checkpoint(cfg_.checkpoint, mc);
      details["source"] = cfg_.checkpoint;
    } else {
      auto init = ModelParams::random(mc, cfg_.init_seed, cfg_.init_scale);
      auto r = pretrain_mlm(init, w.corpus.examples(), cfg_.pretrain);
      params = std::move(r.params);
      details["epoch_losses"] = r.epoch_losses;
    }
    if (!params.all_finite()) throw DataError("pretrained parameters are not finite");
    io::save_checkpoint(dir / "pretrained.ckpt", params);
    details["parameters"] = params.size();
    details["vocab_size"] = mc.vocab_size;
    return details;
  }

  ordered_json run_tune(const fs::path& dir) {
    auto& w = bench(false);
    auto params = io::load_checkpoint(dir / "pretrained.ckpt");
    ordered_json details;
    if (cfg_.tune.steps > 0) {
      PromptedTask train{w.task_train, w.task.tpl, w.task.verbalizer};
      if (train.examples.empty()) train.examples = w.task.examples;
      auto r = tune_soft_prompt(params, train, cfg_.tune);
      params = std::move(r.params);
      details["losses"] = r.losses;
    }
    io::save_checkpoint(dir / "original.ckpt", params);
    details["acc_original"] = evaluate_accuracy(params, w.task, cfg_.workers);
    bench_.reset();
    return details;
  }

  void run_seed(Method m, std::uint64_t s, const std::set<Stage>& want) {
    const fs::path dir = seed_dir(out_, m, s);
    const std::string label = to_string(m) + " seed " + std::to_string(s);
    ordered_json sel = config_json(cfg_)["selection"];
    sel["method"] = to_string(m);
    sel["seed"] = s;
    if (m == Method::kKnn) sel["knn"] = config_json(cfg_)["knn"];
    if (m == Method::kOrca || m == Method::kOrcaNoLag || m == Method::kOrcaEmbed) {
      sel["boost"] = config_json(cfg_)["boost"];
    }
    const std::string k_select = chain_key(keys_tune_, sel);
    std::vector<std::string> sel_outputs{"evidence.jsonl"};
    if (cfg_.dump_scores && m != Method::kNull && m != Method::kRandom && m != Method::kKnn) {
      sel_outputs.push_back("scores.bin");
    }
    stage(Stage::kSelect, dir, k_select, sel_outputs, [&](const fs::path& d) { return run_select(d, m, s); }, label);

    const std::string k_boost = chain_key(k_select, config_json(cfg_)["boost"]);
    if (want.count(Stage::kBoost) != 0) {
      std::vector<std::string> outs;
      if (m != Method::kNull) outs.push_back("boosted.ckpt");
      stage(Stage::kBoost, dir, k_boost, outs, [&](const fs::path& d) { return run_boost(d, m, s); }, label);
    }
    if (want.count(Stage::kEval) != 0) {
      const std::string k_eval = chain_key(k_boost, config_json(cfg_)["evaluation"]);
      std::vector<std::string> outs{"eval.json"};
      if (m != Method::kNull) outs.push_back("trajectory.csv");
      stage(Stage::kEval, dir, k_eval, outs, [&](const fs::path& d) { return run_eval(d, m, s); }, label);
    }
    if (want.count(Stage::kAnalyze) != 0 && m != Method::kNull) {
      const std::string k_an = chain_key(k_select, config_json(cfg_)["analysis"]);
      stage(Stage::kAnalyze, dir, k_an, {"analysis.json", "sources.csv", "tokens.csv", "divergence.csv"},
            [&](const fs::path& d) { return run_analyze(d, s); }, label);
    }
  }

  BoostConfig boost_cfg(std::uint64_t s) const {
    BoostConfig b = cfg_.boost;
    b.seed = boost_seed(s);
    return b;
  }

  ordered_json run_select(const fs::path& dir, Method m, std::uint64_t s) {
    auto& w = bench(true);
    const std::size_t size = cfg_.evidence_size();
    EvidenceSet ev;
    ordered_json details;
    switch (m) {
      case Method::kNull:
        ev.method = "null";
        break;
      case Method::kRandom:
        ev = baseline_random(w.corpus, size, selection_seed(s));
        break;
      case Method::kKnn: {
        KnnConfig k = cfg_.knn;
        k.size = static_cast<int>(size);
        k.seed = selection_seed(s);
        auto r = baseline_knn(w.corpus, w.task, w.original, k);
        ev = std::move(r.evidence);
        std::string csv = "slot,example_id,score\n";
        for (std::size_t i = 0; i < r.pool.size(); ++i) {
          std::ostringstream os;
          os << std::setprecision(17) << r.pool_scores[i];
          csv += std::to_string(i) + "," + w.corpus[r.pool[i]].id + "," + os.str() + "\n";
        }
        io::write_text_atomic(dir / "knn_pool.csv", csv);
        details["pool_size"] = r.pool.size();
        break;
      }
      case Method::kOrca:
      case Method::kOrcaNoLag:
      case Method::kOrcaEmbed: {
        SelectionConfig sc = cfg_.selection;
        sc.seed = selection_seed(s);
        sc.lagging = m == Method::kOrcaNoLag ? Lagging::kNoLag : Lagging::kMaxLag;
        sc.backend = m == Method::kOrcaEmbed ? Backend::kEmbedding : Backend::kGradient;
        const fs::path dump = dir / "scores.bin";
        fs::remove(dump);
        ScoreSink sink;
        if (cfg_.dump_scores) {
          sink = [&](int it, std::span<const double> scores) {
            io::append_score_dump(dump, static_cast<std::uint32_t>(it), scores);
          };
        }
        auto r = orca_select(w.corpus, w.task, w.original, sc, boost_cfg(s), sink);
        ev = std::move(r.evidence);
        ordered_json trace = ordered_json::array();
        for (const auto& t : r.trace) {
          trace.push_back({{"iteration", t.iteration}, {"threshold", t.threshold}, {"zero_scores", t.zero_scores}});
        }
        details["trace"] = trace;
        break;
      }
    }
    ev.seed = s;
    io::save_evidence(dir / "evidence.jsonl", ev);
    details["evidence_size"] = ev.size();
    return details;
  }

  ordered_json run_boost(const fs::path& dir, Method m, std::uint64_t s) {
    ordered_json details;
    if (m == Method::kNull) {
      details["updates"] = 0;
      return details;
    }
    auto& w = bench(true);
    const auto ev = io::load_evidence(dir / "evidence.jsonl", w.corpus);
    const auto r = boost_model(w.original, ev, w.corpus, boost_cfg(s));
    io::save_checkpoint(dir / "boosted.ckpt", r.params);
    details["updates"] = r.updates;
    return details;
  }

  ordered_json run_eval(const fs::path& dir, Method m, std::uint64_t s) {
    auto& w = bench(true);
    ordered_json j;
    j["method"] = to_string(m);
    j["seed"] = s;
    j["acc_original"] = evaluate_accuracy(w.original, w.task, cfg_.workers);
    if (m == Method::kNull) {
      j["evidence_size"] = 0;
      io::write_text_atomic(dir / "eval.json", j.dump(2) + "\n");
      return {};
    }
    const auto ev = io::load_evidence(dir / "evidence.jsonl", w.corpus);
    const auto boosted = io::load_checkpoint(dir / "boosted.ckpt");
    const json bm = read_json(dir / "boost.manifest.json");
    const double acc_o = j["acc_original"].get<double>();
    const double acc_b = evaluate_accuracy(boosted, w.task, cfg_.workers);
    j["evidence_size"] = ev.size();
    j["updates"] = bm.at("details").at("updates");
    j["acc_boosted"] = acc_b;
    j["q"] = acc_b - acc_o;
    const auto traj = quality_trajectory(w.original, ev, w.corpus, w.task, boost_cfg(s), trajectory_points(cfg_, ev.size()));
    ordered_json tj = ordered_json::array();
    std::ostringstream csv;
    csv << "prefix_size,accuracy,seed\n" << std::setprecision(17);
    for (const auto& p : traj) {
      tj.push_back({{"prefix_size", p.prefix_size}, {"accuracy", p.accuracy}});
      csv << p.prefix_size << "," << p.accuracy << "," << s << "\n";
    }
    j["trajectory"] = tj;
    io::write_text_atomic(dir / "trajectory.csv", csv.str());
    io::write_text_atomic(dir / "eval.json", j.dump(2) + "\n");
    return {};
  }

  ordered_json run_analyze(const fs::path& dir, std::uint64_t s) {
    auto& w = bench(false);
    const auto ev = io::load_evidence(dir / "evidence.jsonl", w.corpus);
    DivergenceConfig div = cfg_.divergence;
    div.seed = analysis_seed(s);
    if (static_cast<std::size_t>(div.sample_size) > w.task.examples.size()) {
      div.sample_size = static_cast<int>(w.task.examples.size());
    }
    const auto r = analyze_evidence(ev, w.corpus, w.task, w.task_train, w.synonyms, div, cfg_.model.special());
    io::write_text_atomic(dir / "analysis.json", analysis_to_json(r, &w.vocab));
    io::write_text_atomic(dir / "sources.csv", sources_csv(r));
    io::write_text_atomic(dir / "tokens.csv", tokens_csv(r, cfg_.top_tokens, &w.vocab));
    io::write_text_atomic(dir / "divergence.csv", divergence_csv(r));
    return {};
  }

  const ExperimentConfig& cfg_;
  const RunOptions& opts_;
  fs::path out_;
  std::string keys_data_, keys_pretrain_, keys_tune_;
  std::optional<Workbench> bench_;
};

}  // namespace

void run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  Pipeline(cfg, opts).run();
}

// ---------------------------------------------------------------- report

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << std::fixed << v;
  return os.str();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

json require(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) throw DataError("missing artifact of stage " + stage + ": " + p.string());
  return read_json(p);
}

}  // namespace

void emit_report(const fs::path& dir) {
  const fs::path cfg_path = dir / "config.json";
  if (!fs::exists(cfg_path)) throw DataError("no run artifacts in '" + dir.string() + "' (config.json missing)");
  const json cfg = read_json(cfg_path);
  const json pre = require(dir / "model" / "pretrain.manifest.json", "pretrain");

  ordered_json summary;
  summary["version"] = std::string(kVersion);
  summary["divergence_proxy"] = kDivergenceProxy;
  summary["filter_id"] = cfg.at("selection").at("filter_id");
  summary["model"] = {{"parameters", pre.at("details").at("parameters")},
                      {"vocab_size", pre.at("details").at("vocab_size")}};
  summary["config"] = ordered_json::parse(io::read_text(cfg_path));

  std::string csv =
      "method,runs,seeds,evidence_size,mean_acc_original,mean_acc_boosted,mean_q,std_q,"
      "mean_verbalizer_exact_fraction,filter_id,m,per_iter,boost_lr,boost_batch_size\n";
  ordered_json rows = ordered_json::array();
  const auto seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& mname : cfg.at("methods").get<std::vector<std::string>>()) {
    const Method m = method_from_string(mname);
    ordered_json row;
    row["method"] = mname;
    row["runs"] = seeds.size();
    std::vector<double> acc_o, acc_b, q, verb;
    std::map<std::string, std::vector<double>> src, divs;
    std::map<std::size_t, std::vector<double>> traj;
    ordered_json per_seed = ordered_json::array();
    std::size_t size = 0;
    for (std::uint64_t s : seeds) {
      const fs::path sd = seed_dir(dir, m, s);
      const json e = require(sd / "eval.json", "eval");
      ordered_json ps{{"seed", s}, {"acc_original", e.at("acc_original")}};
      acc_o.push_back(e.at("acc_original").get<double>());
      if (m != Method::kNull) {
        const double ao = e.at("acc_original").get<double>();
        const double ab = e.at("acc_boosted").get<double>();
        acc_b.push_back(ab);
        q.push_back(ab - ao);
        ps["acc_boosted"] = ab;
        ps["q"] = ab - ao;
        ps["updates"] = e.at("updates");
        size = e.at("evidence_size").get<std::size_t>();
        for (const auto& p : e.at("trajectory")) {
          traj[p.at("prefix_size").get<std::size_t>()].push_back(p.at("accuracy").get<double>());
        }
        const json a = require(sd / "analysis.json", "analyze");
        for (const auto& [name, v] : a.at("sources").items()) src[name].push_back(v.at("fraction").get<double>());
        verb.push_back(a.at("masked_tokens").at("verbalizer_exact_fraction").get<double>());
        ps["verbalizer_exact_fraction"] = a.at("masked_tokens").at("verbalizer_exact_fraction");
        for (const auto& [w, v] : a.at("divergence").at("scores").items()) divs[w].push_back(v.get<double>());
      }
      per_seed.push_back(ps);
    }
    row["evidence_size"] = size;
    row["mean_acc_original"] = mean_of(acc_o);
    if (m != Method::kNull) {
      row["mean_acc_boosted"] = mean_of(acc_b);
      row["mean_q"] = mean_of(q);
      row["std_q"] = sample_std(q);
      ordered_json tj = ordered_json::array();
      for (const auto& [n, v] : traj) tj.push_back({{"prefix_size", n}, {"mean_accuracy", mean_of(v)}});
      row["trajectory"] = tj;
      ordered_json sj;
      for (const auto& [name, v] : src) sj[name] = mean_of(v);
      row["mean_source_fractions"] = sj;
      row["mean_verbalizer_exact_fraction"] = mean_of(verb);
      ordered_json dj;
      for (const auto& [w, v] : divs) dj[w] = mean_of(v);
      row["mean_divergence"] = dj;
    }
    row["per_seed"] = per_seed;
    rows.push_back(row);

    std::string seed_list;
    for (std::size_t i = 0; i < seeds.size(); ++i) seed_list += (i ? ";" : "") + std::to_string(seeds[i]);
    csv += mname + "," + std::to_string(seeds.size()) + "," + seed_list + "," + std::to_string(size) + "," +
           num(mean_of(acc_o)) + ",";
    if (m != Method::kNull) {
      csv += num(mean_of(acc_b)) + "," + num(mean_of(q)) + "," + num(sample_std(q)) + "," + num(mean_of(verb));
    } else {
      csv += ",,,";
    }
    const json& sel = cfg.at("selection");
    const json& bst = cfg.at("boost");
    std::ostringstream lr;
    lr << bst.at("learning_rate").get<double>();
    csv += "," + sel.at("filter_id").get<std::string>() + "," + std::to_string(sel.at("m").get<int>()) + "," +
           std::to_string(sel.at("per_iter").get<int>()) + "," + lr.str() + "," +
           std::to_string(bst.at("batch_size").get<int>()) + "\n";
  }
  summary["methods"] = rows;
  io::write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
  io::write_text_atomic(dir / "summary.csv", csv);
}

}  // namespace orca
