#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "orca/analysis.hpp"
#include "orca/attribution.hpp"
#include "orca/boost.hpp"
#include "orca/synthetic.hpp"
#include "orca/training.hpp"

namespace orca {

enum class Method { kNull, kRandom, kKnn, kOrca, kOrcaNoLag, kOrcaEmbed };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct DataConfig {
  std::optional<SyntheticConfig> synthetic;
  std::uint64_t synthetic_seed = 0;
  // File inputs, used when `synthetic` is absent. `examples` skips expansion.
  std::string corpus;
  std::string examples;
  std::string vocab;
  std::string task;
  std::string task_train;
  double mask_rate = 0.15;
  std::uint64_t expand_seed = 0;
  // Prompt declarations; the synthetic generator supplies defaults.
  std::vector<std::string> template_pattern;
  std::vector<std::string> verbalizer;
  std::vector<std::vector<std::string>> synonyms;
};

struct ExperimentConfig {
  std::filesystem::path output_dir = "orca_run";
  std::vector<Method> methods{Method::kOrca};
  std::vector<std::uint64_t> seeds{0};
  int workers = 1;
  DataConfig data;
  ModelConfig model;  // vocab_size 0 = size of the vocabulary
  std::uint64_t init_seed = 0;
  double init_scale = 0.02;
  std::string checkpoint;  // pretrained model to start from instead of pretraining
  PretrainConfig pretrain;
  TuneConfig tune{0, 16, 1e-2, 0, 1};
  SelectionConfig selection;
  bool dump_scores = false;
  KnnConfig knn;
  BoostConfig boost;
  std::vector<std::size_t> trajectory;  // prefix sizes; empty = quartiles of |S|
  DivergenceConfig divergence;
  std::size_t top_tokens = 20;

  std::size_t evidence_size() const {
    return static_cast<std::size_t>(selection.m) * static_cast<std::size_t>(selection.per_iter);
  }
  void validate() const;
};

// Parses a JSON config. Each override is "dotted.path=value", where value is
// read as JSON when it parses and as a string otherwise. Overrides are
// applied on top of the file. Errors name the offending field.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::vector<std::string>& overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});
// Every setting with defaults filled in, as pretty JSON.
std::string config_to_json(const ExperimentConfig& cfg);

enum class Stage { kData, kPretrain, kTune, kSelect, kBoost, kEval, kAnalyze, kReport };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

// A stage raised an error; its partial outputs and a FAILED marker remain.
class StageError : public std::runtime_error {
 public:
  StageError(Stage stage, const std::string& what)
      : std::runtime_error("stage " + to_string(stage) + " failed: " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct RunOptions {
  std::set<Stage> targets;  // empty = every stage; prerequisites always run
  bool force = false;       // ignore manifests of the targeted stages
  std::ostream* log = nullptr;
};

// Runs the staged pipeline into cfg.output_dir. A stage whose manifest key
// matches and whose outputs exist is skipped, so re-runs resume.
void run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Joins per-seed artifacts into summary.json and summary.csv under `dir`.
void emit_report(const std::filesystem::path& dir);

// Layout of a run directory.
std::filesystem::path seed_dir(const std::filesystem::path& out, Method m, std::uint64_t seed);

// Seeds derived from a run seed.
inline std::uint64_t selection_seed(std::uint64_t s) { return mix_seed(s, 1); }
inline std::uint64_t boost_seed(std::uint64_t s) { return mix_seed(s, 2); }
inline std::uint64_t analysis_seed(std::uint64_t s) { return mix_seed(s, 3); }

}  // namespace orca
