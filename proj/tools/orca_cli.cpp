// Command-line driver for the staged attribution pipeline.
//
// Exit codes: 0 success, 1 configuration error, 2 stage failure.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "orca/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string methods;
  std::string seeds;
  int workers = 0;
  std::vector<std::string> overrides;
  bool force = false;
  bool quiet = false;
};

std::string json_list(const std::string& csv, bool quote) {
  std::string out = "[";
  std::stringstream ss(csv);
  std::string item;
  bool first = true;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out += first ? "" : ",";
    out += quote ? "\"" + item + "\"" : item;
    first = false;
  }
  return out + "]";
}

// Named flags become overrides applied after the file and after --set, so
// they always win.
std::vector<std::string> overrides_of(const Common& c) {
  std::vector<std::string> o = c.overrides;
  if (!c.out.empty()) o.push_back("output_dir=\"" + c.out + "\"");
  if (!c.methods.empty()) o.push_back("methods=" + json_list(c.methods, true));
  if (!c.seeds.empty()) o.push_back("seeds=" + json_list(c.seeds, false));
  if (c.workers > 0) o.push_back("workers=" + std::to_string(c.workers));
  return o;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
  app->add_option("--methods", c.methods, "comma-separated methods (overrides methods)");
  app->add_option("--seeds", c.seeds, "comma-separated seeds (overrides seeds)");
  app->add_option("-j,--workers", c.workers, "worker threads (overrides workers)");
  app->add_option("--set", c.overrides, "override a config field, e.g. --set selection.m=5")->take_all();
  app->add_flag("--force", c.force, "re-run the requested stage even when up to date");
  app->add_flag("-q,--quiet", c.quiet, "no progress output");
}

int run(const Common& c, std::set<orca::Stage> targets, const char* require_data) {
  const auto cfg = orca::load_experiment_config(c.config, overrides_of(c));
  if (require_data != nullptr) {
    const bool synthetic = cfg.data.synthetic.has_value();
    if (std::string(require_data) == "synthetic" && !synthetic) {
      throw orca::ConfigError("gen-synthetic needs a 'data.synthetic' section");
    }
    if (std::string(require_data) == "files" && synthetic) {
      throw orca::ConfigError("expand works on 'data.corpus' inputs, not a synthetic corpus");
    }
  }
  orca::RunOptions opts;
  opts.targets = std::move(targets);
  opts.force = c.force;
  opts.log = c.quiet ? nullptr : &std::cerr;
  orca::run_pipeline(cfg, opts);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supporting-evidence selection for masked language models"};
  app.set_version_flag("--version", std::string(orca::kVersion));
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    orca::Stage stage;
    const char* require_data;
  };
  const std::vector<Sub> subs = {
      {"gen-synthetic", "generate the synthetic two-source corpus and task", orca::Stage::kData, "synthetic"},
      {"expand", "expand a document corpus into masked examples", orca::Stage::kData, "files"},
      {"pretrain", "pretrain the masked LM (or import a checkpoint)", orca::Stage::kPretrain, nullptr},
      {"tune-prompt", "tune the soft prompt on task training data", orca::Stage::kTune, nullptr},
      {"select", "select evidence for every method and seed", orca::Stage::kSelect, nullptr},
      {"boost", "continue pretraining on each evidence set", orca::Stage::kBoost, nullptr},
      {"eval", "evaluate original and boosted models", orca::Stage::kEval, nullptr},
      {"analyze", "source, masked-token and divergence analysis", orca::Stage::kAnalyze, nullptr},
  };
  std::vector<Common> opts(subs.size() + 1);
  std::vector<CLI::App*> apps;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    auto* a = app.add_subcommand(subs[i].name, subs[i].help);
    add_common(a, opts[i]);
    apps.push_back(a);
  }
  auto* run_app = app.add_subcommand("run", "run every stage and write the report");
  add_common(run_app, opts.back());

  std::string report_dir;
  auto* report_app = app.add_subcommand("report", "join per-seed artifacts into summary.json and summary.csv");
  report_app->add_option("dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (apps[i]->parsed()) return run(opts[i], {subs[i].stage}, subs[i].require_data);
    }
    if (run_app->parsed()) return run(opts.back(), {}, nullptr);
    if (report_app->parsed()) {
      orca::emit_report(report_dir);
      return 0;
    }
  } catch (const orca::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const orca::StageError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
