// Python bindings for the attribution toolkit.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "orca/experiment.hpp"
#include "orca/io.hpp"

namespace py = pybind11;
using namespace orca;

namespace {

py::array_t<double> to_numpy(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw ConfigError("expected a 1-d array");
  return std::vector<double>(a.data(), a.data() + a.size());
}

py::object loads(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

PromptedTask make_task(std::vector<TaskExample> examples, const std::vector<std::string>& pattern,
                       const std::vector<std::string>& verbalizer, const Vocabulary& vocab) {
  std::vector<TokenId> tokens;
  for (const auto& w : verbalizer) tokens.push_back(vocab.resolve(w));
  return PromptedTask{std::move(examples), Template::parse(pattern, vocab), Verbalizer(tokens)};
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["method"] = r.method;
  d["seed"] = r.seed;
  d["evidence_size"] = r.evidence_size;
  d["updates"] = r.updates;
  d["acc_original"] = r.acc_original;
  d["acc_boosted"] = r.acc_boosted;
  d["q"] = r.q;
  return d;
}

void set_optimizer(OptimizerConfig& o, const std::string& kind) { o.kind = optimizer_from_string(kind); }

}  // namespace

PYBIND11_MODULE(_orca, m) {
  m.doc() = "Supporting-evidence selection for masked language models";
  m.attr("__version__") = std::string(kVersion);

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<DataError> data_error(m, "DataError", PyExc_RuntimeError);
  static py::exception<SelectionShortfall> shortfall(m, "SelectionShortfall", PyExc_RuntimeError);
  static py::exception<StageError> stage_error(m, "StageError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const DataError& e) {
      py::set_error(data_error, e.what());
    } catch (const SelectionShortfall& e) {
      py::set_error(shortfall, e.what());
    } catch (const StageError& e) {
      py::set_error(stage_error, e.what());
    }
  });

  // ------------------------------------------------------------ model
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("context_len", &ModelConfig::context_len)
      .def_readwrite("dim", &ModelConfig::dim)
      .def_readwrite("ffn_dim", &ModelConfig::ffn_dim)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("rel_window", &ModelConfig::rel_window)
      .def_readwrite("prompt_len", &ModelConfig::prompt_len)
      .def_readwrite("pad_id", &ModelConfig::pad_id)
      .def_readwrite("mask_id", &ModelConfig::mask_id)
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; });

  py::class_<ModelParams>(m, "ModelParams")
      .def_static("random", &ModelParams::random, py::arg("config"), py::arg("seed"), py::arg("init_scale") = 0.02)
      .def_property_readonly("config", &ModelParams::config)
      .def("__len__", &ModelParams::size)
      .def("flat", [](const ModelParams& p) { return to_numpy(std::vector<double>(p.flat().begin(), p.flat().end())); },
           "Copy of the flat parameter vector.")
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def("load_checkpoint", [](const std::filesystem::path& p) { return io::load_checkpoint(p); }, py::arg("path"));
  m.def("save_checkpoint", &io::save_checkpoint, py::arg("path"), py::arg("params"));

  // ------------------------------------------------------------ corpus
  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<std::vector<std::string>>(), py::arg("tokens"))
      .def("__len__", &Vocabulary::size)
      .def("token", &Vocabulary::token, py::arg("id"))
      .def("resolve", &Vocabulary::resolve, py::arg("token"))
      .def_property_readonly("tokens", &Vocabulary::tokens);
  m.def("load_vocab", &io::load_vocab, py::arg("path"));

  py::class_<PretrainExample>(m, "PretrainExample")
      .def_readonly("id", &PretrainExample::id)
      .def_readonly("doc_id", &PretrainExample::doc_id)
      .def_readonly("source", &PretrainExample::source)
      .def_readonly("context", &PretrainExample::context)
      .def_readonly("masked_position", &PretrainExample::masked_position)
      .def_readonly("masked_token", &PretrainExample::masked_token);

  py::class_<TaskExample>(m, "TaskExample")
      .def_readonly("id", &TaskExample::id)
      .def_readonly("slots", &TaskExample::slots)
      .def_readonly("label", &TaskExample::label);

  py::class_<CorpusIndex>(m, "Corpus")
      .def_static("load", [](const std::filesystem::path& p) { return CorpusIndex(io::load_examples(p)); },
                  py::arg("examples_jsonl"))
      .def("__len__", &CorpusIndex::size)
      .def("__getitem__",
           [](const CorpusIndex& c, std::size_t i) {
             if (i >= c.size()) throw py::index_error();
             return c[static_cast<ExampleIndex>(i)];
           })
      .def("index_of", &CorpusIndex::index_of, py::arg("id"));

  py::class_<PromptedTask>(m, "Task")
      .def_static("load", [](const std::filesystem::path& tasks, const std::vector<std::string>& pattern,
                             const std::vector<std::string>& verbalizer,
                             const Vocabulary& vocab) { return make_task(io::load_tasks(tasks), pattern, verbalizer, vocab); },
                  py::arg("task_jsonl"), py::arg("template"), py::arg("verbalizer"), py::arg("vocab"))
      .def("__len__", [](const PromptedTask& t) { return t.examples.size(); })
      .def_property_readonly("examples", [](const PromptedTask& t) { return t.examples; });

  // ------------------------------------------------------------ evidence
  py::class_<EvidenceEntry>(m, "EvidenceEntry")
      .def_readonly("index", &EvidenceEntry::index)
      .def_readonly("example_id", &EvidenceEntry::example_id)
      .def_readonly("iteration", &EvidenceEntry::iteration)
      .def_readonly("score", &EvidenceEntry::score);

  py::class_<EvidenceSet>(m, "EvidenceSet")
      .def(py::init<>())
      .def_static("load", &io::load_evidence, py::arg("path"), py::arg("corpus"))
      .def("save", [](const EvidenceSet& e, const std::filesystem::path& p) { io::save_evidence(p, e); })
      .def("__len__", &EvidenceSet::size)
      .def_readonly("entries", &EvidenceSet::entries)
      .def_readonly("method", &EvidenceSet::method)
      .def_readonly("backend", &EvidenceSet::backend)
      .def_readonly("lagging", &EvidenceSet::lagging)
      .def("indices", &EvidenceSet::indices)
      .def("multiplicity", &EvidenceSet::multiplicity)
      .def("__eq__", [](const EvidenceSet& a, const EvidenceSet& b) { return a == b; });

  // ------------------------------------------------------------ configs
  py::class_<SelectionConfig>(m, "SelectionConfig")
      .def(py::init<>())
      .def_readwrite("m", &SelectionConfig::m)
      .def_readwrite("per_iter", &SelectionConfig::per_iter)
      .def_property(
          "lagging", [](const SelectionConfig& c) { return to_string(c.lagging); },
          [](SelectionConfig& c, const std::string& s) { c.lagging = lagging_from_string(s); })
      .def_property(
          "backend", [](const SelectionConfig& c) { return to_string(c.backend); },
          [](SelectionConfig& c, const std::string& s) { c.backend = backend_from_string(s); })
      .def_readwrite("filter_id", &SelectionConfig::filter_id)
      .def_readwrite("replacement", &SelectionConfig::replacement)
      .def_readwrite("seed", &SelectionConfig::seed)
      .def_readwrite("task_subsample", &SelectionConfig::task_subsample)
      .def_readwrite("workers", &SelectionConfig::workers);

  py::class_<BoostConfig>(m, "BoostConfig")
      .def(py::init<>())
      .def_readwrite("batch_size", &BoostConfig::batch_size)
      .def_readwrite("seed", &BoostConfig::seed)
      .def_readwrite("workers", &BoostConfig::workers)
      .def_property(
          "optimizer", [](const BoostConfig& c) { return to_string(c.optimizer.kind); },
          [](BoostConfig& c, const std::string& s) { set_optimizer(c.optimizer, s); })
      .def_property(
          "learning_rate", [](const BoostConfig& c) { return c.optimizer.learning_rate; },
          [](BoostConfig& c, double lr) { c.optimizer.learning_rate = lr; });

  py::class_<KnnConfig>(m, "KnnConfig")
      .def(py::init<>())
      .def_readwrite("t", &KnnConfig::t)
      .def_readwrite("k", &KnnConfig::k)
      .def_readwrite("max_r", &KnnConfig::max_r)
      .def_readwrite("size", &KnnConfig::size)
      .def_readwrite("seed", &KnnConfig::seed)
      .def_readwrite("workers", &KnnConfig::workers);

  // ------------------------------------------------------------ attribution
  m.def("cosine_sim", [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
                         py::array_t<double, py::array::c_style | py::array::forcecast> b) {
    return cosine_sim(from_numpy(a), from_numpy(b));
  }, py::arg("a"), py::arg("b"), "Cosine similarity; -inf when either vector is zero.");

  m.def("task_reference", [](const ModelParams& p, const PromptedTask& t, const std::string& backend,
                             const std::string& filter_id, int workers) {
    return to_numpy(task_reference(p, t, backend_from_string(backend), filter_id, workers).vector);
  }, py::arg("params"), py::arg("task"), py::arg("backend") = "gradient", py::arg("filter_id") = "lm",
     py::arg("workers") = 1);

  m.def("score_corpus", [](const CorpusIndex& c, const ModelParams& p,
                           py::array_t<double, py::array::c_style | py::array::forcecast> ref, const std::string& backend,
                           const std::string& filter_id, int workers) {
    TaskReference r{backend_from_string(backend), filter_id, from_numpy(ref)};
    return to_numpy(score_corpus(c, p, r, workers));
  }, py::arg("corpus"), py::arg("params"), py::arg("reference"), py::arg("backend") = "gradient",
     py::arg("filter_id") = "lm", py::arg("workers") = 1);

  m.def("orca_select", [](const CorpusIndex& c, const PromptedTask& t, const ModelParams& p, const SelectionConfig& s,
                          const BoostConfig& b) {
    auto r = orca_select(c, t, p, s, b);
    return py::make_tuple(std::move(r.evidence), std::move(r.boosted));
  }, py::arg("corpus"), py::arg("task"), py::arg("params"), py::arg("selection"), py::arg("boost"),
     "Returns (evidence, boosted model after the last iteration).");

  m.def("baseline_random", &baseline_random, py::arg("corpus"), py::arg("size"), py::arg("seed"));
  m.def("baseline_knn", [](const CorpusIndex& c, const PromptedTask& t, const ModelParams& p, const KnnConfig& k) {
    auto r = baseline_knn(c, t, p, k);
    return py::make_tuple(std::move(r.evidence), std::move(r.pool));
  }, py::arg("corpus"), py::arg("task"), py::arg("params"), py::arg("knn"), "Returns (evidence, candidate pool).");

  // ------------------------------------------------------------ boost
  m.def("boost_model", [](const ModelParams& p, const EvidenceSet& e, const CorpusIndex& c, const BoostConfig& b) {
    auto r = boost_model(p, e, c, b);
    return py::make_tuple(std::move(r.params), r.updates);
  }, py::arg("params"), py::arg("evidence"), py::arg("corpus"), py::arg("boost"), "Returns (params, updates).");
  m.def("evaluate_accuracy", &evaluate_accuracy, py::arg("params"), py::arg("task"), py::arg("workers") = 1);
  m.def("quality_q", [](const ModelParams& p, const EvidenceSet& e, const CorpusIndex& c, const PromptedTask& t,
                        const BoostConfig& b) { return report_dict(quality_q(p, e, c, t, b)); },
        py::arg("params"), py::arg("evidence"), py::arg("corpus"), py::arg("task"), py::arg("boost"));

  // ------------------------------------------------------------ analysis
  m.def("jsd_similarity", &jsd_similarity, py::arg("a"), py::arg("b"), py::arg("epsilon") = kDivergenceEpsilon);
  m.def("analyze_evidence", [](const EvidenceSet& e, const CorpusIndex& c, const PromptedTask& t,
                               const std::vector<int>& windows, int sample_size, std::uint64_t seed) {
    DivergenceConfig d;
    d.windows = windows;
    d.sample_size = sample_size;
    d.seed = seed;
    return loads(analysis_to_json(analyze_evidence(e, c, t, {}, {}, d)));
  }, py::arg("evidence"), py::arg("corpus"), py::arg("task"), py::arg("windows") = std::vector<int>{8, 16, 32, 0},
     py::arg("sample_size") = 0, py::arg("seed") = 0);

  // ------------------------------------------------------------ pipeline
  m.def("resolve_config", [](const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    return loads(config_to_json(load_experiment_config(path, overrides)));
  }, py::arg("path"), py::arg("overrides") = std::vector<std::string>{}, "Config with overrides and defaults applied.");

  m.def("run", [](const std::filesystem::path& path, const std::vector<std::string>& overrides,
                  const std::vector<std::string>& stages, bool force) {
    const auto cfg = load_experiment_config(path, overrides);
    RunOptions opts;
    for (const auto& s : stages) opts.targets.insert(stage_from_string(s));
    opts.force = force;
    py::gil_scoped_release release;
    run_pipeline(cfg, opts);
  }, py::arg("config"), py::arg("overrides") = std::vector<std::string>{},
     py::arg("stages") = std::vector<std::string>{}, py::arg("force") = false,
     "Runs the staged pipeline; an empty stage list runs everything.");

  m.def("emit_report", &emit_report, py::arg("dir"));
}
