"""Supporting-evidence selection for masked language models."""

from ._orca import (
    BoostConfig,
    ConfigError,
    Corpus,
    DataError,
    EvidenceEntry,
    EvidenceSet,
    KnnConfig,
    ModelConfig,
    ModelParams,
    PretrainExample,
    SelectionConfig,
    SelectionShortfall,
    StageError,
    Task,
    TaskExample,
    Vocabulary,
    __version__,
    analyze_evidence,
    baseline_knn,
    baseline_random,
    boost_model,
    cosine_sim,
    emit_report,
    evaluate_accuracy,
    jsd_similarity,
    load_checkpoint,
    load_vocab,
    orca_select,
    quality_q,
    resolve_config,
    run,
    save_checkpoint,
    score_corpus,
    task_reference,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]


class RunData:
    """Data and original model of a pipeline output directory."""

    def __init__(self, run_dir):
        import json
        from pathlib import Path

        root = Path(run_dir)
        data = root / "data"
        prompt = json.loads((data / "prompt.json").read_text())
        self.root = root
        self.vocab = load_vocab(data / "vocab.json")
        self.corpus = Corpus.load(data / "examples.jsonl")
        self.task = Task.load(data / "task.jsonl", prompt["template"], prompt["verbalizer"], self.vocab)
        self.params = load_checkpoint(root / "model" / "original.ckpt")

    def evidence(self, method, seed):
        return EvidenceSet.load(self.root / method / f"seed_{seed}" / "evidence.jsonl", self.corpus)


def load_run(run_dir):
    return RunData(run_dir)
