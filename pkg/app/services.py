"""
Service Layer Module

This module provides the pipelines behind every command. Command modules
parse flags and call into this layer; this layer reads inputs, runs the
numeric library, writes artifacts and records each run.

Service Categories:
- Runs: run ids, manifests and the SQLAlchemy run ledger
- Knowledge: knowledge-base extraction
- Data: dataset construction and the synthetic knowledge task
- Models: training, evaluation, scoring, benchmarking
- Verification: gradient checks
"""

import hashlib
import json
import logging
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from sqlalchemy.exc import SQLAlchemyError

from app import __version__, models
from app.config import Settings, write_config_file
from app.database import session_scope
from app.exceptions import ConfigurationError, DivergenceError, InputError
from app.ml.checkpoint import load_checkpoint, save_checkpoint
from app.ml.conversation import ConversationModel
from app.ml.data import (
    ConversationSample,
    build_samples,
    context_stats,
    filter_turns,
    load_corpus,
    make_synthetic_task,
    read_documents,
    read_samples,
    response_attribute,
    split_corpus,
    turn_histogram,
    write_corpus,
    write_documents,
    write_samples,
)
from app.ml.embeddings import build_vocabulary, load_text_embeddings, tokenize
from app.ml.encoder import LSTMParams, lm_pretrain
from app.ml.gradcheck import GradcheckReport, run_gradcheck
from app.ml.knowledge import KnowledgeBase, count_pairs, extract_terms
from app.ml.mathcore import Rng
from app.ml.training import TrainingHistory, evaluate, train, worker_count
from app.schemas import REPORT_COLUMNS, EvalReport, ModelKind, RunManifest, TrainConfig

logger = logging.getLogger(__name__)

# Settings under which the synthetic task is learnt; make-synthetic writes them to train.conf
SYNTHETIC_RECIPE = {
    "optimizer": "adagrad",
    "learning_rate": 0.05,
    "batch_size": 8,
    "max_epochs": 12,
    "init_scale": 0.5,
}


# Runs
def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def compute_run_id(command: str, config: Mapping, input_digests: Mapping[str, str], seed: int) -> str:
    """SHA-256 of the canonical JSON of (command, config, input digests, seed)."""
    canonical = json.dumps({"command": command, "config": config, "inputs": input_digests, "seed": seed},
                           sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def versions() -> Dict[str, str]:
    return {"python": platform.python_version(), "numpy": np.__version__, "recallchat": __version__}


class RunRecorder:
    """
    Tracks one command invocation and writes its manifest.

    Attributes:
        run_id (str): deterministic id of the run
    """

    def __init__(self, command: str, config: Mapping, inputs: Mapping[str, Optional[str]], seed: int,
                 ledger_url: str = ""):
        for label, path in inputs.items():
            if path is not None and not Path(path).is_file():
                raise InputError(f"cannot read {label} {path}: no such file")
        self.command = command
        self.config = dict(config)
        self.seed = seed
        self.ledger_url = ledger_url
        self.input_paths = {label: str(path) for label, path in inputs.items() if path is not None}
        self.digests = {label: sha256_file(path) for label, path in self.input_paths.items()}
        self.run_id = compute_run_id(command, self.config, self.digests, seed)
        self.started_at = datetime.now(timezone.utc)

    def finish(self, outputs: Sequence) -> RunManifest:
        """Write `<first output>.manifest.json` and record the run in the ledger."""
        finished_at = datetime.now(timezone.utc)
        manifest = RunManifest(
            run_id=self.run_id,
            command=self.command,
            config=self.config,
            inputs=self.digests,
            outputs=[str(p) for p in outputs],
            seed=self.seed,
            versions=versions(),
            started_at=self.started_at,
            finished_at=finished_at,
            elapsed_seconds=(finished_at - self.started_at).total_seconds(),
        )
        if outputs:
            manifest_path = Path(f"{outputs[0]}.manifest.json")
            manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
            logger.info("Manifest written to %s", manifest_path)
        record_run(manifest, self.input_paths, self.ledger_url)
        return manifest


def record_run(manifest: RunManifest, input_paths: Mapping[str, str], ledger_url: str) -> None:
    """Store a manifest in the run ledger; ledger failures are logged, not raised."""
    if not ledger_url:
        return
    try:
        with session_scope(ledger_url) as db:
            run = models.Run(
                run_id=manifest.run_id,
                command=manifest.command,
                seed=manifest.seed,
                config_json=json.dumps(manifest.config, sort_keys=True, default=str),
                versions_json=json.dumps(manifest.versions, sort_keys=True),
                started_at=manifest.started_at,
                finished_at=manifest.finished_at,
                elapsed_seconds=manifest.elapsed_seconds,
            )
            for label, digest in manifest.inputs.items():
                run.inputs.append(models.RunInput(name=label, path=input_paths.get(label), sha256=digest))
            for path in manifest.outputs:
                run.artifacts.append(models.RunArtifact(path=path))
            db.add(run)
    except SQLAlchemyError as exc:
        logger.warning("Run ledger unavailable (%s); manifest file kept", exc)


def ledger_runs(ledger_url: str, run_id: Optional[str] = None) -> List[Dict]:
    """Runs stored in the ledger, oldest first, optionally for one run id."""
    with session_scope(ledger_url) as db:
        query = db.query(models.Run)
        if run_id:
            query = query.filter(models.Run.run_id == run_id)
        return [
            {
                "run_id": run.run_id,
                "command": run.command,
                "seed": run.seed,
                "inputs": {i.name: i.sha256 for i in run.inputs},
                "artifacts": [a.path for a in run.artifacts],
            }
            for run in query.order_by(models.Run.id).all()
        ]


# Knowledge
def extract_knowledge_base(domain_path, general_path, out_path, settings: Settings) -> KnowledgeBase:
    """
    Build the loose-structured knowledge base and write it as TSV.

    Args:
        domain_path: Domain corpus, one document per line
        general_path: General corpus, one document per line
        out_path: Output TSV
        settings: window, top_terms, min_count, threads, tokenization

    Returns:
        KnowledgeBase: the written pairs
    """
    config = {"window": settings.window, "top_terms": settings.top_terms, "min_count": settings.min_count,
              "tokenization": settings.tokenization}
    run = RunRecorder("kb-extract", config, {"domain_corpus": domain_path, "general_corpus": general_path},
                      settings.seed, settings.run_ledger_url)
    domain = read_documents(domain_path, settings.tokenization)
    general = read_documents(general_path, settings.tokenization)
    terms, _ = extract_terms(domain, general, settings.top_terms)
    kb = count_pairs(domain, terms, window=settings.window, workers=worker_count(settings.threads))
    kb = kb.filter_min_count(settings.min_count)
    kb.to_tsv(out_path, run_id=run.run_id)
    logger.info("Knowledge base: %d terms, %d pairs, %d entities written to %s",
                len(terms), len(kb), len(kb.entities), out_path)
    run.finish([out_path])
    return kb


def load_knowledge_base(kb_path) -> Optional[KnowledgeBase]:
    if kb_path is None:
        return None
    if not Path(kb_path).is_file():
        raise InputError(f"cannot read knowledge base {kb_path}: no such file")
    return KnowledgeBase.from_tsv(kb_path)


# Data
def build_dataset(corpus_path, out_dir, settings: Settings, min_turns: int = 3, max_turns: int = 7,
                  valid_fraction: float = 0.1, test_fraction: float = 0.1, strict: bool = True) -> Dict[str, Path]:
    """
    Filter a corpus by turn count, split it and write train/valid/test sample files.

    Returns:
        Dict[str, Path]: sample file per split
    """
    config = {"min_turns": min_turns, "max_turns": max_turns, "valid_fraction": valid_fraction,
              "test_fraction": test_fraction, "tokenization": settings.tokenization}
    run = RunRecorder("build-dataset", config, {"corpus": corpus_path}, settings.seed, settings.run_ledger_url)
    conversations = filter_turns(load_corpus(corpus_path, settings.tokenization, strict=strict), min_turns, max_turns)
    logger.info("Context statistics: %s", context_stats(conversations))
    rng = Rng(settings.seed)
    splits = split_corpus(conversations, rng.derive(10), valid_fraction, test_fraction)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for n, (split, convs) in enumerate(splits.items()):
        samples = build_samples(convs, split, rng.derive(20 + n), threads=worker_count(settings.threads))
        paths[split] = out_dir / f"{split}.jsonl"
        write_samples(samples, paths[split], settings.tokenization)
    stats_path = out_dir / "stats.json"
    stats_path.write_text(json.dumps({
        "turn_histogram": {str(k): v for k, v in turn_histogram(conversations).items()},
        "context": context_stats(conversations),
        "run_id": run.run_id,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    run.finish([paths["train"], paths["valid"], paths["test"], stats_path])
    return paths


def make_synthetic(out_dir, settings: Settings, conversations: int = 2000, entities: int = 400,
                   attributes: int = 20) -> Dict[str, Path]:
    """
    Write the synthetic knowledge task: domain.txt, general.txt, the
    conversation corpus, train/valid/test sample files (plus a 1:1
    test_balanced file for accuracy trends) and train.conf, the settings
    file to train on them with.

    A candidate ending in the positive's attribute is never drawn as a
    negative, since it fits the conversation as well.
    """
    config = {"conversations": conversations, "entities": entities, "attributes": attributes}
    run = RunRecorder("make-synthetic", config, {}, settings.seed, settings.run_ledger_url)
    rng = Rng(settings.seed)
    task = make_synthetic_task(rng.derive(1), conversations=conversations, entities=entities, attributes=attributes)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"domain": out_dir / "domain.txt", "general": out_dir / "general.txt", "corpus": out_dir / "corpus.jsonl"}
    write_documents(task.domain_corpus, paths["domain"])
    write_documents(task.general_corpus, paths["general"])
    write_corpus([c for convs in task.splits.values() for c in convs], paths["corpus"])
    for n, (split, convs) in enumerate(task.splits.items()):
        paths[split] = out_dir / f"{split}.jsonl"
        write_samples(build_samples(convs, split, rng.derive(20 + n), answer_key=response_attribute), paths[split])
    paths["test_balanced"] = out_dir / "test_balanced.jsonl"
    write_samples(build_samples(task.splits["test"], "train", rng.derive(30), answer_key=response_attribute),
                  paths["test_balanced"])
    paths["config"] = write_config_file(out_dir / "train.conf", SYNTHETIC_RECIPE,
                                        header=f"training settings for the synthetic task, run_id={run.run_id}")
    run.finish(list(paths.values()))
    return paths


def holdout_groups(samples: Sequence[ConversationSample], rng: Rng, fraction: float = 0.1
                   ) -> Tuple[List[ConversationSample], List[ConversationSample]]:
    """Split samples by group: a seeded `fraction` of groups becomes the validation set."""
    groups = sorted({s.group_id for s in samples})
    if len(groups) < 2:
        raise ConfigurationError("need at least 2 sample groups to hold out a validation set")
    n_valid = max(1, int(round(len(groups) * fraction)))
    valid_ids = {groups[k] for k in rng.permutation(len(groups))[:n_valid]}
    train_part = [s for s in samples if s.group_id not in valid_ids]
    valid_part = [s for s in samples if s.group_id in valid_ids]
    return train_part, valid_part


# Models
def fit_model(config: TrainConfig, train_samples: Sequence[ConversationSample],
              valid_samples: Sequence[ConversationSample], kb: Optional[KnowledgeBase],
              embeddings_path=None) -> Tuple[ConversationModel, TrainingHistory]:
    """
    Build, optionally pretrain, and train a model of config.model_kind.

    The word vocabulary covers the training samples; the attribute
    vocabulary covers every attribute of the knowledge base.
    """
    rng = Rng(config.seed)
    streams = [u for s in train_samples for u in list(s.context) + [s.query, s.response]]
    word_vocab = build_vocabulary(streams)
    attr_vocab = build_vocabulary([kb.attributes]) if kb is not None else build_vocabulary([])
    if config.model_kind.uses_kb and (kb is None or len(kb) == 0):
        logger.warning("Model %s uses knowledge but the knowledge base is empty; kb vectors will be zero",
                       config.model_kind.value)
    table = None
    if embeddings_path is not None:
        table = load_text_embeddings(embeddings_path, word_vocab, config.dims.word_embed, rng.derive(5))
    model = ConversationModel(config.model_kind, config.dims, word_vocab, attr_vocab, rng.derive(6),
                              config.max_turns, init_scale=config.init_scale, word_table=table)

    if config.lm_pretrain_epochs > 0:
        if isinstance(model.encoder, LSTMParams):
            sentences = [s.response for s in train_samples if s.label == 1] + \
                        [u for s in train_samples if s.label == 1 for u in list(s.context) + [s.query]]
            model.encoder = lm_pretrain(model.encoder, model.word_table, word_vocab, sentences,
                                        config.lm_pretrain_epochs, learning_rate=0.1, rng=rng.derive(7))
        else:
            logger.warning("Language-model pretraining applies to the LSTM encoder only; skipped for %s",
                           config.model_kind.value)

    encoded_train = [model.encode(s, kb, config.top_n) for s in train_samples]
    encoded_valid = [model.encode(s, kb, config.top_n) for s in valid_samples]
    logger.info("Training %s on %d samples (%d validation), dims %s",
                config.model_kind.value, len(encoded_train), len(encoded_valid), config.dims.model_dump())
    return train(config, model, encoded_train, encoded_valid, rng=rng.derive(8))


def warn_irrelevant_flags(model_kind: ModelKind, top_n_given: bool, kb_given: bool) -> None:
    if not model_kind.uses_kb and top_n_given:
        logger.warning("--top-n has no effect on model %s", model_kind.value)
    if not model_kind.uses_kb and kb_given:
        logger.warning("Model %s does not use the knowledge base", model_kind.value)


def train_model(samples_path, kb_path, out_path, model_kind, settings: Settings, valid_path=None,
                embeddings_path=None) -> Tuple[ConversationModel, TrainingHistory]:
    """
    Train a model and write its checkpoint and loss history.

    Without a validation file, a seeded 10% of the training groups is held out.
    """
    config = settings.train_config(model_kind)
    run = RunRecorder("train", config.model_dump(mode="json"),
                      {"samples": samples_path, "kb": kb_path, "valid": valid_path, "embeddings": embeddings_path},
                      config.seed, settings.run_ledger_url)
    kb = load_knowledge_base(kb_path)
    samples = read_samples(samples_path, config.tokenization)
    if valid_path is not None:
        valid = read_samples(valid_path, config.tokenization)
    else:
        samples, valid = holdout_groups(samples, Rng(config.seed).derive(3))
    model, history = fit_model(config, samples, valid, kb, embeddings_path)
    save_checkpoint(model, config, out_path, run.run_id, history.as_dict())
    history_path = Path(f"{out_path}.history.json")
    history_path.write_text(json.dumps({**history.as_dict(), "run_id": run.run_id}, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    run.finish([out_path, history_path])
    return model, history


def write_report(report: EvalReport, out_prefix) -> Tuple[Path, Path]:
    """`<prefix>.txt` key=value block and `<prefix>.json` record."""
    text_path = Path(f"{out_prefix}.txt")
    json_path = Path(f"{out_prefix}.json")
    text_path.write_text(report.to_text(), encoding="utf-8")
    json_path.write_text(json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return text_path, json_path


def evaluate_checkpoint(checkpoint_path, samples_path, kb_path, out_prefix, settings: Settings) -> EvalReport:
    """Score grouped samples with a checkpoint and write the report files."""
    run = RunRecorder("eval", {"threads": settings.threads},
                      {"checkpoint": checkpoint_path, "samples": samples_path, "kb": kb_path},
                      settings.seed, settings.run_ledger_url)
    model, config, _ = load_checkpoint(checkpoint_path)
    kb = load_knowledge_base(kb_path)
    samples = read_samples(samples_path, config.tokenization)
    encoded = [model.encode(s, kb, config.top_n) for s in samples]
    report = evaluate(model, encoded, settings.threads)
    report.run_id = run.run_id
    for line in report.to_text().splitlines():
        logger.info("%s", line)
    paths = write_report(report, out_prefix)
    run.finish(list(paths))
    return report


def score_candidates(checkpoint_path, kb_path, context: Sequence[str], query: str,
                     candidates: Sequence[str]) -> List[Tuple[str, float]]:
    """
    Confidence of every candidate response for one context, best first
    (ties keep the given order).
    """
    if not candidates:
        raise InputError("at least one candidate response is required")
    model, config, _ = load_checkpoint(checkpoint_path)
    kb = load_knowledge_base(kb_path)
    level = config.tokenization
    scored = []
    for text in candidates:
        sample = ConversationSample(context=[tokenize(u, level) for u in context], query=tokenize(query, level),
                                    response=tokenize(text, level), label=0, group_id="score")
        scored.append((text, model.score(model.encode(sample, kb, config.top_n))))
    return sorted(scored, key=lambda item: -item[1])


def benchmark(train_path, valid_path, test_path, kb_path, out_prefix, settings: Settings,
              kinds: Optional[Sequence] = None) -> Dict[str, Dict[str, Optional[float]]]:
    """
    Train and evaluate several model kinds on one dataset.

    Returns:
        Dict[str, Dict[str, Optional[float]]]: Acc / R@k columns per model kind
    """
    kinds = [ModelKind(k) for k in (kinds or list(ModelKind))]
    configs = {kind: settings.train_config(kind) for kind in kinds}
    run = RunRecorder("benchmark", {k.value: c.model_dump(mode="json") for k, c in configs.items()},
                      {"train": train_path, "valid": valid_path, "test": test_path, "kb": kb_path},
                      settings.seed, settings.run_ledger_url)
    kb = load_knowledge_base(kb_path)
    train_samples = read_samples(train_path, settings.tokenization)
    valid_samples = read_samples(valid_path, settings.tokenization)
    test_samples = read_samples(test_path, settings.tokenization)
    table = {}
    for kind, config in configs.items():
        model, _ = fit_model(config, train_samples, valid_samples, kb)
        report = evaluate(model, [model.encode(s, kb, config.top_n) for s in test_samples], settings.threads)
        table[kind.value] = report.columns()
        logger.info("%s: %s", kind.value, report.columns())
    text_path = Path(f"{out_prefix}.txt")
    json_path = Path(f"{out_prefix}.json")
    text_path.write_text(format_table(table), encoding="utf-8")
    json_path.write_text(json.dumps({"run_id": run.run_id, "results": table}, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    run.finish([json_path, text_path])
    return table


def format_table(table: Mapping[str, Mapping[str, Optional[float]]]) -> str:
    header = ["Model"] + REPORT_COLUMNS
    rows = [" | ".join(header)]
    for kind, columns in table.items():
        cells = ["-" if columns.get(c) is None else f"{columns[c]:.4f}" for c in REPORT_COLUMNS]
        rows.append(" | ".join([kind] + cells))
    return "\n".join(rows) + "\n"


# Verification
def gradient_check(model_kind, seed: int, hidden: int = 8, seq_len: int = 4,
                   corrupt_block: Optional[str] = None) -> GradcheckReport:
    """Run a gradient check on a random small model of `model_kind`."""
    return run_gradcheck(ModelKind(model_kind), seed, hidden=hidden, seq_len=seq_len, corrupt_block=corrupt_block)


def require_passed(report: GradcheckReport) -> None:
    """Raise DivergenceError naming the worst block when a gradient check failed."""
    if not report.passed:
        raise DivergenceError(
            f"gradient check failed for {report.model_kind}: relative error {report.max_error:.3e} "
            f"in block {report.worst.name}", block=report.worst.name)
