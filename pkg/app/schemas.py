"""
Pydantic Schemas Module

This module defines the Pydantic models that validate configuration and
serialise the records RecallChat reads and writes.

Schema Categories:
- Model: ModelKind and Dims (dimension presets)
- Training: TrainConfig
- Evaluation: EvalReport and its column layout
- Records: sample and corpus line formats
- Runs: RunManifest written next to every artifact

Features:
- Input validation before any computation starts
- Deterministic JSON serialisation of reports and manifests
- Type hints and default values
"""

from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.exceptions import ConfigurationError


# Model Schemas
class ModelKind(str, Enum):
    """Every trainable model family."""

    mlp = "mlp"
    mlp_kb = "mlp_kb"
    lstm = "lstm"
    lstm_kb = "lstm_kb"
    affinity_rnn = "affinity_rnn"
    affinity_lstm = "affinity_lstm"
    rlstm = "rlstm"

    @classmethod
    def _missing_(cls, value):
        aliases = {"affinity": "affinity_lstm", "mlp+kb": "mlp_kb", "lstm+kb": "lstm_kb", "r-lstm": "rlstm"}
        if isinstance(value, str) and value.lower() in aliases:
            return cls(aliases[value.lower()])
        return None

    @property
    def uses_kb(self) -> bool:
        return self in (ModelKind.mlp_kb, ModelKind.lstm_kb, ModelKind.rlstm)


class Dims(BaseModel):
    """
    Layer sizes of a model.

    Attributes:
        word_embed (int): word (or character) embedding size
        sentence (int): sentence encoder hidden size
        knowledge (int): attribute embedding size
        conversation (int): conversation layer hidden size
    """

    word_embed: int = Field(gt=0)
    sentence: int = Field(gt=0)
    knowledge: int = Field(gt=0)
    conversation: int = Field(gt=0)

    @classmethod
    def preset(cls, name: str) -> "Dims":
        if name not in DIMS_PRESETS:
            raise ConfigurationError(f"unknown dims preset {name!r}; choose from {sorted(DIMS_PRESETS)}")
        return cls(**DIMS_PRESETS[name])


DIMS_PRESETS: Dict[str, Dict[str, int]] = {
    "ubuntu": {"word_embed": 300, "sentence": 200, "knowledge": 200, "conversation": 200},
    "tieba": {"word_embed": 100, "sentence": 100, "knowledge": 100, "conversation": 100},
    "desk": {"word_embed": 16, "sentence": 16, "knowledge": 16, "conversation": 16},
}


# Training Schemas
class TrainConfig(BaseModel):
    """
    Everything a training run depends on.

    Attributes:
        model_kind (ModelKind): model family
        dims (Dims): layer sizes
        learning_rate (float): step size
        batch_size (int): samples per update
        max_epochs (int): epoch cap for early stopping
        optimizer (str): sgd, momentum or adagrad
        momentum (float): momentum coefficient
        seed (int): root of all randomness
        top_n (int): attributes summed into the knowledge vector
        max_turns (int): MLP slot count
        threads (int): worker cap, 0 for all cores
        lm_pretrain_epochs (int): sentence-encoder language-model pretraining epochs
        tokenization (str): word or char
        init_scale (float): half-width of the uniform initialisation of weights and embeddings
    """

    model_config = ConfigDict(protected_namespaces=())

    model_kind: ModelKind = ModelKind.rlstm
    dims: Dims = Field(default_factory=lambda: Dims.preset("desk"))
    learning_rate: float = Field(default=0.01, ge=0.0)
    batch_size: int = Field(default=32, gt=0)
    max_epochs: int = Field(default=10, gt=0)
    optimizer: str = "sgd"
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    seed: int = 1234
    top_n: int = Field(default=10, gt=0)
    max_turns: int = Field(default=8, gt=1)
    threads: int = Field(default=0, ge=0)
    lm_pretrain_epochs: int = Field(default=0, ge=0)
    tokenization: str = "word"
    init_scale: float = Field(default=0.1, gt=0.0)

    @field_validator("optimizer")
    @classmethod
    def check_optimizer(cls, value: str) -> str:
        if value not in ("sgd", "momentum", "adagrad"):
            raise ValueError(f"optimizer must be sgd, momentum or adagrad, got {value!r}")
        return value

    @field_validator("tokenization")
    @classmethod
    def check_tokenization(cls, value: str) -> str:
        if value not in ("word", "char"):
            raise ValueError(f"tokenization must be word or char, got {value!r}")
        return value

    @model_validator(mode="after")
    def check_dims(self) -> "TrainConfig":
        if self.model_kind == ModelKind.rlstm and self.dims.knowledge != self.dims.conversation:
            raise ValueError(
                f"rlstm needs knowledge dim == conversation dim, got {self.dims.knowledge} and {self.dims.conversation}")
        if self.model_kind == ModelKind.lstm_kb and self.dims.knowledge != self.dims.sentence:
            raise ValueError(
                f"lstm_kb needs knowledge dim == sentence dim, got {self.dims.knowledge} and {self.dims.sentence}")
        return self


# Evaluation Schemas
RECALL_INTERPRETATION = (
    "m in 10 R@k is read as 1 positive among 10 candidates ranked within the top k; "
    "1 in 2 R@1 pairs the positive with the first negative of its group"
)

REPORT_COLUMNS = ["Acc", "1 in 2 R@1", "1 in 10 R@1", "2 in 10 R@2", "3 in 10 R@3", "5 in 10 R@5"]


class EvalReport(BaseModel):
    """
    Accuracy and Recall@k over candidate groups.

    Attributes:
        accuracy (float): fraction of samples where (score >= 0.5) equals the label
        recall_at (Dict[str, float]): "1 in 2 R@1" and "1 in 10 R@k" for k in 1, 2, 3, 5
        group_ranks (Dict[str, int]): 1-based rank of the positive in each group
        samples (int): number of scored samples
        groups (int): number of groups
        run_id (Optional[str]): run that produced the report
    """

    accuracy: float = Field(ge=0.0, le=1.0)
    recall_at: Dict[str, float] = Field(default_factory=dict)
    group_ranks: Dict[str, int] = Field(default_factory=dict)
    samples: int = 0
    groups: int = 0
    interpretation: str = RECALL_INTERPRETATION
    run_id: Optional[str] = None

    def columns(self) -> Dict[str, Optional[float]]:
        """Values under the Acc / R@k column headers (None when the group size is absent)."""
        return {
            "Acc": self.accuracy,
            "1 in 2 R@1": self.recall_at.get("1 in 2 R@1"),
            "1 in 10 R@1": self.recall_at.get("1 in 10 R@1"),
            "2 in 10 R@2": self.recall_at.get("1 in 10 R@2"),
            "3 in 10 R@3": self.recall_at.get("1 in 10 R@3"),
            "5 in 10 R@5": self.recall_at.get("1 in 10 R@5"),
        }

    def to_text(self) -> str:
        """Line-delimited key=value block."""
        lines = [f"{key}={'' if value is None else format(value, '.4f')}" for key, value in self.columns().items()]
        lines.append(f"samples={self.samples}")
        lines.append(f"groups={self.groups}")
        lines.append(f"interpretation={self.interpretation}")
        if self.run_id:
            lines.append(f"run_id={self.run_id}")
        return "\n".join(lines) + "\n"

    def to_record(self) -> Dict:
        record = {"columns": self.columns(), "samples": self.samples, "groups": self.groups,
                  "interpretation": self.interpretation, "group_ranks": self.group_ranks}
        if self.run_id:
            record["run_id"] = self.run_id
        return record


# Record Schemas
class CorpusRecord(BaseModel):
    """One corpus line: {"utterances": [...]}."""

    utterances: List[str]


class SampleRecord(BaseModel):
    """One sample line."""

    context: List[str]
    query: str
    response: str
    label: int = Field(ge=0, le=1)
    group: str


# Run Schemas
class RunManifest(BaseModel):
    """
    Provenance of one command invocation.

    run_id hashes the command, config, input digests and seed only, so
    identical reruns produce identical ids.
    """

    run_id: str
    command: str
    config: Dict
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    seed: int
    versions: Dict[str, str] = Field(default_factory=dict)
    started_at: datetime
    finished_at: Optional[datetime] = None
    elapsed_seconds: Optional[float] = None
