"""
Checkpoint Module

Model persistence as a manifest of named parameter blocks. Each block is
stored as name, rows, cols and its row-major float64 values; the training
configuration, both vocabularies and the producing run id are embedded.
Output is canonical JSON (sorted keys, shortest round-trip floats), so
identical training runs write byte-identical files.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from app.exceptions import FormatError, InputError, ShapeError
from app.ml.conversation import ConversationModel
from app.ml.embeddings import Vocabulary
from app.ml.mathcore import DTYPE, Rng
from app.schemas import TrainConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _block_shape(arr: np.ndarray) -> Tuple[int, int]:
    return (arr.shape[0], arr.shape[1]) if arr.ndim == 2 else (arr.shape[0], 1)


def checkpoint_payload(model: ConversationModel, config: TrainConfig, run_id: Optional[str] = None,
                       history: Optional[Dict] = None) -> Dict:
    blocks = []
    for name, arr in model.state_blocks().items():
        rows, cols = _block_shape(arr)
        blocks.append({"name": name, "rows": rows, "cols": cols, "values": arr.ravel().tolist()})
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config.model_dump(mode="json"),
        "word_vocab": model.word_vocab.to_list(),
        "attr_vocab": model.attr_vocab.to_list(),
        "word_trainable": model.word_table.trainable,
        "run_id": run_id,
        "blocks": blocks,
    }
    if history is not None:
        payload["history"] = history
    return payload


def save_checkpoint(model: ConversationModel, config: TrainConfig, path, run_id: Optional[str] = None,
                    history: Optional[Dict] = None) -> None:
    """Write the model as canonical JSON."""
    text = json.dumps(checkpoint_payload(model, config, run_id, history), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")
    logger.info("Checkpoint written to %s", path)


def load_checkpoint(path) -> Tuple[ConversationModel, TrainConfig, Optional[str]]:
    """
    Rebuild a model from a checkpoint, verifying every block shape.

    Returns:
        Tuple[ConversationModel, TrainConfig, Optional[str]]: model, its config and the producing run id

    Raises:
        InputError: If the file cannot be read
        FormatError: If the JSON, the version or the block list is invalid
        ShapeError: If a block does not match the shape its config implies (names the block)
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"cannot read checkpoint {path}: no such file")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {payload.get('format_version')!r}")
    try:
        config = TrainConfig.model_validate(payload["config"])
        word_vocab = Vocabulary.from_list(payload["word_vocab"])
        attr_vocab = Vocabulary.from_list(payload["attr_vocab"])
        stored = {b["name"]: b for b in payload["blocks"]}
    except (KeyError, TypeError, ValidationError, ValueError) as exc:
        raise FormatError(f"checkpoint {path} is incomplete: {exc}") from exc

    model = ConversationModel(config.model_kind, config.dims, word_vocab, attr_vocab, Rng(0), config.max_turns)
    model.word_table.trainable = bool(payload.get("word_trainable", True))
    for name, arr in model.state_blocks().items():
        if name not in stored:
            raise FormatError(f"checkpoint has no block {name}")
        block = stored[name]
        if (block["rows"], block["cols"]) != _block_shape(arr):
            raise ShapeError(f"block {name}: checkpoint shape {(block['rows'], block['cols'])}, model expects {_block_shape(arr)}")
        values = np.asarray(block["values"], dtype=DTYPE)
        if values.size != arr.size:
            raise ShapeError(f"block {name}: {values.size} values for {block['rows']}x{block['cols']}")
        arr[...] = values.reshape(arr.shape)
    extra = sorted(set(stored) - set(model.state_blocks()))
    if extra:
        raise FormatError(f"checkpoint has unexpected blocks: {', '.join(extra)}")
    return model, config, payload.get("run_id")
