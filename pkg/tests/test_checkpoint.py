import json

import pytest
from numpy.testing import assert_array_equal

from app.exceptions import FormatError, InputError, ShapeError
from app.ml.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from app.ml.conversation import ConversationModel
from app.ml.data import ConversationSample
from app.ml.embeddings import Vocabulary
from app.ml.mathcore import Rng
from app.schemas import TrainConfig


def make(kind, dims, seed=5):
    config = TrainConfig(model_kind=kind, dims=dims, max_turns=4)
    model = ConversationModel(kind, dims, Vocabulary(["a", "b", "c"]), Vocabulary(["x", "y"]), Rng(seed),
                              max_turns=config.max_turns)
    return model, config


@pytest.mark.parametrize("kind", ["rlstm", "mlp_kb", "affinity_rnn"])
def test_load_restores_every_block(tmp_path, desk_dims, kind):
    model, config = make(kind, desk_dims)
    path = tmp_path / "model.json"
    save_checkpoint(model, config, path, run_id="r1", history={"valid_losses": [0.5]})
    loaded, loaded_config, run_id = load_checkpoint(path)
    assert run_id == "r1"
    assert loaded_config == config
    assert list(loaded.state_blocks()) == list(model.state_blocks())
    for name, arr in model.state_blocks().items():
        assert_array_equal(loaded.state_blocks()[name], arr)
    sample = ConversationSample(context=[["a"]], query=["b"], response=["c"], label=1, group_id="g")
    assert loaded.score(loaded.encode(sample, None, 3)) == model.score(model.encode(sample, None, 3))


def test_identical_models_write_identical_bytes(tmp_path, desk_dims):
    for name in ("one.json", "two.json"):
        model, config = make("lstm", desk_dims)
        save_checkpoint(model, config, tmp_path / name)
    assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()


def test_shape_mismatch_names_block(tmp_path, desk_dims):
    model, config = make("lstm", desk_dims)
    path = tmp_path / "model.json"
    save_checkpoint(model, config, path)
    payload = json.loads(path.read_text())
    block = next(b for b in payload["blocks"] if b["name"] == "head.w")
    block["rows"] = 5
    path.write_text(json.dumps(payload))
    with pytest.raises(ShapeError, match="head.w"):
        load_checkpoint(path)


def test_unexpected_block(tmp_path, desk_dims):
    model, config = make("lstm", desk_dims)
    path = tmp_path / "model.json"
    save_checkpoint(model, config, path)
    payload = json.loads(path.read_text())
    payload["blocks"].append({"name": "cell.W_rk", "rows": 1, "cols": 1, "values": [0.0]})
    path.write_text(json.dumps(payload))
    with pytest.raises(FormatError, match="cell.W_rk"):
        load_checkpoint(path)


def test_wrong_version(tmp_path, desk_dims):
    model, config = make("lstm", desk_dims)
    path = tmp_path / "model.json"
    save_checkpoint(model, config, path)
    payload = json.loads(path.read_text())
    payload["format_version"] = FORMAT_VERSION + 1
    path.write_text(json.dumps(payload))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(InputError):
        load_checkpoint(tmp_path / "absent.json")
