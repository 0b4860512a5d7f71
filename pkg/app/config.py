"""
Configuration Module

Application settings resolved, in increasing priority, from field defaults,
RECALLCHAT_* environment variables (a .env file is loaded first), a
`key = value` config file given with --config, and explicit CLI flags.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.exceptions import ConfigurationError, FormatError, InputError
from app.schemas import DIMS_PRESETS, Dims, ModelKind, TrainConfig

load_dotenv()  # Load variables from .env file

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """
    Run-wide settings.

    Attributes:
        seed (int): root of all randomness
        learning_rate (float): optimiser step size
        batch_size (int): samples per update
        max_epochs (int): epoch cap
        optimizer (str): sgd, momentum or adagrad
        momentum (float): momentum coefficient
        threads (int): worker cap, 0 for all cores
        window (int): co-occurrence window
        top_terms (int): terms kept by extraction
        min_count (int): knowledge-base count floor
        top_n (int): attributes per knowledge vector
        max_turns (int): MLP slot count
        dims_preset (str): ubuntu, tieba or desk
        tokenization (str): word or char
        lm_pretrain_epochs (int): sentence-encoder pretraining epochs
        run_ledger_url (str): SQLAlchemy URL of the run ledger, empty to disable
        log_level (str): logging level name
        init_scale (float): half-width of the uniform parameter initialisation
    """

    model_config = SettingsConfigDict(env_prefix="RECALLCHAT_", extra="forbid", protected_namespaces=())

    seed: int = 1234
    learning_rate: float = 0.01
    batch_size: int = 32
    max_epochs: int = 10
    optimizer: str = "sgd"
    momentum: float = 0.9
    threads: int = 0
    window: int = 5
    top_terms: int = 2000
    min_count: int = 1
    top_n: int = 10
    max_turns: int = 8
    dims_preset: str = "desk"
    tokenization: str = "word"
    lm_pretrain_epochs: int = 0
    run_ledger_url: str = "sqlite:///./recallchat_runs.db"
    log_level: str = "INFO"
    init_scale: float = 0.1

    def dims(self) -> Dims:
        return Dims.preset(self.dims_preset)

    def train_config(self, model_kind) -> TrainConfig:
        """TrainConfig for a model kind; dims constraints raise ConfigurationError."""
        try:
            return TrainConfig(
                model_kind=ModelKind(model_kind),
                dims=self.dims(),
                learning_rate=self.learning_rate,
                batch_size=self.batch_size,
                max_epochs=self.max_epochs,
                optimizer=self.optimizer,
                momentum=self.momentum,
                seed=self.seed,
                top_n=self.top_n,
                max_turns=self.max_turns,
                threads=self.threads,
                lm_pretrain_epochs=self.lm_pretrain_epochs,
                tokenization=self.tokenization,
                init_scale=self.init_scale,
            )
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc


def read_config_file(path) -> Dict[str, str]:
    """
    Parse a `key = value` file.

    Blank lines and lines starting with # are ignored.

    Raises:
        InputError: If the file cannot be read
        FormatError: If a line has no '=' or names an unknown key (carries the line number)
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"expected 'key = value' in {path}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in Settings.model_fields:
            raise FormatError(f"unknown config key {key!r} in {path}", line=number)
        values[key] = value
    return values


def write_config_file(path, values: Mapping[str, Any], header: Optional[str] = None) -> Path:
    """Write settings as a `key = value` file that read_config_file accepts."""
    unknown = sorted(set(values) - set(Settings.model_fields))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    path = Path(path)
    lines = [f"# {header}"] if header else []
    lines += [f"{key} = {value}" for key, value in values.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_settings(config_path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> Settings:
    """
    Resolve settings from every source.

    Args:
        config_path: Optional key = value file
        overrides: Explicit flag values; None entries are ignored

    Raises:
        ConfigurationError: If a value does not validate
    """
    values: Dict[str, Any] = {}
    if config_path:
        values.update(read_config_file(config_path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        settings = Settings(**values)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid settings: {exc.errors()[0]['loc'][0]}: {exc.errors()[0]['msg']}") from exc
    if settings.dims_preset not in DIMS_PRESETS:
        raise ConfigurationError(f"unknown dims preset {settings.dims_preset!r}; choose from {sorted(DIMS_PRESETS)}")
    return settings
