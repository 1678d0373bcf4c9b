"""
Configuration models and loading.

Configuration is layered: model defaults, then FOPO_* environment variables
(a .env file is honoured via python-dotenv), then a flat KEY=VALUE config
file, then command-line flags. Keys are lower-case field names; pretraining
fields carry the ``pretrain_`` prefix (``pretrain_alpha=5e-5``).
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Set, Type

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from foresight.errors import ConfigError

logger = logging.getLogger(__name__)

# .env next to the repository root, same place the backend used to look
load_dotenv(Path(__file__).parent.parent / ".env")

ENV_PREFIX = "FOPO_"
OUTPUT_DIR = Path(os.getenv("FOPO_OUTPUT_DIR", "runs"))

Algorithm = Literal["ppo", "grpo", "fopo", "gr_fopo"]
AdvantageMode = Literal["plain", "group_relative", "group_relative_no_std"]
GameId = Literal["rsa", "taboo"]


# ============================================================
# Sections
# ============================================================

class PolicyConfig(BaseModel):
    """Policy parameterization (linear softmax, optional tanh hidden layer)."""
    hidden_units: int = Field(default=0, ge=0)
    init_scale: float = Field(default=0.1, gt=0)


class RewardConfig(BaseModel):
    """Reward shaping for Cooperative RSA plus the backward decay factor."""
    gamma: float = Field(default=2.0, gt=0)
    epsilon: float = Field(default=0.01, gt=0)
    delta: float = Field(default=0.8, gt=0, lt=1)
    turn_unit: Literal["turns", "rounds"] = "turns"


class UpdateConfig(BaseModel):
    """RL optimizer settings shared by PPO, GRPO, FoPO and GR.FoPO."""
    alpha: float = Field(default=1e-5, gt=0)
    beta: float = Field(default=0.1, ge=0)
    eta: float = Field(default=0.1, ge=0)
    clip_epsilon: float = Field(default=0.2, gt=0, lt=1)
    algorithm: Algorithm = "fopo"
    group_size: int = Field(default=4, ge=1)
    batch_size: int = Field(default=16, ge=1)
    epochs: int = Field(default=1, ge=1)
    advantage_mode: Optional[AdvantageMode] = None
    foresight_orientation: Literal["counterpart", "self"] = "counterpart"
    max_grad_norm: Optional[float] = Field(default=10.0, gt=0)

    @model_validator(mode="after")
    def _group_size_for_group_modes(self) -> "UpdateConfig":
        if self.resolved_advantage_mode != "plain" and self.group_size < 2:
            raise ValueError("group_size must be >= 2 for group-relative advantages")
        return self

    @property
    def resolved_advantage_mode(self) -> str:
        if self.advantage_mode is not None:
            return self.advantage_mode
        return "group_relative" if self.algorithm in ("grpo", "gr_fopo") else "plain"

    @property
    def uses_foresight(self) -> bool:
        return self.algorithm in ("fopo", "gr_fopo")


class PretrainConfig(BaseModel):
    """Maximum-likelihood pretraining on oracle dialogues (flat keys use the pretrain_ prefix)."""
    alpha: float = Field(default=5e-5, gt=0)
    beta: float = Field(default=0.01, ge=0)
    batch_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=3, ge=0)
    max_grad_norm: Optional[float] = Field(default=10.0, gt=0)


class RsaGameConfig(BaseModel):
    """Action-slot capacity of the Cooperative RSA feature map."""
    max_features: int = Field(default=8, ge=1)
    max_objects: int = Field(default=12, ge=2)


class TabooGameConfig(BaseModel):
    vocab_size: int = Field(default=8, ge=4)
    cue_count: int = Field(default=12, ge=4)
    max_turns: int = Field(default=8, ge=2)
    respond_top_k: int = Field(default=3, ge=1)
    guess_threshold: float = Field(default=0.9, gt=0, lt=1)
    signature_size: int = Field(default=3, ge=1)

    @model_validator(mode="after")
    def _sizes(self) -> "TabooGameConfig":
        if self.cue_count < self.vocab_size:
            raise ValueError("cue_count must be >= vocab_size")
        if self.respond_top_k > self.vocab_size:
            raise ValueError("respond_top_k must not exceed vocab_size")
        if self.signature_size > self.cue_count:
            raise ValueError("signature_size must not exceed cue_count")
        return self


class TrainRunConfig(BaseModel):
    """Everything one self-play training run needs; all seeds derive from ``seed``."""
    game: GameId = "rsa"
    update: UpdateConfig = Field(default_factory=UpdateConfig)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    rsa: RsaGameConfig = Field(default_factory=RsaGameConfig)
    taboo: TabooGameConfig = Field(default_factory=TabooGameConfig)
    episodes_per_phase: int = Field(default=256, ge=1)
    phases: int = Field(default=200, ge=0)
    checkpoint_every: int = Field(default=10, ge=1)
    keep_last: int = Field(default=5, ge=1)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    stop_on_collapse: bool = False
    entropy_threshold: float = Field(default=0.01, gt=0)
    dump_trajectories: bool = False

    @property
    def algorithm(self) -> str:
        return self.update.algorithm


class EvalConfig(BaseModel):
    episodes_per_pairing: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    greedy: bool = True
    entropy_threshold: float = Field(default=0.01, gt=0)


class DataGenConfig(BaseModel):
    """Corpus generation. Matrix rows are feature dimensions, columns are referents."""
    seed: int = Field(default=0, ge=0)
    pretrain_pairs: int = Field(default=86, ge=1)
    rl_pairs: int = Field(default=25, ge=1)
    rl_count: int = Field(default=1000, ge=0)
    pretrain_count: int = Field(default=500, ge=0)
    min_dims: int = Field(default=2, ge=2, le=8)
    max_dims: int = Field(default=8, ge=2, le=8)
    min_referents: int = Field(default=2, ge=2, le=12)
    max_referents: int = Field(default=12, ge=2, le=12)
    max_attempts: int = Field(default=200, ge=1)
    shuffle_objects: bool = True
    taboo_count: int = Field(default=500, ge=0)

    @field_validator("max_dims")
    @classmethod
    def _dims_order(cls, value: int, info) -> int:
        low = info.data.get("min_dims", 2)
        if value < low:
            raise ValueError("max_dims must be >= min_dims")
        return value

    @field_validator("max_referents")
    @classmethod
    def _referents_order(cls, value: int, info) -> int:
        low = info.data.get("min_referents", 2)
        if value < low:
            raise ValueError("max_referents must be >= min_referents")
        return value


class Settings(BaseModel):
    """All sections of one command invocation."""
    train: TrainRunConfig = Field(default_factory=TrainRunConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    datagen: DataGenConfig = Field(default_factory=DataGenConfig)


# ============================================================
# Flat key handling
# ============================================================

SECTION_PREFIXES: Dict[Type[BaseModel], str] = {PretrainConfig: "pretrain_"}
_NONE_STRINGS = {"", "none", "null"}


def _is_section(annotation: Any) -> bool:
    return isinstance(annotation, type) and issubclass(annotation, BaseModel)


def flat_keys(model_cls: Type[BaseModel] = Settings) -> Set[str]:
    """All accepted flat configuration keys."""
    keys: Set[str] = set()
    prefix = SECTION_PREFIXES.get(model_cls, "")
    for name, field in model_cls.model_fields.items():
        if _is_section(field.annotation):
            keys |= flat_keys(field.annotation)
        else:
            keys.add(prefix + name)
    return keys


def _nest(model_cls: Type[BaseModel], flat: Dict[str, Any], used: Set[str]) -> Dict[str, Any]:
    # one flat key sets the field in every section that declares it (e.g. seed)
    data: Dict[str, Any] = {}
    prefix = SECTION_PREFIXES.get(model_cls, "")
    for name, field in model_cls.model_fields.items():
        if _is_section(field.annotation):
            nested = _nest(field.annotation, flat, used)
            if nested:
                data[name] = nested
            continue
        key = prefix + name
        if key in flat:
            value = flat[key]
            if isinstance(value, str) and value.strip().lower() in _NONE_STRINGS:
                value = None
            data[name] = value
            used.add(key)
    return data


def read_config_file(path: Path) -> Dict[str, str]:
    """
    Parse a flat KEY=VALUE file (comments with #, blank lines allowed).

    Raises:
        ConfigError: missing file or unknown key
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        return _manifest_config(path)
    values = {key.strip().lower(): value for key, value in dotenv_values(path).items()}
    unknown = sorted(set(values) - flat_keys())
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return {key: value for key, value in values.items() if value is not None}


def _manifest_config(path: Path) -> Dict[str, Any]:
    # run manifests carry the flat snapshot under "config" (corpus manifests under "run")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not a JSON manifest: {e}") from e
    config = manifest.get("config", manifest.get("run", {}).get("config"))
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: manifest has no config snapshot")
    unknown = sorted(set(config) - flat_keys())
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return dict(config)


def environment_defaults() -> Dict[str, str]:
    """FOPO_<KEY> variables that name a configuration field."""
    known = flat_keys()
    found = {}
    for name, value in os.environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key in known:
            found[key] = value
    return found


def build_settings(flat: Dict[str, Any]) -> Settings:
    """Validate a flat mapping into Settings; unknown keys are rejected."""
    unknown = sorted(set(flat) - flat_keys())
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    used: Set[str] = set()
    try:
        settings = Settings.model_validate(_nest(Settings, flat, used))
    except ValidationError as e:
        raise ConfigError(str(e)) from e

    run = settings.train
    if run.policy.hidden_units == 0 and run.update.alpha < 1e-3 and run.phases > 0:
        logger.warning(
            "alpha=%g on the linear policy: learning will be imperceptibly slow at desk scale",
            run.update.alpha,
        )
    return settings


def load_settings(config_path: Optional[Path] = None,
                  overrides: Optional[Dict[str, Any]] = None) -> Settings:
    """
    Resolve settings with precedence defaults < environment < file < overrides.

    Args:
        config_path: Optional flat KEY=VALUE config file
        overrides: Values from command-line flags (None entries are ignored)

    Returns:
        Settings: validated configuration
    """
    flat: Dict[str, Any] = dict(environment_defaults())
    if config_path is not None:
        flat.update(read_config_file(config_path))
    if overrides:
        flat.update({key: value for key, value in overrides.items() if value is not None})
    return build_settings(flat)


def flatten_settings(settings: Settings) -> Dict[str, Any]:
    """Inverse of build_settings; used for the manifest config snapshot."""
    flat: Dict[str, Any] = {}

    def walk(model: BaseModel) -> None:
        prefix = SECTION_PREFIXES.get(type(model), "")
        for name in type(model).model_fields:
            value = getattr(model, name)
            if isinstance(value, BaseModel):
                walk(value)
            else:
                flat.setdefault(prefix + name, value)

    walk(settings)
    return flat
