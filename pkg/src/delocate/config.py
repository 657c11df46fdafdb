"""Run configuration: every knob of the pipeline, serializable with the run.

Unknown keys are rejected when parsing so a run directory's config.json can
be trusted verbatim; the sha256 digest of the canonical JSON identifies a
configuration in reports.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidInput
from .optimizers import OptimizerSpec, finetune_default, pretrain_default, stage2_default


@dataclass
class DataConfig:
    frames: int = 8
    image_size: int = 64
    patch_size: int = 8


@dataclass
class MaskingConfig:
    strategy: str = "proposed"
    ratio: float = 0.75


@dataclass
class ModelConfig:
    embed_dim: int = 96
    depth: int = 4
    heads: int = 4
    decoder_depth: int = 2
    map_widths: tuple[int, int, int] = (16, 32, 64)
    loc_widths: tuple[int, int, int] = (16, 32, 64)


@dataclass
class PhaseConfig:
    optimizer: OptimizerSpec
    epochs: int
    batch_size: int = 8
    patience: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    split_mode: str = "by_manipulation"
    val_fraction: float = 0.2
    inner_lr: float | None = None  # meta inner step size; defaults to the stage-2 lr
    data: DataConfig = field(default_factory=DataConfig)
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PhaseConfig = field(default_factory=lambda: PhaseConfig(pretrain_default(), epochs=30))
    finetune: PhaseConfig = field(default_factory=lambda: PhaseConfig(finetune_default(), epochs=10))
    localize: PhaseConfig = field(default_factory=lambda: PhaseConfig(stage2_default(), epochs=12))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


_NESTED = {
    "data": DataConfig,
    "masking": MaskingConfig,
    "model": ModelConfig,
    "pretrain": PhaseConfig,
    "finetune": PhaseConfig,
    "localize": PhaseConfig,
    "optimizer": OptimizerSpec,
}


def _from_dict(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise InvalidInput(f"{where}: expected an object, got {type(payload).__name__}")
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - fields
    if unknown:
        raise InvalidInput(f"{where}: unknown config keys {sorted(unknown)}")
    kwargs = {}
    for name, value in payload.items():
        if name in _NESTED and isinstance(value, dict):
            kwargs[name] = _from_dict(_NESTED[name], value, f"{where}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(payload: dict) -> RunConfig:
    return _from_dict(RunConfig, payload, "config")


def load_config(path: str | Path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"config file is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


def apply_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Apply dotted-key overrides (flags win over the config file)."""
    payload = config.to_dict()
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = payload
        for p in parts[:-1]:
            if p not in node:
                raise InvalidInput(f"unknown config key {dotted!r}")
            node = node[p]
        if parts[-1] not in node:
            raise InvalidInput(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
    return config_from_dict(payload)
