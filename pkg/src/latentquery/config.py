"""Training and decoding configuration.

Config files are either JSON objects or flat ``key = value`` text (``#``
starts a comment).  Unknown keys are an error.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .nn import ConfigError


@dataclass
class TrainConfig:
    # latent query objective
    beta: float = 0.1
    omega: float = 10.0
    tau: float = 0.9
    delta_start: float = 1.0
    delta_end: float = 0.5
    per_token_dropout: bool = False
    # optimisation
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    warmup_steps: int = 200
    total_steps: int = 3000
    batch_size: int = 8
    accumulation_steps: int = 1
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 100
    # model
    d_model: int = 64
    num_heads: int = 4
    d_ff: int = 128
    n_shared: int = 2
    n_doc: int = 1
    n_query: int = 1
    n_decoder: int = 2
    max_source_length: int = 128
    max_target_length: int = 48
    layer_norm_eps: float = 1e-5
    dropout: float = 0.0
    dual_view: bool = True
    cross_order: str = "QD"
    cross_every_layer: bool = True
    dtype: str = "float32"
    # tokenizer
    bpe_merges: int = 400

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.beta < 0 or self.omega < 0:
            raise ConfigError("beta and omega must be non-negative")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not 0.0 <= self.delta_end <= self.delta_start <= 1.0:
            raise ConfigError("need 0 <= delta_end <= delta_start <= 1")
        if self.batch_size < 1 or self.accumulation_steps < 1 or self.total_steps < 0:
            raise ConfigError("batch_size and accumulation_steps must be >= 1, total_steps >= 0")
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.cross_order not in ("QD", "DQ"):
            raise ConfigError(f"cross_order must be 'QD' or 'DQ', got {self.cross_order!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(d) - known)
        if bad:
            raise ConfigError(f"unknown config keys: {', '.join(bad)}")
        return cls(**d)


# Values used for the full-scale setup; kept for reference, never a default.
FULL_SCALE_PRESET = dict(
    beta=0.1, omega=10.0, tau=0.9, delta_start=1.0, delta_end=0.5,
    lr=3e-5, warmup_steps=500, total_steps=20000, batch_size=8,
    accumulation_steps=32, n_shared=11, n_doc=1, n_query=1,
    max_source_length=640,
)


@dataclass
class DecodeConfig:
    strategy: str = "greedy"
    beam_width: int = 4
    max_target_length: int = 48
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.strategy not in ("greedy", "beam"):
            raise ConfigError(f"unknown decoding strategy {self.strategy!r}")
        if self.beam_width < 1 or self.max_target_length < 1:
            raise ConfigError("beam_width and max_target_length must be >= 1")


def _coerce(value: str, current):
    if isinstance(current, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value.strip()


def parse_config_text(text: str, cls=TrainConfig):
    text = text.strip()
    if text.startswith("{"):
        return cls(**_checked(json.loads(text), cls))
    defaults = cls()
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not hasattr(defaults, key):
            raise ConfigError(f"line {ln}: unknown config key {key!r}")
        out[key] = _coerce(value, getattr(defaults, key))
    return cls(**out)


def _checked(d: dict, cls) -> dict:
    known = {f.name for f in fields(cls)}
    bad = sorted(set(d) - known)
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join(bad)}")
    return d


def load_config(path, cls=TrainConfig):
    return parse_config_text(Path(path).read_text(encoding="utf-8"), cls)
