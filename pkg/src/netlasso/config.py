"""Run configuration: dimensions, window, regularization, optimizer choice.

Configs are plain dataclasses loadable from a flat ``key = value`` text file
(``#`` starts a comment). Every key mirrors a field; unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .attention import AGGREGATOR_VARIANTS, NORMALIZATIONS
from .tape import ConfigError

OPTIMIZER_KINDS = ("adam_pw", "adam_f", "pg", "apg")


@dataclass
class ModelConfig:
    """Everything a training run needs besides the data itself.

    ``beta`` weighs the sparsity penalty; ``slope`` is the negative slope
    of the scoring nonlinearity; ``score_norm`` picks which edge set raw
    influence scores are normalized over.
    """

    d_x: int = 1
    d_h: int = 32
    d_a: int = 16
    window: int = 5
    horizon: int = 1
    beta: float = 2e-5
    slope: float = 0.5
    lr: float = 0.001
    epochs: int = 50
    optimizer: str = "adam_pw"
    aggregator: str = "attention"
    score_norm: str = "per_source_out"
    seed: int = 0

    def __post_init__(self):
        for name in ("d_x", "d_h", "d_a", "window", "horizon"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, "
                              f"got {self.epochs!r}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not self.beta >= 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta!r}")
        if not self.slope > 0:
            raise ConfigError(f"slope must be > 0, got {self.slope!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr!r}")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZER_KINDS}, "
                              f"got {self.optimizer!r}")
        if self.aggregator not in AGGREGATOR_VARIANTS:
            raise ConfigError(f"aggregator must be one of {AGGREGATOR_VARIANTS}, "
                              f"got {self.aggregator!r}")
        if self.score_norm not in NORMALIZATIONS:
            raise ConfigError(f"score_norm must be one of {NORMALIZATIONS}, "
                              f"got {self.score_norm!r}")
        if self.aggregator == "none" and self.d_a != self.d_h:
            raise ConfigError(f"aggregator 'none' requires d_a = d_h, got "
                              f"d_a={self.d_a}, d_h={self.d_h}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def parse_config(text: str) -> ModelConfig:
    """Parse ``key = value`` lines; blank lines and # comments are skipped."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        kind = _FIELD_TYPES[key]
        try:
            if kind == "int":
                values[key] = int(val)
            elif kind == "float":
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}") from exc
    return ModelConfig(**values)


def load_config(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(config: ModelConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(ModelConfig)]
    return "\n".join(lines) + "\n"
