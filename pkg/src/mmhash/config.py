"""Hyperparameters and their text file format.

The file format is flat ``key = value`` text, one entry per line, with ``#``
starting a comment::

    code_bits = 32
    lambda = 0.5   # window fraction of the batch
    variant = concat_only
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .exceptions import ConfigInvalid, ConfigSyntax

VARIANTS = ("full", "concat_only", "vision_only", "text_only")

# file key -> dataclass field, where they differ
_KEY_ALIASES = {"lambda": "lam", "lr": "learning_rate", "bits": "code_bits"}


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of the training/encoding pipeline.

    ``lam`` is the window fraction (written ``lambda`` in config files); the
    metric loss compares the first ``lam * batch_size`` rows of a batch with
    the last ``lam * batch_size`` rows.
    """

    code_bits: int = 64
    batch_size: int = 128
    lam: float = 0.5
    delta: float = 1.0
    mu: float = 0.01
    learning_rate: float = 0.03
    epochs: int = 50
    seed: int = 0
    vision_dim: int = 512
    text_dim: int = 512
    variant: str = "full"

    @property
    def concat_dim(self) -> int:
        return self.vision_dim + self.text_dim

    @property
    def window(self) -> int:
        """Rows per loss window, ``round(lam * batch_size)``."""
        return int(round(self.lam * self.batch_size))

    def replace(self, **changes) -> "TrainConfig":
        """Copy with ``changes`` applied, validated."""
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def validate(config: TrainConfig) -> None:
    """Raise :class:`ConfigInvalid` naming the first violated invariant."""
    c = config
    if not _is_int(c.code_bits) or not 8 <= c.code_bits <= 256 or c.code_bits % 8:
        raise ConfigInvalid("code_bits", f"code_bits must be a multiple of 8 in [8, 256], got {c.code_bits!r}")
    if not _is_int(c.batch_size) or c.batch_size < 1:
        raise ConfigInvalid("batch_size", f"batch_size must be a positive integer, got {c.batch_size!r}")
    if not (math.isfinite(c.lam) and 0 < c.lam <= 1):
        raise ConfigInvalid("lambda", f"lambda must lie in (0, 1], got {c.lam!r}")
    lb = c.lam * c.batch_size
    if round(lb) < 1 or abs(lb - round(lb)) >= 1e-9:
        raise ConfigInvalid("lambda", f"lambda * batch_size = {lb:g} must be a whole number >= 1")
    if not (math.isfinite(c.delta) and c.delta >= 0):
        raise ConfigInvalid("delta", f"delta must be >= 0, got {c.delta!r}")
    if not (math.isfinite(c.mu) and c.mu >= 0):
        raise ConfigInvalid("mu", f"mu must be >= 0, got {c.mu!r}")
    if not (math.isfinite(c.learning_rate) and c.learning_rate > 0):
        raise ConfigInvalid("learning_rate", f"learning_rate must be > 0, got {c.learning_rate!r}")
    if not _is_int(c.epochs) or c.epochs < 1:
        raise ConfigInvalid("epochs", f"epochs must be >= 1, got {c.epochs!r}")
    if not _is_int(c.seed) or not 0 <= c.seed < 2**64:
        raise ConfigInvalid("seed", f"seed must be an unsigned 64-bit integer, got {c.seed!r}")
    for name in ("vision_dim", "text_dim"):
        v = getattr(c, name)
        if not _is_int(v) or v < 1:
            raise ConfigInvalid(name, f"{name} must be a positive integer, got {v!r}")
    if c.variant not in VARIANTS:
        raise ConfigInvalid("variant", f"variant must be one of {VARIANTS}, got {c.variant!r}")


def _field_types() -> dict:
    return {f.name: f.type for f in fields(TrainConfig)}


def normalize_key(key: str) -> str:
    key = key.strip().lower().replace("-", "_")
    return _KEY_ALIASES.get(key, key)


def coerce(key: str, raw):
    """Convert a raw string (or value) for ``key`` to the field's type."""
    name = normalize_key(key)
    types = _field_types()
    if name not in types:
        raise ConfigSyntax(f"unknown config key {key!r}")
    if not isinstance(raw, str):
        return name, raw
    text = raw.strip()
    kind = types[name]
    try:
        if kind == "int":
            return name, int(text, 10)
        if kind == "float":
            return name, float(text)
    except ValueError:
        raise ConfigSyntax(f"bad value for {key!r}: {raw!r}") from None
    return name, text.replace("-", "_")


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse config-file text on top of ``base`` (defaults if None)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigSyntax(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        if not key.strip() or not raw.strip():
            raise ConfigSyntax(f"line {lineno}: empty key or value")
        name, value = coerce(key, raw)
        values[name] = value
    cfg = dataclasses.replace(base or TrainConfig(), **values)
    validate(cfg)
    return cfg


def load_config(path) -> TrainConfig:
    """Read and validate a config file, filling defaults for absent keys."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigSyntax(f"{path}: not UTF-8 text") from exc
    return parse_config(text)


def dump_config(config: TrainConfig) -> str:
    out = []
    for f in fields(TrainConfig):
        key = "lambda" if f.name == "lam" else f.name
        out.append(f"{key} = {getattr(config, f.name)!r}".replace("'", ""))
    return "\n".join(out) + "\n"
