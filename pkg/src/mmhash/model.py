"""Gated fusion + hash layer forward pass.

Row-vector convention throughout: a batch is an ``(n, d)`` array and layers
compute ``x @ W + b``. So ``w_f`` is ``(d_c, d_c)`` and ``w_h`` is
``(d_c, k)`` where ``d_c = vision_dim + text_dim``.

    z_c  = [vision | text]                 (excluded modality zeroed)
    gate = sigmoid(z_c @ w_f + b_f)
    z_f  = gate * z_c                      (concat_only: z_f = z_c)
    h    = tanh(z_f @ w_h + b_h)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import VARIANTS
from .exceptions import DimMismatch, ShapeMismatch

PARAM_NAMES = ("w_f", "b_f", "w_h", "b_h")


@dataclass
class ModelParams:
    w_f: np.ndarray
    b_f: np.ndarray
    w_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d_c, k = self.w_h.shape
        if self.w_f.shape != (d_c, d_c) or self.b_f.shape != (d_c,) or self.b_h.shape != (k,):
            raise ShapeMismatch(
                f"inconsistent parameter shapes: w_f{self.w_f.shape} b_f{self.b_f.shape} "
                f"w_h{self.w_h.shape} b_h{self.b_h.shape}"
            )

    @property
    def concat_dim(self) -> int:
        return self.w_h.shape[0]

    @property
    def code_bits(self) -> int:
        return self.w_h.shape[1]

    def arrays(self):
        return [getattr(self, name) for name in PARAM_NAMES]

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def round_to_float32(self) -> None:
        """Snap every entry to the nearest float32, in place."""
        for a in self.arrays():
            a[...] = a.astype(np.float32)

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class BatchActivations:
    """Intermediates of one forward pass, kept for backprop."""

    z_c: np.ndarray
    gate: np.ndarray
    z_f: np.ndarray
    h: np.ndarray
    variant: str = "full"


def sigmoid(x):
    """Logistic function that never overflows in ``exp``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(concat_dim: int, code_bits: int, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases. Entries are float32-representable."""
    if concat_dim < 1 or code_bits < 1:
        raise ValueError("concat_dim and code_bits must be >= 1")
    rng = np.random.default_rng(seed)
    a_f = glorot_bound(concat_dim, concat_dim)
    a_h = glorot_bound(concat_dim, code_bits)
    w_f = rng.uniform(-a_f, a_f, (concat_dim, concat_dim)).astype(np.float32)
    w_h = rng.uniform(-a_h, a_h, (concat_dim, code_bits)).astype(np.float32)
    # float32 rounding must not push an entry past the bound
    w_f = np.clip(w_f, -a_f, a_f)
    w_h = np.clip(w_h, -a_h, a_h)
    return ModelParams(w_f, np.zeros(concat_dim), w_h, np.zeros(code_bits))


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def concat(vision, text, variant: str = "full") -> np.ndarray:
    """Join vision and text features along the last axis.

    Single-modality variants zero-fill the excluded half so the output width
    never depends on the variant.
    """
    _check_variant(variant)
    vision = np.asarray(vision, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    if vision.shape[:-1] != text.shape[:-1]:
        raise DimMismatch(f"vision {vision.shape} and text {text.shape} disagree on leading dims")
    if variant == "vision_only":
        text = np.zeros_like(text)
    elif variant == "text_only":
        vision = np.zeros_like(vision)
    return np.concatenate([vision, text], axis=-1)


def _check_width(x, params: ModelParams) -> None:
    if x.shape[-1] != params.concat_dim:
        raise DimMismatch(f"input width {x.shape[-1]} != model width {params.concat_dim}")


def forward_gate(z_c, params: ModelParams, variant: str = "full"):
    """Return ``(z_f, gate)``. With ``concat_only`` the gate is bypassed (all ones)."""
    z_c = np.asarray(z_c, dtype=np.float64)
    _check_width(z_c, params)
    if variant == "concat_only":
        return z_c.copy(), np.ones_like(z_c)
    gate = sigmoid(z_c @ params.w_f + params.b_f)
    return gate * z_c, gate


def forward_hash(z_f, params: ModelParams) -> np.ndarray:
    """Relaxed codes ``tanh(z_f @ w_h + b_h)``."""
    z_f = np.asarray(z_f, dtype=np.float64)
    _check_width(z_f, params)
    return np.tanh(z_f @ params.w_h + params.b_h)


def forward_batch(vision, text, params: ModelParams, variant: str = "full") -> BatchActivations:
    vision = np.atleast_2d(np.asarray(vision, dtype=np.float64))
    text = np.atleast_2d(np.asarray(text, dtype=np.float64))
    if len(vision) != len(text):
        raise DimMismatch(f"{len(vision)} vision rows vs {len(text)} text rows")
    z_c = concat(vision, text, variant)
    z_f, gate = forward_gate(z_c, params, variant)
    h = forward_hash(z_f, params)
    return BatchActivations(z_c=z_c, gate=gate, z_f=z_f, h=h, variant=variant)
