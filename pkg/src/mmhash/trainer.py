"""Mini-batch training with hand-written backprop and Adam.

Checkpoint layout (little-endian)::

    b"MMH1" b"P" u32 d_c u32 k
    f32 w_f[d_c*d_c] f32 b_f[d_c] f32 w_h[d_c*k] f32 b_h[k]
    u64 seed  u8 variant
    u8 has_state [u64 step, f64 m[4 params], f64 v[4 params]]

Parameters are kept float32-representable during training (every Adam step
rounds them), so the float32 payload round-trips exactly.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._fileutil import atomic_write
from .config import VARIANTS, TrainConfig, validate
from .dataio import KIND_PARAMS, MAGIC, EmbeddingDataset, check_header
from .exceptions import DataError, NumericError, ShapeMismatch, TrainTooSmall, TruncatedFile
from .loss import batch_similarity, total_loss
from .model import BatchActivations, ModelParams, forward_batch, init_params

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in params.arrays()], v=[np.zeros_like(a) for a in params.arrays()])

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step)


def backward_batch(acts: BatchActivations, grad_h, params: ModelParams) -> ModelParams:
    """Gradients of the loss w.r.t. every parameter, given ``dL/dh``.

    Returned as a :class:`ModelParams` holding gradients in place of values.
    """
    grad_h = np.asarray(grad_h, dtype=np.float64)
    if grad_h.shape != acts.h.shape:
        raise ShapeMismatch(f"grad_h {grad_h.shape} does not match codes {acts.h.shape}")
    g_pre_h = grad_h * (1.0 - acts.h**2)
    g_w_h = acts.z_f.T @ g_pre_h
    g_b_h = g_pre_h.sum(axis=0)
    if acts.variant == "concat_only":
        g_w_f = np.zeros_like(params.w_f)
        g_b_f = np.zeros_like(params.b_f)
    else:
        g_z_f = g_pre_h @ params.w_h.T
        g_pre_f = g_z_f * acts.z_c * acts.gate * (1.0 - acts.gate)
        g_w_f = acts.z_c.T @ g_pre_f
        g_b_f = g_pre_f.sum(axis=0)
    return ModelParams(g_w_f, g_b_f, g_w_h, g_b_h)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    c1 = 1.0 - BETA1**state.step
    c2 = 1.0 - BETA2**state.step
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_m: float
    loss_q: float
    map: float | None = None
    wall_ms: float = 0.0


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss_total", "loss_m", "loss_q", "map", "wall_ms"])
        for r in self.records:
            w.writerow([
                r.epoch, repr(r.loss_total), repr(r.loss_m), repr(r.loss_q),
                "" if r.map is None else repr(r.map), f"{r.wall_ms:.3f}",
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with atomic_write(path, "w") as fh:
            fh.write(self.to_csv())


@dataclass
class Checkpoint:
    params: ModelParams
    seed: int = 0
    variant: str = "full"
    state: AdamState | None = None


_DIMS = struct.Struct("<II")
_TRAILER = struct.Struct("<QB")


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    p = ckpt.params
    parts = [MAGIC, KIND_PARAMS, _DIMS.pack(p.concat_dim, p.code_bits)]
    parts += [a.astype("<f4").tobytes() for a in p.arrays()]
    parts.append(_TRAILER.pack(ckpt.seed, VARIANTS.index(ckpt.variant)))
    if ckpt.state is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack("<Q", ckpt.state.step))
        parts += [a.astype("<f8").tobytes() for a in ckpt.state.m + ckpt.state.v]
    return b"".join(parts)


def checkpoint_from_bytes(buf: bytes, path="<buffer>") -> Checkpoint:
    check_header(buf, KIND_PARAMS, path)
    pos = 5

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedFile(f"{path}: checkpoint truncated at byte {len(buf)}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    d_c, k = _DIMS.unpack(take(_DIMS.size))
    shapes = [(d_c, d_c), (d_c,), (d_c, k), (k,)]
    arrays = [np.frombuffer(take(4 * int(np.prod(s))), dtype="<f4").reshape(s) for s in shapes]
    seed, variant_code = _TRAILER.unpack(take(_TRAILER.size))
    if variant_code >= len(VARIANTS):
        raise DataError(f"{path}: unknown variant byte {variant_code}")
    params = ModelParams(*arrays)
    state = None
    if take(1) == b"\x01":
        (step,) = struct.unpack("<Q", take(8))
        moments = [np.frombuffer(take(8 * int(np.prod(s))), dtype="<f8").reshape(s).copy() for s in shapes * 2]
        state = AdamState(m=moments[:4], v=moments[4:], step=step)
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes in checkpoint")
    return Checkpoint(params=params, seed=seed, variant=VARIANTS[variant_code], state=state)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    data = checkpoint_to_bytes(ckpt)
    with atomic_write(path) as fh:
        fh.write(data)


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes(), path)


def _epoch_map(dataset: EmbeddingDataset, params: ModelParams, variant: str) -> float:
    from .evaluation import evaluate_split

    return evaluate_split(dataset, params, variant).map


def train(
    dataset: EmbeddingDataset,
    config: TrainConfig,
    *,
    checkpoint=None,
    eval_every: int = 0,
    epochs: int | None = None,
    return_state: bool = False,
):
    """Fit a model on ``dataset.manifest.train_ids``.

    Each epoch shuffles the training ids with a seeded RNG and walks the
    full batches, dropping the remainder. If ``eval_every`` > 0 the test mAP
    (query split against retrieval split) is logged every that many epochs.
    ``epochs`` overrides ``config.epochs`` (0 returns the initial params).

    Returns ``(params, log)``, or ``(params, log, state)`` with ``return_state``.
    """
    validate(config)
    n_epochs = config.epochs if epochs is None else epochs
    if dataset.vision.shape[1] != config.vision_dim or dataset.text.shape[1] != config.text_dim:
        raise ShapeMismatch(
            f"data widths ({dataset.vision.shape[1]}, {dataset.text.shape[1]}) != "
            f"config ({config.vision_dim}, {config.text_dim})"
        )
    train_ids = dataset.manifest.train_ids
    b = config.batch_size
    if len(train_ids) < b:
        raise TrainTooSmall(f"{len(train_ids)} training items < batch size {b}")

    params = init_params(config.concat_dim, config.code_bits, config.seed)
    state = AdamState.zeros_like(params)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    log = TrainLog()
    n_batches = len(train_ids) // b

    for epoch in range(1, n_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(train_ids)
        sums = np.zeros(3)
        for start in range(0, n_batches * b, b):
            ids = order[start:start + b]
            acts = forward_batch(dataset.vision[ids], dataset.text[ids], params, config.variant)
            phi = batch_similarity(dataset.labels[ids], config.lam)
            out = total_loss(acts.h, phi, config)
            if not np.isfinite(out.total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // b}: "
                    f"l_m={out.l_m!r} l_q={out.l_q!r} max|h|={np.abs(acts.h).max()!r}"
                )
            grads = backward_batch(acts, out.grad_h, params)
            adam_step(params, grads, state, config.learning_rate)
            params.round_to_float32()
            sums += (out.total, out.l_m, out.l_q)
        sums /= n_batches
        record = EpochRecord(epoch, float(sums[0]), float(sums[1]), float(sums[2]))
        if eval_every and epoch % eval_every == 0:
            record.map = _epoch_map(dataset, params, config.variant)
        record.wall_ms = (time.perf_counter() - t0) * 1e3
        log.records.append(record)
        logger.debug("epoch %d loss %.6f map %s", epoch, record.loss_total, record.map)

    if checkpoint is not None:
        save_checkpoint(Checkpoint(params, config.seed, config.variant, state), checkpoint)
    if return_state:
        return params, log, state
    return params, log
