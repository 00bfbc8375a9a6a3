"""Pairwise metric loss, quantization loss and their gradients w.r.t. codes.

Batches of ``b`` relaxed codes are split into two windows of ``m = lam * b``
rows: the head ``h[:m]`` and the tail ``h[b-m:]`` (they overlap when
``lam > 0.5``). With ``theta = h[:m] @ h[b-m:].T``::

    L_m = sum(delta * softplus(theta) - phi * theta) / m**2
    L_q = sum over rows i in head-or-tail of || |h_i| - 1 ||_2 / b
    L   = L_m + mu * L_q
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NonIntegralWindow, ShapeMismatch
from .model import sigmoid

NORM_EPS = 1e-12


@dataclass
class PairwiseTerms:
    theta: np.ndarray
    phi: np.ndarray


@dataclass
class LossBreakdown:
    l_m: float
    l_q: float
    total: float
    grad_h: np.ndarray


def window_size(lam: float, b: int) -> int:
    lb = lam * b
    m = int(round(lb))
    if m < 1 or abs(lb - m) >= 1e-9 or m > b:
        raise NonIntegralWindow(f"lambda * b = {lb!r} is not a whole number in [1, b]")
    return m


def softplus(x):
    """``log(1 + e^x)`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def similarity_indicator(labels_i, labels_j) -> int:
    """1 if the two label sets share a category, else 0."""
    return int(np.any(np.logical_and(labels_i, labels_j)))


def similarity_matrix(labels_a, labels_b) -> np.ndarray:
    """Pairwise :func:`similarity_indicator` between rows of two multi-hot matrices."""
    a = np.asarray(labels_a, dtype=np.float64)
    b = np.asarray(labels_b, dtype=np.float64)
    return (a @ b.T > 0).astype(np.float64)


def batch_similarity(labels, lam: float) -> np.ndarray:
    """Head-vs-tail similarity matrix for a batch's label rows."""
    b = len(labels)
    m = window_size(lam, b)
    return similarity_matrix(labels[:m], labels[b - m:])


def pairwise_terms(h, phi, lam: float) -> PairwiseTerms:
    h = np.asarray(h, dtype=np.float64)
    b = len(h)
    m = window_size(lam, b)
    return PairwiseTerms(theta=h[:m] @ h[b - m:].T, phi=np.asarray(phi, dtype=np.float64))


def metric_loss(h, phi, delta: float, lam: float):
    """Return ``(value, grad_h)`` for the pairwise metric loss."""
    h = np.asarray(h, dtype=np.float64)
    b = len(h)
    m = window_size(lam, b)
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (m, m):
        raise ShapeMismatch(f"phi has shape {phi.shape}, expected {(m, m)}")
    head, tail = h[:m], h[b - m:]
    theta = head @ tail.T
    value = float(np.sum(delta * softplus(theta) - phi * theta)) / m**2
    g_theta = (delta * sigmoid(theta) - phi) / m**2
    grad = np.zeros_like(h)
    grad[:m] += g_theta @ tail
    grad[b - m:] += g_theta.T @ head
    return value, grad


def window_rows(b: int, m: int) -> np.ndarray:
    """Boolean mask of rows in the head window or the tail window."""
    mask = np.zeros(b, dtype=bool)
    mask[:m] = True
    mask[b - m:] = True
    return mask


def quantization_loss(h, lam: float):
    """Return ``(value, grad_h)`` for the (unsquared) L2 quantization loss."""
    h = np.asarray(h, dtype=np.float64)
    b = len(h)
    m = window_size(lam, b)
    rows = window_rows(b, m)
    gap = np.abs(h[rows]) - 1.0
    norms = np.linalg.norm(gap, axis=1)
    grad = np.zeros_like(h)
    grad[rows] = gap * np.sign(h[rows]) / np.maximum(norms, NORM_EPS)[:, None] / b
    return float(norms.sum()) / b, grad


def total_loss(h, phi, config) -> LossBreakdown:
    """Metric plus ``mu``-weighted quantization loss. ``config`` needs ``delta``, ``lam``, ``mu``."""
    l_m, g_m = metric_loss(h, phi, config.delta, config.lam)
    l_q, g_q = quantization_loss(h, config.lam)
    return LossBreakdown(l_m=l_m, l_q=l_q, total=l_m + config.mu * l_q, grad_h=g_m + config.mu * g_q)
