"""Shared test utilities: finite-difference gradients and scalar-loop oracles."""

from __future__ import annotations

from typing import Callable

import numpy as np

from tempatt.numeric import Matrix

FD_STEP = 1e-5
GRAD_RTOL = 1e-4


def fd_gradient(loss_fn: Callable[[], float], param: Matrix, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of ``loss_fn`` w.r.t. ``param``.

    ``loss_fn`` must recompute the loss from the current (mutated) parameter
    values; the parameter array is perturbed in place and restored.
    """
    grad = np.zeros_like(param.array)
    flat = param.array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        lp = loss_fn()
        flat[i] = orig - step
        lm = loss_fn()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2.0 * step)
    return grad


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Elementwise |a-b| / max(|a|, |b|, floor), reduced with max."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def matmul_loops(a: Matrix, b: Matrix) -> list[list[float]]:
    """Naive triple-loop matrix product (independent of numpy's matmul)."""
    n, k, m = a.rows, a.cols, b.cols
    aa, bb = a.tolist(), b.tolist()
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += aa[i][p] * bb[p][j]
            out[i][j] = s
    return out


def layer_norm_loops(
    row: list[float], gain: list[float], bias: list[float], eps: float
) -> list[float]:
    """Scalar-loop layer norm of a single row."""
    m = len(row)
    mu = sum(row) / m
    var = sum((v - mu) ** 2 for v in row) / m
    return [gain[j] * (row[j] - mu) / (var + eps) ** 0.5 + bias[j] for j in range(m)]
