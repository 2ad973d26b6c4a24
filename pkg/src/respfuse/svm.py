"""Soft-margin SVM training via sequential minimal optimization.

The dual problem is solved with second-order working-set selection under
the equality constraint, stopping on the exact duality gap (the primal is
minimized over the bias in closed form at every check).  Linear problems
get an explicit weight vector; a Gaussian kernel is available for the
kernelized variant used behind a flag by the classifier.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = ["SmoSolution", "smo_solve", "train_binary_svm", "rbf_kernel"]

_TAU = 1e-12
_BOUND_EPS = 1e-14


@dataclass(frozen=True, eq=False)
class SmoSolution:
    alpha: np.ndarray
    bias: float
    gap: float
    iterations: int


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (np.sum(a ** 2, axis=1)[:, None] + np.sum(b ** 2, axis=1)[None, :]
          - 2.0 * a @ b.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _duality_gap(y, alpha, grad, c):
    """Exact primal-dual gap; the primal is minimized over the bias."""
    decision = y * (grad + 1.0)  # K (alpha*y), no bias
    dual = alpha.sum() - 0.5 * float(alpha @ (grad + 1.0))
    residual = 1.0 - y * decision
    candidates = np.unique(residual * y)
    if candidates.size > 4096:
        candidates = candidates[:: candidates.size // 4096 + 1]
    hinge = np.maximum(0.0, residual[None, :] - y[None, :] * candidates[:, None]).sum(axis=1)
    primal = 0.5 * float(alpha @ (grad + 1.0)) + c * float(hinge.min())
    return primal - dual


def _bias(y, alpha, grad, c):
    minus_yg = -y * grad
    free = (alpha > 1e-9) & (alpha < c - 1e-9)
    if free.any():
        return float(np.mean(minus_yg[free]))
    pos = y > 0
    up = (pos & (alpha < c - _BOUND_EPS)) | (~pos & (alpha > _BOUND_EPS))
    low = (pos & (alpha > _BOUND_EPS)) | (~pos & (alpha < c - _BOUND_EPS))
    # KKT brackets the bias: b >= -y_i G_i on the "up" set, <= on the "low" set
    m = np.max(np.where(up, minus_yg, -np.inf))
    big_m = np.min(np.where(low, minus_yg, np.inf))
    return float((m + big_m) / 2.0)


def smo_solve(kernel: np.ndarray, y: np.ndarray, c: float = 1.0, tol: float = 1e-6,
              max_iter: int = 500_000, check_every: int = 512) -> SmoSolution:
    """Maximize the dual for a precomputed kernel matrix.

    Stops when the duality gap falls below ``tol`` (or at numerical
    stationarity, whichever comes first).
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise ValueError("labels must contain both classes, coded +1/-1")
    diag = np.ascontiguousarray(np.diag(kernel))
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - sum(a)
    pos = y > 0
    it = 0
    gap = np.inf
    while it < max_iter:
        yg = y * grad
        up = (pos & (alpha < c - _BOUND_EPS)) | (~pos & (alpha > _BOUND_EPS))
        low = (pos & (alpha > _BOUND_EPS)) | (~pos & (alpha < c - _BOUND_EPS))
        if not up.any() or not low.any():
            gap = _duality_gap(y, alpha, grad, c)
            break
        score_up = np.where(up, -yg, -np.inf)
        i = int(np.argmax(score_up))
        m = score_up[i]
        big_m = float(np.min(np.where(low, -yg, np.inf)))
        if m - big_m < 1e-12:
            gap = _duality_gap(y, alpha, grad, c)
            break
        k_i = kernel[i]
        # second-order selection of the partner index
        improvement = m + yg
        curvature = np.maximum(diag[i] + diag - 2.0 * k_i, _TAU)
        eligible = low & (improvement > _TAU)
        objective = np.where(eligible, -(improvement ** 2) / curvature, np.inf)
        j = int(np.argmin(objective))
        k_j = kernel[j]
        quad = max(diag[i] + diag[j] - 2.0 * kernel[i, j], _TAU)
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            else:
                if aj > c:
                    aj, ai = c, c + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
            else:
                if aj < 0:
                    aj, ai = 0.0, total
            if total > c:
                if aj > c:
                    aj, ai = c, total - c
            else:
                if ai < 0:
                    ai, aj = 0.0, total
        d_i, d_j = ai - alpha[i], aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        grad += (y[i] * d_i) * (y * k_i) + (y[j] * d_j) * (y * k_j)
        it += 1
        if it % check_every == 0:
            gap = _duality_gap(y, alpha, grad, c)
            if gap < tol:
                break
    if gap > tol:
        gap = _duality_gap(y, alpha, grad, c)
        if gap > tol:
            warnings.warn(f"SMO stopped with duality gap {gap:.3g} > tol {tol:.3g}",
                          stacklevel=2)
    return SmoSolution(alpha, _bias(y, alpha, grad, c), gap, it)


def train_binary_svm(x: np.ndarray, y: np.ndarray, c: float = 1.0,
                     tol: float = 1e-6, max_iter: int = 500_000):
    """Train a linear soft-margin SVM; returns ``(w, b)``.

    The decision function is ``f(v) = w @ v + b``.  Inputs are expected to
    be standardized by the caller.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("x must be (n_samples, n_features) matching y")
    solution = smo_solve(x @ x.T, y, c, tol, max_iter)
    w = x.T @ (solution.alpha * y)
    return w, solution.bias
