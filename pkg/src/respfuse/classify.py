"""Pairwise-vote multiclass SVM, cross-validation and the metric suite.

One binary machine is trained per unordered class pair on z-scored
features; prediction is by majority vote with ties broken by the summed
signed decision values.  Evaluation covers the stratified k-fold confusion
matrix plus feature-agreement metrics (per-pattern RMSE, Bland-Altman
limits, outlier counts) against a reference feature series.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .svm import rbf_kernel, smo_solve, train_binary_svm
from .types import FeatureSeries, PatternLabel

__all__ = [
    "SvmModel",
    "EvalReport",
    "FeatureAgreement",
    "train_ovo",
    "predict",
    "decision_matrix",
    "cross_validate",
    "evaluate_features",
    "OneVsOneSvmClassifier",
]


@dataclass(frozen=True, eq=False)
class SvmModel:
    """Standardization parameters plus one hyperplane per class pair."""

    mean: np.ndarray
    scale: np.ndarray
    class_codes: np.ndarray           # sorted unique label codes
    pairs: tuple[tuple[int, int], ...]
    weights: np.ndarray               # (n_pairs, n_features), linear part
    biases: np.ndarray
    kernel: str = "linear"
    gamma: float = 1.0
    support: tuple | None = None      # per-pair (x_sv, coef) for rbf

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def _standardize_fit(x: np.ndarray):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale == 0, 1.0, scale)
    return mean, scale


def train_ovo(x: np.ndarray, y: Sequence[int], c: float = 1.0,
              kernel: str = "linear", gamma: float = 1.0,
              tol: float = 1e-6) -> SvmModel:
    """Train one machine per class pair on standardized features."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    codes = np.unique(y)
    if codes.size < 2:
        raise ValueError("need at least two classes")
    mean, scale = _standardize_fit(x)
    xs = (x - mean) / scale
    pairs = tuple(combinations([int(cde) for cde in codes], 2))
    weights = np.zeros((len(pairs), x.shape[1]))
    biases = np.zeros(len(pairs))
    support = [] if kernel == "rbf" else None
    for row, (a, b) in enumerate(pairs):
        mask = (y == a) | (y == b)
        xp = xs[mask]
        yp = np.where(y[mask] == a, 1.0, -1.0)
        if kernel == "linear":
            weights[row], biases[row] = train_binary_svm(xp, yp, c, tol)
        elif kernel == "rbf":
            sol = smo_solve(rbf_kernel(xp, xp, gamma), yp, c, tol)
            sv = sol.alpha > 1e-12
            support.append((xp[sv], (sol.alpha * yp)[sv]))
            biases[row] = sol.bias
        else:
            raise ValueError(f"unknown kernel {kernel!r}")
    return SvmModel(mean, scale, codes, pairs, weights, biases, kernel, gamma,
                    tuple(support) if support is not None else None)


def decision_matrix(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Signed decision value of every pair machine for every sample."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xs = (x - model.mean) / model.scale
    if model.kernel == "linear":
        return xs @ model.weights.T + model.biases
    out = np.empty((xs.shape[0], model.n_pairs))
    for row, (sv, coef) in enumerate(model.support):
        out[:, row] = rbf_kernel(xs, sv, model.gamma) @ coef + model.biases[row]
    return out


def predict(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Majority vote over all pair machines.

    Ties break toward the largest summed signed decision value among the
    tied classes, then toward the lowest class code.
    """
    decisions = decision_matrix(model, x)
    n = decisions.shape[0]
    code_pos = {int(cde): k for k, cde in enumerate(model.class_codes)}
    votes = np.zeros((n, model.class_codes.size), dtype=int)
    scores = np.zeros((n, model.class_codes.size))
    for row, (a, b) in enumerate(model.pairs):
        d = decisions[:, row]
        wins_a = d >= 0
        votes[wins_a, code_pos[a]] += 1
        votes[~wins_a, code_pos[b]] += 1
        scores[:, code_pos[a]] += d
        scores[:, code_pos[b]] -= d
    best = votes.max(axis=1, keepdims=True)
    tied = votes == best
    tie_scores = np.where(tied, scores, -np.inf)
    return model.class_codes[np.argmax(tie_scores, axis=1)]


@dataclass(eq=False)
class FeatureAgreement:
    """Agreement of an extracted feature series with its reference."""

    rr_rmse: dict[str, float | None]
    amp_rmse: dict[str, float | None]
    outliers: dict[str, int]
    outlier_total: int
    outlier_ratio: float
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    cloud_mean: np.ndarray
    cloud_diff: np.ndarray

    def to_dict(self) -> dict:
        return {
            "rr_rmse": self.rr_rmse,
            "amp_rmse": self.amp_rmse,
            "outliers": self.outliers,
            "outlier_total": self.outlier_total,
            "outlier_ratio": self.outlier_ratio,
            "bland_altman": {
                "bias": self.bias,
                "sd": self.sd,
                "loa_low": self.loa_low,
                "loa_high": self.loa_high,
            },
        }


@dataclass(eq=False)
class EvalReport:
    """Classification results and optional feature-agreement metrics."""

    class_codes: list[int] = field(default_factory=list)
    confusion: np.ndarray | None = None
    accuracy: float | None = None
    fold_accuracies: list[float] = field(default_factory=list)
    agreement: FeatureAgreement | None = None

    def to_dict(self) -> dict:
        out: dict = {}
        if self.confusion is not None:
            out["classification"] = {
                "class_codes": [int(c) for c in self.class_codes],
                "class_names": [PatternLabel(c).display_name for c in self.class_codes],
                "confusion": self.confusion.tolist(),
                "accuracy": self.accuracy,
                "fold_accuracies": self.fold_accuracies,
            }
        if self.agreement is not None:
            out["feature_agreement"] = self.agreement.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _stratified_folds(y: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for code in np.unique(y):
        idx = np.flatnonzero(y == code)
        if idx.size < k:
            raise ValueError(f"class {code} has fewer than {k} samples")
        idx = rng.permutation(idx)
        for fold in range(k):
            folds[fold].extend(idx[fold::k])
    return [np.sort(np.asarray(f)) for f in folds]


def cross_validate(x: np.ndarray, y: Sequence[int], k: int = 10, c: float = 1.0,
                   seed: int = 0, kernel: str = "linear", gamma: float = 1.0,
                   tol: float = 1e-6) -> EvalReport:
    """Stratified k-fold evaluation; aggregates held-out confusion counts."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    codes = np.unique(y)
    code_pos = {int(cde): i for i, cde in enumerate(codes)}
    confusion = np.zeros((codes.size, codes.size), dtype=int)
    fold_accuracies = []
    for fold_idx in _stratified_folds(y, k, seed):
        test_mask = np.zeros(y.size, dtype=bool)
        test_mask[fold_idx] = True
        model = train_ovo(x[~test_mask], y[~test_mask], c, kernel, gamma, tol)
        predicted = predict(model, x[test_mask])
        truth = y[test_mask]
        for t, p in zip(truth, predicted):
            confusion[code_pos[int(t)], code_pos[int(p)]] += 1
        fold_accuracies.append(float(np.mean(predicted == truth)))
    accuracy = float(np.trace(confusion) / confusion.sum())
    return EvalReport([int(cde) for cde in codes], confusion, accuracy, fold_accuracies)


def _rmse(err: np.ndarray) -> float | None:
    if err.size == 0:
        return None
    return float(np.sqrt(np.mean(err ** 2)))


def _summary_rows(table: dict[str, float | None]) -> None:
    values = [v for v in table.values() if v is not None]
    table["Mean"] = float(np.mean(values)) if values else None
    table["Median"] = float(np.median(values)) if values else None


def evaluate_features(extracted: FeatureSeries, reference: FeatureSeries,
                      segments: Sequence[tuple[int, int, PatternLabel]],
                      include_invalid: bool = False) -> FeatureAgreement:
    """Per-pattern agreement between extracted and reference features.

    RMSE is computed over samples valid in both series (or over all written
    values with ``include_invalid``, which reproduces tables where apneic
    zeros count).  Bland-Altman statistics and the two-standard-deviation
    outlier counts always exclude apnea segments.
    """
    if extracted.n != reference.n or extracted.fs != reference.fs:
        raise ValueError("series must be aligned (same length and rate)")
    both = extracted.valid & reference.valid

    rr_errors: dict[str, list[np.ndarray]] = {}
    amp_errors: dict[str, list[np.ndarray]] = {}
    ba_err, ba_mean = [], []
    ba_labels = []
    for start, stop, label in segments:
        sl = slice(int(start), int(stop))
        mask = np.ones(stop - start, dtype=bool) if include_invalid else both[sl]
        name = PatternLabel(label).display_name
        rr_errors.setdefault(name, []).append(extracted.rr[sl][mask] - reference.rr[sl][mask])
        amp_errors.setdefault(name, []).append(extracted.amp[sl][mask] - reference.amp[sl][mask])
        if label != PatternLabel.APNEA:
            valid_sl = both[sl]
            err = extracted.rr[sl][valid_sl] - reference.rr[sl][valid_sl]
            mean = 0.5 * (extracted.rr[sl][valid_sl] + reference.rr[sl][valid_sl])
            ba_err.append(err)
            ba_mean.append(mean)
            ba_labels.extend([PatternLabel(label)] * err.size)
    rr_rmse = {name: _rmse(np.concatenate(errs)) for name, errs in rr_errors.items()}
    amp_rmse = {name: _rmse(np.concatenate(errs)) for name, errs in amp_errors.items()}

    if not ba_err or sum(e.size for e in ba_err) == 0:
        raise ValueError("no overlapping valid samples to evaluate")
    errors = np.concatenate(ba_err)
    means = np.concatenate(ba_mean)
    bias = float(errors.mean())
    sd = float(errors.std())
    outlier_mask = np.abs(errors - bias) > 2.0 * sd
    outliers: dict[str, int] = {PatternLabel(c).display_name: 0 for c in PatternLabel
                                if c != PatternLabel.APNEA}
    for label, flag in zip(ba_labels, outlier_mask):
        if flag:
            outliers[label.display_name] += 1

    _summary_rows(rr_rmse)
    _summary_rows(amp_rmse)
    total = int(outlier_mask.sum())
    return FeatureAgreement(
        rr_rmse=rr_rmse,
        amp_rmse=amp_rmse,
        outliers=outliers,
        outlier_total=total,
        outlier_ratio=float(total / errors.size),
        bias=bias,
        sd=sd,
        loa_low=bias - 1.96 * sd,
        loa_high=bias + 1.96 * sd,
        cloud_mean=means,
        cloud_diff=errors,
    )


class OneVsOneSvmClassifier(BaseEstimator, ClassifierMixin):
    """Estimator facade over :func:`train_ovo` / :func:`predict`."""

    def __init__(self, C: float = 1.0, kernel: str = "linear", gamma: float = 1.0,
                 tol: float = 1e-6):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol

    def fit(self, X, y):
        self.model_ = train_ovo(np.asarray(X), np.asarray(y), self.C,
                                self.kernel, self.gamma, self.tol)
        self.classes_ = self.model_.class_codes
        return self

    def predict(self, X):
        return predict(self.model_, np.asarray(X))

    def decision_function(self, X):
        return decision_matrix(self.model_, np.asarray(X))
