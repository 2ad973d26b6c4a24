"""Robust 1-D respiratory signal extraction from multi-channel observations.

The chain: project 2-D motion trajectories onto their main direction,
stack them into an observation matrix, gate out frames with large
inter-frame motion, keep the channels that correlate best with the rest,
and fuse them with a moving-window PCA whose leading component is kept
sign-continuous across window steps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .types import ObservationMatrix, RespiratorySignal
from .validation import as_float_matrix, check_fs

__all__ = [
    "Trajectory2D",
    "PcaWindowState",
    "ExtractionDiagnostics",
    "project_trajectory",
    "build_observation_matrix",
    "motion_gate",
    "bridge_invalid_rows",
    "select_channels",
    "windowed_pca_fuse",
    "extract_signal",
    "RobustSignalExtractor",
]

MOTION_THRESHOLD = 5.0
MOTION_REINIT_DELAY_S = 2.0
KEEP_CHANNELS = 5
PCA_WINDOW_S = 30.0


@dataclass(frozen=True, eq=False)
class Trajectory2D:
    """A tracked 2-D point trajectory (x, y per frame, in pixels)."""

    points: np.ndarray
    fs: float

    def __post_init__(self):
        pts = as_float_matrix(self.points, "points")
        if pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError(f"trajectory must be (m, 2) with m >= 2, got {pts.shape}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "fs", check_fs(self.fs))


@dataclass(frozen=True, eq=False)
class PcaWindowState:
    """Bookkeeping of one fusion run: window length, final coefficients,
    and which channels were kept."""

    window_len: int
    prev_coeffs: np.ndarray
    selected_channels: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class ExtractionDiagnostics:
    n_windows: int
    sign_corrections: int
    alignment_dots: np.ndarray  # dot of consecutive aligned components
    state: PcaWindowState


def project_trajectory(trajectory) -> np.ndarray:
    """Reduce a 2-D trajectory to signed positions along its main motion axis.

    The axis is the first singular direction of the mean-centered point
    cloud; output ``k`` is the centered point ``k`` projected onto it.  The
    axis sign is canonicalized so the dominant coordinate is positive.
    """
    pts = trajectory.points if isinstance(trajectory, Trajectory2D) else \
        as_float_matrix(trajectory, "trajectory")
    centered = pts - pts.mean(axis=0)
    if not np.any(centered):
        raise ValueError("degenerate trajectory: all points identical")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    direction = vt[0]
    if direction[np.argmax(np.abs(direction))] < 0:
        direction = -direction
    return centered @ direction


def build_observation_matrix(signals, fs: float = 10.0) -> ObservationMatrix:
    """Column-stack equal-length 1-D signals, preserving input order."""
    signals = list(signals)
    if not signals:
        raise ValueError("need at least one signal")
    length = len(signals[0])
    if any(len(s) != length for s in signals):
        raise ValueError("signals must have equal lengths")
    return ObservationMatrix(np.column_stack(signals), fs)


def motion_gate(o: ObservationMatrix, threshold: float = MOTION_THRESHOLD,
                reinit_delay_s: float = MOTION_REINIT_DELAY_S) -> np.ndarray:
    """Validity mask over rows based on inter-frame motion energy.

    A frame whose squared row difference exceeds ``threshold`` (strictly)
    is marked unusable, together with every frame within the re-init delay
    after the latest marked frame.
    """
    diffs = np.diff(o.data, axis=0)
    energy = np.einsum("ij,ij->i", diffs, diffs)
    marked = np.flatnonzero(energy > threshold) + 1
    valid = np.ones(o.n_samples, dtype=bool)
    if marked.size:
        delay = int(round(reinit_delay_s * o.fs))
        # distance to the latest marked frame at or before each row
        last = np.full(o.n_samples, -(delay + 1))
        last[marked] = marked
        last = np.maximum.accumulate(last)
        valid = (np.arange(o.n_samples) - last) > delay
        valid[marked] = False
    return valid


def bridge_invalid_rows(o: ObservationMatrix, valid: np.ndarray) -> ObservationMatrix:
    """Linearly interpolate gated rows so the matrix stays rectangular."""
    if valid.all():
        return o
    if not valid.any():
        raise ValueError("no valid frames left after gating")
    idx = np.arange(o.n_samples)
    data = o.data.copy()
    good = np.flatnonzero(valid)
    for col in range(o.n_channels):
        data[~valid, col] = np.interp(idx[~valid], good, data[good, col])
    return ObservationMatrix(data, o.fs)


def _correlation_matrix(data: np.ndarray) -> np.ndarray:
    centered = data - data.mean(axis=0)
    norms = np.linalg.norm(centered, axis=0)
    flat = norms == 0
    safe = np.where(flat, 1.0, norms)
    corr = (centered / safe).T @ (centered / safe)
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    return corr


def select_channels(o: ObservationMatrix, keep: int = KEEP_CHANNELS):
    """Keep the channels with the largest mean correlation to all channels.

    The mean includes the self term; zero-variance channels correlate 0
    with everything.  Returns the reduced matrix and the kept indices in
    rank order.
    """
    if keep < 1:
        raise ValueError("keep must be positive")
    if o.n_channels < keep:
        warnings.warn(f"only {o.n_channels} channels available, keeping all",
                      stacklevel=2)
        keep = o.n_channels
    corr = _correlation_matrix(o.data)
    mean_corr = corr.mean(axis=0)
    ranked = np.argsort(-mean_corr, kind="stable")[:keep]
    indices = [int(i) for i in ranked]
    return ObservationMatrix(o.data[:, indices], o.fs), indices


def _leading_components(data: np.ndarray, window: int) -> np.ndarray:
    """Leading PCA coefficient vector of every length-``window`` slice.

    Windows are mean-centered; covariances come from cumulative sums so the
    cost is O(m n^2) plus a batched symmetric eigendecomposition.
    """
    m, n = data.shape
    centered = data - data.mean(axis=0)
    outer = np.einsum("ti,tj->tij", centered, centered)
    cum_outer = np.concatenate([np.zeros((1, n, n)), np.cumsum(outer, axis=0)])
    cum_sum = np.concatenate([np.zeros((1, n)), np.cumsum(centered, axis=0)])
    k = m - window + 1
    s2 = cum_outer[window:window + k] - cum_outer[:k]
    s1 = cum_sum[window:window + k] - cum_sum[:k]
    cov = s2 / window - np.einsum("ki,kj->kij", s1, s1) / window ** 2
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, -1]


def _align_signs(components: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chain consecutive leading components to a common sign.

    Each component is flipped when its inner product with the previously
    aligned one is negative, so the fused output cannot jump polarity at a
    window step.  Returns the aligned components and the consecutive dots.
    """
    aligned = components.copy()
    first = aligned[0]
    if first[np.argmax(np.abs(first))] < 0:
        aligned[0] = -first
    dots = np.empty(len(aligned) - 1) if len(aligned) > 1 else np.empty(0)
    for k in range(1, len(aligned)):
        d = float(aligned[k] @ aligned[k - 1])
        if d < 0:
            aligned[k] = -aligned[k]
            d = -d
        dots[k - 1] = d
    return aligned, dots


def windowed_pca_fuse(o_max: ObservationMatrix, window_s: float = PCA_WINDOW_S,
                      stride: int = 1, diagnostics: bool = False):
    """Fuse channels into one signal via sign-continuous moving-window PCA.

    Sample ``k`` is the raw observation row projected onto the leading
    principal direction of the window starting at ``k`` (the final window
    serves the trailing rows).  The global sign is fixed by positive
    correlation with the channel mean.
    """
    window = int(round(window_s * o_max.fs))
    if window < 2:
        raise ValueError("window must span at least two samples")
    if window > o_max.n_samples:
        raise ValueError("window longer than the signal")
    if stride < 1:
        raise ValueError("stride must be positive")
    data = o_max.data
    m = o_max.n_samples
    components = _leading_components(data, window)
    if stride > 1:
        components = components[::stride]
    aligned, dots = _align_signs(components)
    n_flips = int(np.sum(np.einsum("ki,ki->k", components, aligned) < 0))
    # map output samples to their window's component
    win_idx = np.minimum(np.arange(m) // stride, len(aligned) - 1)
    per_row = aligned[win_idx]
    fused = np.einsum("ij,ij->i", data, per_row)
    reference = data.mean(axis=1)
    ref_c = reference - reference.mean()
    fused_c = fused - fused.mean()
    if float(fused_c @ ref_c) < 0:
        fused = -fused
        aligned = -aligned
    signal = RespiratorySignal(fused, o_max.fs)
    if not diagnostics:
        return signal
    state = PcaWindowState(window, aligned[-1], tuple(range(o_max.n_channels)))
    return signal, ExtractionDiagnostics(len(aligned), n_flips, dots, state)


def extract_signal(o: ObservationMatrix, threshold: float = MOTION_THRESHOLD,
                   reinit_delay_s: float = MOTION_REINIT_DELAY_S,
                   keep: int = KEEP_CHANNELS, window_s: float = PCA_WINDOW_S,
                   diagnostics: bool = False):
    """Full extraction: gate, bridge, select channels, fuse.

    The returned signal's validity mask carries the motion gate; gated rows
    hold interpolated values.
    """
    valid = motion_gate(o, threshold, reinit_delay_s)
    bridged = bridge_invalid_rows(o, valid)
    reduced, indices = select_channels(bridged, keep)
    result = windowed_pca_fuse(reduced, window_s, diagnostics=diagnostics)
    if diagnostics:
        fused, diag = result
        diag = ExtractionDiagnostics(diag.n_windows, diag.sign_corrections,
                                     diag.alignment_dots,
                                     PcaWindowState(diag.state.window_len,
                                                    diag.state.prev_coeffs,
                                                    tuple(indices)))
        return RespiratorySignal(fused.samples, fused.fs, valid), diag
    return RespiratorySignal(result.samples, result.fs, valid)


class RobustSignalExtractor(BaseEstimator, TransformerMixin):
    """Array-in, array-out facade over :func:`extract_signal`.

    ``X`` is an (n_samples, n_channels) observation block; ``transform``
    returns the fused 1-D signal.  The estimator is stateless, so ``fit``
    only validates parameters; per-call details land in ``diagnostics_``.
    """

    def __init__(self, fs: float = 10.0, motion_threshold: float = MOTION_THRESHOLD,
                 reinit_delay_s: float = MOTION_REINIT_DELAY_S,
                 keep_channels: int = KEEP_CHANNELS, window_s: float = PCA_WINDOW_S):
        self.fs = fs
        self.motion_threshold = motion_threshold
        self.reinit_delay_s = reinit_delay_s
        self.keep_channels = keep_channels
        self.window_s = window_s

    def fit(self, X=None, y=None):
        check_fs(self.fs)
        return self

    def transform(self, X) -> np.ndarray:
        o = ObservationMatrix(as_float_matrix(X, "X"), self.fs)
        signal, diag = extract_signal(
            o, self.motion_threshold, self.reinit_delay_s,
            self.keep_channels, self.window_s, diagnostics=True)
        self.diagnostics_ = diag
        self.valid_mask_ = signal.valid
        return np.asarray(signal.samples)
