"""Feature-set refinement: artifact rules, redundant fusion, variances.

Artifact correction invalidates rate discontinuities, untrustworthy
low-amplitude stretches and fragments, then patches short gaps; fusion
merges the peak- and ridge-based sets segment-wise into one robust set;
moving variances of the fused rate and amplitude feed the classifier.

Mask semantics: artifact correction writes gap-fill values but leaves them
flagged invalid, which keeps the operation idempotent and lets fusion
judge each input on measured samples only.  Fusion's own fill is terminal,
so its filled samples count as valid; samples that stay unknown are
written as 0 and flagged invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import FeatureSeries, FeatureVector
from .validation import check_fs

__all__ = [
    "MovingVariance",
    "artifact_correct",
    "fuse_features",
    "moving_variance",
    "segment_features",
]

MAX_RR_STEP = 5.0          # breaths/min
STEP_PAIR_WINDOW_S = 10.0
LOW_AMP_THRESHOLD = 0.05   # n.u.
LOW_AMP_STABILITY = 0.45   # (max - min) / median bound
MIN_SEGMENT_S = 10.0
FILL_DONORS = 5
CORRECT_MAX_GAP_S = 10.0
FUSE_MEDIAN_AGREEMENT = 3.0  # breaths/min
FUSE_STABLE_RUN_S = 10.0
FUSE_MAX_GAP_S = 5.0
VARIANCE_WINDOW_S = 30.0


@dataclass(frozen=True, eq=False)
class MovingVariance:
    """Centered moving variances of rate and amplitude."""

    rr_var: np.ndarray
    a_var: np.ndarray
    valid: np.ndarray
    fs: float


def _runs(mask: np.ndarray):
    """Half-open (start, stop) spans of consecutive True values."""
    if mask.size == 0:
        return []
    edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
    starts = list(edges[mask[edges + 1]] + 1)
    stops = list(edges[~mask[edges + 1]] + 1)
    if mask[0]:
        starts.insert(0, 0)
    if mask[-1]:
        stops.append(mask.size)
    return list(zip(starts, stops))


def _step_marks(rr: np.ndarray, valid: np.ndarray, max_step: float) -> np.ndarray:
    """Indices k where |rr[k] - rr[k-1]| exceeds the step bound and both
    samples are valid."""
    both = valid[1:] & valid[:-1]
    jump = np.abs(np.diff(rr)) > max_step
    return np.flatnonzero(both & jump) + 1


def _fill_gaps(channels: list[np.ndarray], valid: np.ndarray, max_gap: int,
               donors: int) -> np.ndarray:
    """Write a moving median of the last donor values into short gaps.

    Returns the mask of samples that received a fill value.  Longer gaps
    (and gaps with no donors) are written as 0.  Channel arrays are
    modified in place.
    """
    filled = np.zeros(valid.size, dtype=bool)
    history: list[int] = []
    gap_runs = {start: stop for start, stop in _runs(~valid)}
    k = 0
    while k < valid.size:
        if valid[k]:
            history.append(k)
            if len(history) > donors:
                history.pop(0)
            k += 1
            continue
        stop = gap_runs[k]
        if (stop - k) <= max_gap and history:
            for ch in channels:
                ch[k:stop] = np.median(ch[history])
            filled[k:stop] = True
        else:
            for ch in channels:
                ch[k:stop] = 0.0
        k = stop
    return filled


def artifact_correct(f: FeatureSeries,
                     max_rr_step: float = MAX_RR_STEP,
                     step_pair_window_s: float = STEP_PAIR_WINDOW_S,
                     low_amp_threshold: float = LOW_AMP_THRESHOLD,
                     min_segment_s: float = MIN_SEGMENT_S,
                     max_gap_s: float = CORRECT_MAX_GAP_S) -> FeatureSeries:
    """Invalidate unreliable stretches of a feature set and patch small gaps.

    Rules, in order:

    1. mark rate steps larger than ``max_rr_step``; when two consecutive
       marks fall within ``step_pair_window_s`` the enclosed section
       (inclusive) is invalidated;
    2. low-amplitude stretches (below ``low_amp_threshold``) survive only
       if they span at least five median breath periods, their median rate
       exceeds 5 breaths/min, and their rate range stays below 0.45 of the
       median;
    3. any remaining valid fragment shorter than ``min_segment_s`` is
       invalidated;
    4. invalid gaps up to ``max_gap_s`` are written with a moving median of
       the last five valid values, longer ones with 0.  Both stay flagged
       invalid, which makes the correction idempotent.
    """
    rr = f.rr.copy()
    amp = f.amp.copy()
    width = None if f.width is None else f.width.copy()
    valid = f.valid.copy()
    fs = f.fs

    # rule 1: paired discontinuities
    marks = _step_marks(rr, valid, max_rr_step)
    pair_window = step_pair_window_s * fs
    for prev, cur in zip(marks[:-1], marks[1:]):
        if (cur - prev) <= pair_window:
            valid[prev:cur + 1] = False

    # rule 2: low-amplitude acceptance conditions
    for start, stop in _runs(valid & (amp < low_amp_threshold)):
        seg_rr = rr[start:stop]
        median = float(np.median(seg_rr))
        duration = (stop - start) / fs
        keep = (
            median > 5.0
            and duration >= 5.0 * 60.0 / median
            and (seg_rr.max() - seg_rr.min()) / median < LOW_AMP_STABILITY
        )
        if not keep:
            valid[start:stop] = False

    # rule 3: drop short fragments
    min_len = min_segment_s * fs
    for start, stop in _runs(valid):
        if (stop - start) < min_len:
            valid[start:stop] = False

    # rule 4: patch gaps
    channels = [rr, amp] if width is None else [rr, amp, width]
    _fill_gaps(channels, valid, int(round(max_gap_s * fs)), FILL_DONORS)
    return FeatureSeries(rr, amp, valid, fs, width)


def _stable_run_lengths(marks: np.ndarray, n: int, boundaries: np.ndarray) -> np.ndarray:
    """Length (samples) of each fused segment's enclosing mark-free run of
    one input, given that input's own marks."""
    own = np.concatenate([[0], marks, [n]])
    lengths = np.empty(boundaries.size - 1)
    for s in range(boundaries.size - 1):
        start = boundaries[s]
        left = own[own <= start].max()
        right = own[own > start].min()
        lengths[s] = right - left
    return lengths


def fuse_features(fp: FeatureSeries, fs_: FeatureSeries,
                  max_rr_step: float = MAX_RR_STEP,
                  median_agreement: float = FUSE_MEDIAN_AGREEMENT,
                  stable_run_s: float = FUSE_STABLE_RUN_S,
                  max_gap_s: float = FUSE_MAX_GAP_S) -> FeatureSeries:
    """Merge the peak- and ridge-based feature sets into one robust set.

    Rate jumps in either input split the timeline into segments.  Per
    segment: when the two median rates agree within ``median_agreement``
    the element-wise mean is used; otherwise the input that has been
    jump-free for at least ``stable_run_s`` wins, ties broken toward the
    higher mean rate.  Samples valid in neither input become invalid, then
    gaps up to ``max_gap_s`` are filled with a moving median of the last
    five valid fused values (these count as valid); anything still unknown
    is 0 and invalid.
    """
    if fp.n != fs_.n or fp.fs != fs_.fs:
        raise ValueError("feature sets must share length and sampling rate")
    n = fp.n
    fs = fp.fs

    marks_p = _step_marks(fp.rr, fp.valid, max_rr_step)
    marks_s = _step_marks(fs_.rr, fs_.valid, max_rr_step)
    boundaries = np.unique(np.concatenate([[0], marks_p, marks_s, [n]]))
    runs_p = _stable_run_lengths(marks_p, n, boundaries)
    runs_s = _stable_run_lengths(marks_s, n, boundaries)

    rr = np.zeros(n)
    amp = np.zeros(n)
    valid = np.zeros(n, dtype=bool)
    stable = stable_run_s * fs
    for seg in range(boundaries.size - 1):
        a, b = int(boundaries[seg]), int(boundaries[seg + 1])
        vp = fp.valid[a:b]
        vs = fs_.valid[a:b]
        has_p, has_s = bool(vp.any()), bool(vs.any())
        if not has_p and not has_s:
            continue
        med_p = float(np.median(fp.rr[a:b][vp])) if has_p else None
        med_s = float(np.median(fs_.rr[a:b][vs])) if has_s else None
        if has_p and has_s and abs(med_p - med_s) < median_agreement:
            both = vp & vs
            only_p = vp & ~vs
            only_s = vs & ~vp
            rr[a:b][both] = 0.5 * (fp.rr[a:b][both] + fs_.rr[a:b][both])
            amp[a:b][both] = 0.5 * (fp.amp[a:b][both] + fs_.amp[a:b][both])
            rr[a:b][only_p] = fp.rr[a:b][only_p]
            amp[a:b][only_p] = fp.amp[a:b][only_p]
            rr[a:b][only_s] = fs_.rr[a:b][only_s]
            amp[a:b][only_s] = fs_.amp[a:b][only_s]
            valid[a:b] = vp | vs
            continue
        candidates = []
        if has_p:
            candidates.append(("p", runs_p[seg] >= stable,
                               float(np.mean(fp.rr[a:b][vp]))))
        if has_s:
            candidates.append(("s", runs_s[seg] >= stable,
                               float(np.mean(fs_.rr[a:b][vs]))))
        qualified = [c for c in candidates if c[1]]
        chosen = max(qualified or candidates, key=lambda c: c[2])[0]
        src = fp if chosen == "p" else fs_
        mask = vp if chosen == "p" else vs
        rr[a:b][mask] = src.rr[a:b][mask]
        amp[a:b][mask] = src.amp[a:b][mask]
        valid[a:b] = mask

    filled = _fill_gaps([rr, amp], valid, int(round(max_gap_s * fs)), FILL_DONORS)
    valid = valid | filled
    return FeatureSeries(rr, amp, valid, fs)


def moving_variance(f: FeatureSeries, window_s: float = VARIANCE_WINDOW_S) -> MovingVariance:
    """Centered moving variances of rate and amplitude over valid samples.

    Invalid samples do not enter the sums; a window covering less than 50%
    valid samples is flagged invalid.  Edge windows are truncated.
    """
    window = int(round(window_s * f.fs))
    if window < 2:
        raise ValueError("variance window must span at least two samples")
    if window > f.n:
        raise ValueError("variance window longer than the series")
    n = f.n
    half = window // 2
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx - half + window, 0, n)
    weights = f.valid.astype(float)
    counts = np.concatenate([[0.0], np.cumsum(weights)])
    count = counts[hi] - counts[lo]
    safe = np.maximum(count, 1.0)

    def var_of(values: np.ndarray) -> np.ndarray:
        centered = np.where(f.valid, values - values[f.valid].mean()
                            if f.valid.any() else values, 0.0)
        c1 = np.concatenate([[0.0], np.cumsum(centered)])
        c2 = np.concatenate([[0.0], np.cumsum(centered ** 2)])
        s1 = c1[hi] - c1[lo]
        s2 = c2[hi] - c2[lo]
        return np.maximum(s2 / safe - (s1 / safe) ** 2, 0.0)

    valid = count / (hi - lo) >= 0.5
    return MovingVariance(var_of(f.rr), var_of(f.amp), valid, f.fs)


def _median_or_fallback(values: np.ndarray, valid: np.ndarray) -> float:
    """Median over valid samples; over the written values when none are."""
    if valid.any():
        return float(np.median(values[valid]))
    return float(np.median(values))


def segment_features(f: FeatureSeries, variances: MovingVariance,
                     segment: tuple[int, int]) -> FeatureVector:
    """Medians of rate, amplitude and their variances over one segment.

    Requires at least 10 s of samples.  When a channel has no valid sample
    in the segment its median falls back to the written (filled/zeroed)
    values, so fully apneic segments yield an all-zero vector instead of
    failing.
    """
    start, stop = (int(v) for v in segment)
    if not (0 <= start < stop <= f.n):
        raise ValueError(f"segment ({start}, {stop}) out of bounds")
    if (stop - start) < MIN_SEGMENT_S * f.fs:
        raise ValueError("unusable segment: shorter than 10 s")
    sl = slice(start, stop)
    return FeatureVector(
        rr_med=_median_or_fallback(f.rr[sl], f.valid[sl]),
        a_med=_median_or_fallback(f.amp[sl], f.valid[sl]),
        rr_var_med=max(_median_or_fallback(variances.rr_var[sl], variances.valid[sl]), 0.0),
        a_var_med=max(_median_or_fallback(variances.a_var[sl], variances.valid[sl]), 0.0),
    )
