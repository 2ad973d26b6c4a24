"""Dataset expansion: convex subject mixing and rate redistribution.

New segments are built by mixing two different subjects' renditions of the
same protocol entry with a random weight, then time-rescaling so the rate
lands on a random target inside the pattern's range.  The Kussmaul class is
always synthesized from hyperpnea material shifted into the Kussmaul rate
band, mirroring how the deep-and-fast pattern is obtained in practice.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import detect_peaks, sgolay_smooth
from .prep import resample_by_factor
from .types import LabeledSegment, PatternLabel, RespiratorySignal
from .validation import check_unit_interval

__all__ = [
    "mix_signals",
    "measure_median_rr",
    "redistribute_rr",
    "substitute_kussmaul",
    "build_dataset",
]

KUSSMAUL_RR_RANGE = (20.0, 35.0)


def mix_signals(a: RespiratorySignal, b: RespiratorySignal, p: float) -> RespiratorySignal:
    """Convex combination ``p*a + (1-p)*b``; valid where both are valid."""
    check_unit_interval(p, "p")
    if a.n != b.n:
        raise ValueError("signals must have equal length")
    if a.fs != b.fs:
        raise ValueError("signals must share a sampling rate")
    return RespiratorySignal(p * a.samples + (1.0 - p) * b.samples, a.fs,
                             a.valid & b.valid)


def measure_median_rr(signal: RespiratorySignal) -> float:
    """Median breathing rate from smoothed peak spacing, in breaths/min."""
    peaks = detect_peaks(sgolay_smooth(signal))
    if peaks.n < 2:
        raise ValueError("no rate to measure: fewer than two breaths detected")
    return float(60.0 / np.median(np.diff(peaks.locations)))


def redistribute_rr(seg: LabeledSegment, target_rr: float) -> LabeledSegment:
    """Time-rescale a segment so its median rate hits ``target_rr``.

    The duration changes by the same factor; label and target range are
    preserved.  Apnea has no rate to redistribute.
    """
    lo, hi = seg.target_rr_range
    if not lo <= target_rr <= hi:
        raise ValueError(f"target {target_rr} outside range ({lo}, {hi})")
    if seg.label == PatternLabel.APNEA:
        raise ValueError("no rate to redistribute for apnea")
    current = measure_median_rr(seg.signal)
    factor = current / float(target_rr)
    samples = resample_by_factor(np.asarray(seg.signal.samples), factor)
    valid = np.interp(np.linspace(0.0, 1.0, len(samples)),
                      np.linspace(0.0, 1.0, seg.signal.n),
                      seg.signal.valid.astype(float)) > 0.5
    signal = RespiratorySignal(samples, seg.signal.fs, valid)
    provenance = dict(seg.provenance or {})
    provenance.update({"target_rr": float(target_rr), "factor": float(factor)})
    return LabeledSegment(signal, seg.label, seg.target_rr_range,
                          provenance=provenance)


def substitute_kussmaul(hyperpnea: Sequence[LabeledSegment], seed: int = 0,
                        rr_range: tuple[float, float] = KUSSMAUL_RR_RANGE) -> list[LabeledSegment]:
    """Relabel hyperpnea segments as Kussmaul, shifted into its rate band."""
    hyperpnea = list(hyperpnea)
    if not hyperpnea:
        raise ValueError("empty hyperpnea pool")
    rng = np.random.default_rng(seed)
    out = []
    for seg in hyperpnea:
        if seg.label != PatternLabel.HYPERPNEA:
            raise ValueError("substitution pool must contain hyperpnea segments")
        target = float(rng.uniform(*rr_range))
        shifted = redistribute_rr(
            LabeledSegment(seg.signal, seg.label, rr_range, provenance=seg.provenance),
            target)
        out.append(LabeledSegment(shifted.signal, PatternLabel.KUSSMAUL, rr_range,
                                  provenance=shifted.provenance))
    return out


def _group_pools(subjects: Mapping[str, Sequence[LabeledSegment]]):
    """Segments per (label, protocol position), tagged with their subject."""
    pools: dict[tuple[PatternLabel, int], list[tuple[str, LabeledSegment]]] = defaultdict(list)
    for subject in sorted(subjects):
        position: dict[PatternLabel, int] = defaultdict(int)
        for seg in subjects[subject]:
            key = (seg.label, position[seg.label])
            position[seg.label] += 1
            pools[key].append((subject, seg))
    return pools


def _mix_pool(pool, rng) -> tuple[LabeledSegment, dict]:
    """Mix one pair of different-subject segments from a pool."""
    subjects = sorted({s for s, _ in pool})
    sa, sb = rng.choice(subjects, size=2, replace=False)
    seg_a = next(seg for s, seg in pool if s == sa)
    seg_b = next(seg for s, seg in pool if s == sb)
    n = min(seg_a.signal.n, seg_b.signal.n)
    p = float(rng.uniform())
    mixed = mix_signals(seg_a.signal.slice(0, n), seg_b.signal.slice(0, n), p)
    provenance = {"sources": [str(sa), str(sb)], "p": p}
    return LabeledSegment(mixed, seg_a.label, seg_a.target_rr_range,
                          provenance=provenance), provenance


def build_dataset(subjects: Mapping[str, Sequence[LabeledSegment]],
                  per_class: int = 1000, seed: int = 0) -> list[LabeledSegment]:
    """Expand recorded segments to ``per_class`` samples per pattern.

    Every output mixes two random different subjects' renditions of one
    protocol entry, then redistributes the rate uniformly over that entry's
    target range.  Apnea is mixed but not redistributed.  Kussmaul outputs
    are always synthesized from the hyperpnea pools.  Deterministic for a
    fixed seed; each output segment has its own derived RNG stream.
    """
    pools = _group_pools(subjects)
    by_label: dict[PatternLabel, list] = defaultdict(list)
    for (label, _pos), pool in sorted(pools.items()):
        if len({s for s, _ in pool}) >= 2:
            by_label[label].append(pool)

    dataset: list[LabeledSegment] = []
    for label in PatternLabel:
        source_label = PatternLabel.HYPERPNEA if label == PatternLabel.KUSSMAUL else label
        pool_list = by_label.get(source_label)
        if not pool_list:
            raise ValueError(
                f"insufficient source material for {label.display_name}: "
                "need the pattern recorded by at least two subjects")
        for k in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence((seed, int(label), k)))
            pool = pool_list[int(rng.integers(len(pool_list)))]
            mixed, provenance = _mix_pool(pool, rng)
            if label == PatternLabel.APNEA:
                out = LabeledSegment(mixed.signal, label, (0.0, 0.0),
                                     provenance=provenance)
            elif label == PatternLabel.KUSSMAUL:
                target = float(rng.uniform(*KUSSMAUL_RR_RANGE))
                shifted = redistribute_rr(
                    LabeledSegment(mixed.signal, PatternLabel.HYPERPNEA,
                                   KUSSMAUL_RR_RANGE, provenance=provenance),
                    target)
                out = LabeledSegment(shifted.signal, label, KUSSMAUL_RR_RANGE,
                                     provenance=shifted.provenance)
            else:
                lo, hi = mixed.target_rr_range
                target = float(rng.uniform(lo, hi))
                out = redistribute_rr(mixed, target)
            dataset.append(out)
    return dataset
