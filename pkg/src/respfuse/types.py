"""Shared domain types for respiratory signal processing.

Conventions used throughout the package:

* amplitudes are in normalized units (n.u.); 1 n.u. is the amplitude of the
  calibration (normal breathing) oscillation,
* rates are breaths/min, sampling rates Hz, durations seconds,
* every per-sample series carries a boolean validity mask.  Invalid samples
  always keep a written value (0.0 for "zeroed" samples, an interpolated
  estimate for filled ones) so consumers can choose between mask-aware and
  value-based statistics.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .validation import (
    as_bool_vector,
    as_float_matrix,
    as_float_vector,
    check_finite,
    check_fs,
)

__all__ = [
    "RecordError",
    "PatternLabel",
    "RespiratorySignal",
    "ObservationMatrix",
    "FeatureSeries",
    "FeatureVector",
    "LabeledSegment",
    "validate_record",
]


class RecordError(ValueError):
    """A raw record violates the domain invariants."""


class PatternLabel(enum.IntEnum):
    """The nine breathing pattern classes, with stable persisted codes."""

    BRADYPNEA = 0
    EUPNEA = 1
    HYPOPNEA = 2
    HYPERPNEA = 3
    TACHYPNEA = 4
    KUSSMAUL = 5
    CHEYNE_STOKES = 6
    BIOTS = 7
    APNEA = 8

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def from_name(cls, name: str) -> "PatternLabel":
        """Parse a pattern name, tolerant of spacing/punctuation variants."""
        key = "".join(ch for ch in name.lower() if ch.isalnum())
        try:
            return _NAME_LOOKUP[key]
        except KeyError:
            raise ValueError(f"unknown pattern name: {name!r}") from None


_DISPLAY_NAMES = {
    PatternLabel.BRADYPNEA: "Bradypnea",
    PatternLabel.EUPNEA: "Eupnea",
    PatternLabel.HYPOPNEA: "Hypopnea",
    PatternLabel.HYPERPNEA: "Hyperpnea",
    PatternLabel.TACHYPNEA: "Tachypnea",
    PatternLabel.KUSSMAUL: "Kussmaul",
    PatternLabel.CHEYNE_STOKES: "Cheyne-Stokes",
    PatternLabel.BIOTS: "Biot's",
    PatternLabel.APNEA: "Apnea",
}

_NAME_LOOKUP = {
    "bradypnea": PatternLabel.BRADYPNEA,
    "eupnea": PatternLabel.EUPNEA,
    "hypopnea": PatternLabel.HYPOPNEA,
    "hyperpnea": PatternLabel.HYPERPNEA,
    "tachypnea": PatternLabel.TACHYPNEA,
    "kussmaul": PatternLabel.KUSSMAUL,
    "kussmaulbreathing": PatternLabel.KUSSMAUL,
    "cheynestokes": PatternLabel.CHEYNE_STOKES,
    "cheynestokesrespiration": PatternLabel.CHEYNE_STOKES,
    "biots": PatternLabel.BIOTS,
    "biotsbreathing": PatternLabel.BIOTS,
    "apnea": PatternLabel.APNEA,
}


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = arr.copy() if not arr.flags.owndata or arr.base is not None else arr
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RespiratorySignal:
    """A 1-D respiratory time series with sampling rate and validity mask."""

    samples: np.ndarray
    fs: float
    valid: np.ndarray | None = None

    def __post_init__(self):
        samples = as_float_vector(self.samples, "samples")
        fs = check_fs(self.fs)
        valid = self.valid
        if valid is None:
            valid = np.ones(samples.size, dtype=bool)
        else:
            valid = as_bool_vector(valid, samples.size, "valid")
        object.__setattr__(self, "samples", _freeze(samples))
        object.__setattr__(self, "fs", fs)
        object.__setattr__(self, "valid", _freeze(valid))

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.n / self.fs

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n) / self.fs

    def scaled(self, scale: float) -> "RespiratorySignal":
        return RespiratorySignal(self.samples * float(scale), self.fs, self.valid)

    def slice(self, start: int, stop: int) -> "RespiratorySignal":
        return RespiratorySignal(self.samples[start:stop], self.fs, self.valid[start:stop])


@dataclass(frozen=True, eq=False)
class ObservationMatrix:
    """Raw multi-channel block: rows are time samples, columns channels."""

    data: np.ndarray
    fs: float

    def __post_init__(self):
        data = as_float_matrix(self.data, "data")
        if data.shape[0] < 2:
            raise ValueError("observation matrix needs at least two rows")
        if data.shape[1] < 1:
            raise ValueError("observation matrix needs at least one channel")
        check_finite(data, "data")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "fs", check_fs(self.fs))

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class FeatureSeries:
    """Per-sample respiratory features: rate, amplitude, optional half-width."""

    rr: np.ndarray
    amp: np.ndarray
    valid: np.ndarray
    fs: float
    width: np.ndarray | None = None

    def __post_init__(self):
        rr = as_float_vector(self.rr, "rr", allow_empty=True)
        amp = as_float_vector(self.amp, "amp", allow_empty=True)
        if amp.size != rr.size:
            raise ValueError("rr and amp must have equal length")
        valid = as_bool_vector(self.valid, rr.size, "valid")
        width = self.width
        if width is not None:
            width = as_float_vector(width, "width", allow_empty=True)
            if width.size != rr.size:
                raise ValueError("width must match rr length")
        if np.any(rr[valid] < 0) or np.any(amp[valid] < 0):
            raise ValueError("rr and amp must be non-negative where valid")
        object.__setattr__(self, "rr", _freeze(rr))
        object.__setattr__(self, "amp", _freeze(amp))
        object.__setattr__(self, "valid", _freeze(valid))
        object.__setattr__(self, "fs", check_fs(self.fs))
        object.__setattr__(self, "width", _freeze(width) if width is not None else None)

    @property
    def n(self) -> int:
        return self.rr.size

    def slice(self, start: int, stop: int) -> "FeatureSeries":
        width = None if self.width is None else self.width[start:stop]
        return FeatureSeries(self.rr[start:stop], self.amp[start:stop],
                             self.valid[start:stop], self.fs, width)


@dataclass(frozen=True)
class FeatureVector:
    """Per-segment classifier input: median rate/amplitude and their variances."""

    rr_med: float
    a_med: float
    rr_var_med: float
    a_var_med: float

    def __post_init__(self):
        vals = (self.rr_med, self.a_med, self.rr_var_med, self.a_var_med)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"feature vector must be finite, got {vals}")
        if self.rr_var_med < 0 or self.a_var_med < 0:
            raise ValueError("variances must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.rr_med, self.a_med, self.rr_var_med, self.a_var_med])


@dataclass(frozen=True, eq=False)
class LabeledSegment:
    """A signal slice with its pattern label and redistribution target range.

    ``start`` records the slice position inside the source recording and
    ``provenance`` carries augmentation bookkeeping; both are optional.
    """

    signal: RespiratorySignal
    label: PatternLabel
    target_rr_range: tuple[float, float]
    start: int | None = None
    provenance: Mapping | None = None

    def __post_init__(self):
        lo, hi = (float(v) for v in self.target_rr_range)
        if not (hi >= lo >= 0.0):
            raise ValueError(f"target range must satisfy hi >= lo >= 0, got ({lo}, {hi})")
        if self.label == PatternLabel.APNEA and (lo, hi) != (0.0, 0.0):
            raise ValueError("apnea target range must be (0, 0)")
        object.__setattr__(self, "label", PatternLabel(self.label))
        object.__setattr__(self, "target_rr_range", (lo, hi))

    @property
    def duration(self) -> float:
        return self.signal.duration


def validate_record(raw: Mapping) -> RespiratorySignal:
    """Check a parsed raw record and build a signal with verified invariants.

    ``raw`` maps ``fs`` to the sampling rate, ``samples`` to the sample
    sequence and optionally ``valid`` to a mask (defaults to all-true).
    Raises :class:`RecordError` naming the first offending position.
    """
    if "fs" not in raw or "samples" not in raw:
        raise RecordError("record must provide 'fs' and 'samples'")
    fs = float(raw["fs"])
    if not np.isfinite(fs) or fs <= 0:
        raise RecordError(f"non-positive fs: {fs}")
    samples = np.asarray(raw["samples"], dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise RecordError("samples must be a non-empty 1-D sequence")
    bad = ~np.isfinite(samples)
    if bad.any():
        raise RecordError(f"non-finite sample at index {int(np.flatnonzero(bad)[0])}")
    valid = raw.get("valid")
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != samples.shape:
            raise RecordError("length mismatch between samples and valid mask")
    return RespiratorySignal(samples, fs, valid)
