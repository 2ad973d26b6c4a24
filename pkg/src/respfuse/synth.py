"""Synthesize protocol-conformant breathing signals and noisy observations.

The generator renders each pattern from a :class:`PatternSpec` and can also
emit the ground-truth instantaneous rate/amplitude series, which downstream
evaluation uses as the reference.  Multi-channel raw observations are built
from a clean signal through per-channel gain, delay, sampling-rate error,
baseline wander, white noise and sparse step artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .types import FeatureSeries, LabeledSegment, ObservationMatrix, PatternLabel, RespiratorySignal
from .validation import check_fs, check_unit_interval

__all__ = [
    "PatternSpec",
    "ChannelModel",
    "DEFAULT_PROTOCOL",
    "generate_pattern",
    "render_pattern",
    "generate_protocol",
    "generate_protocol_truth",
    "synthesize_observations",
    "load_protocol",
    "protocol_to_json",
]

# Cheyne-Stokes morphology: crescendo-decrescendo bursts separated by apnea.
# Burst peaks vary cycle to cycle within the demanded effort ceiling.
CHEYNE_STOKES_BURST_S = 20.0
CHEYNE_STOKES_APNEA_S = 10.0
CHEYNE_STOKES_PEAK_RANGE = (0.55, 1.0)
# Biot's morphology: constant-depth bursts with randomly drawn apnea gaps.
BIOTS_BURST_RANGE_S = (10.0, 20.0)
BIOTS_GAP_RANGE_S = (5.0, 12.0)
BIOTS_RAMP_S = 0.5
# Free-breathing pause between protocol entries.
PAUSE_RR = 14.0
PAUSE_EFFORT = 1.0

_SIMPLE = {
    PatternLabel.BRADYPNEA,
    PatternLabel.EUPNEA,
    PatternLabel.HYPOPNEA,
    PatternLabel.HYPERPNEA,
    PatternLabel.TACHYPNEA,
    PatternLabel.KUSSMAUL,
}


@dataclass(frozen=True)
class PatternSpec:
    """One protocol entry: what to breathe, how hard, for how long.

    ``rr`` is the demanded rate in breaths/min (the burst rate for
    Cheyne-Stokes and Biot's), ``effort`` the demanded amplitude in n.u.
    (the envelope peak for Cheyne-Stokes).  ``phase`` offsets the carrier
    and ``latency`` delays the burst/gap schedule of the complex patterns;
    both model how precisely a subject locks onto the animation.
    """

    label: PatternLabel
    rr: float
    effort: float
    duration: float
    target_rr_range: tuple[float, float]
    phase: float = 0.0
    latency: float = 0.0
    depth_var: float = 0.0  # breath-depth wander, relative sd

    def __post_init__(self):
        object.__setattr__(self, "label", PatternLabel(self.label))
        lo, hi = (float(v) for v in self.target_rr_range)
        if not (hi >= lo >= 0.0):
            raise ValueError(f"target range must satisfy hi >= lo >= 0, got ({lo}, {hi})")
        object.__setattr__(self, "target_rr_range", (lo, hi))
        if self.effort < 0:
            raise ValueError("effort must be non-negative")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.label == PatternLabel.APNEA:
            if self.rr != 0 or self.effort != 0:
                raise ValueError("apnea must have rr = 0 and effort = 0")
        elif self.rr <= 0:
            raise ValueError("breathing patterns need rr > 0")


@dataclass(frozen=True)
class ChannelModel:
    """Distortions applied to one observation channel."""

    gain: float = 1.0
    noise_sd: float = 0.0
    baseline_wander_amp: float = 0.0
    baseline_wander_freq: float = 0.05
    artifact_rate: float = 0.0  # step events per minute
    delay: int = 0              # samples
    rate_error: float = 1.0     # relative sampling-rate multiplier

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if not 0.95 <= self.rate_error <= 1.05:
            raise ValueError("rate_error must lie in [0.95, 1.05]")


def _row(label, rr, effort, target):
    return PatternSpec(label, rr, effort, 60.0, target)


#: Desk-scale default protocol.  Entry order, rates, efforts and target
#: ranges follow the study protocol; the second eupnea entry keeps the
#: standard eupnea range 12-18 so that class target ranges of eupnea and
#: tachypnea stay disjoint for the synthetic classifier benchmark.
DEFAULT_PROTOCOL: tuple[PatternSpec, ...] = (
    _row(PatternLabel.BRADYPNEA, 5.0, 1.0, (5.0, 10.0)),
    _row(PatternLabel.EUPNEA, 12.0, 1.0, (12.0, 18.0)),
    _row(PatternLabel.HYPOPNEA, 12.0, 0.25, (12.0, 18.0)),
    _row(PatternLabel.HYPERPNEA, 10.0, 2.5, (12.0, 18.0)),
    _row(PatternLabel.TACHYPNEA, 35.0, 1.0, (20.0, 35.0)),
    _row(PatternLabel.EUPNEA, 15.0, 1.0, (12.0, 18.0)),
    _row(PatternLabel.KUSSMAUL, 30.0, 2.5, (20.0, 35.0)),
    _row(PatternLabel.CHEYNE_STOKES, 20.0, 4.5, (12.0, 25.0)),
    _row(PatternLabel.TACHYPNEA, 35.0, 0.25, (20.0, 35.0)),
    _row(PatternLabel.BIOTS, 15.0, 1.0, (12.0, 25.0)),
    _row(PatternLabel.BIOTS, 10.0, 2.5, (12.0, 25.0)),
    _row(PatternLabel.APNEA, 0.0, 0.0, (0.0, 0.0)),
)


def _smoothstep(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(np.pi * np.clip(x, 0.0, 1.0)))


def _depth_wander(n: int, fs: float, relative_sd: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Slow multiplicative breath-depth modulation around 1."""
    if relative_sd <= 0 or n == 0:
        return np.ones(n)
    node_spacing = max(int(round(8.0 * fs)), 2)
    n_nodes = max(n // node_spacing + 2, 2)
    nodes = rng.normal(0.0, relative_sd, n_nodes)
    t_nodes = np.arange(n_nodes) * node_spacing
    wander = np.interp(np.arange(n), t_nodes, nodes)
    return np.maximum(1.0 + wander, 0.1)


def _render(spec: PatternSpec, fs: float, rng: np.random.Generator):
    """Render one pattern; returns (samples, rr_truth, amp_truth)."""
    n = int(round(spec.duration * fs))
    t = np.arange(n) / fs
    x = np.zeros(n)
    rr_t = np.zeros(n)
    amp_t = np.zeros(n)

    if spec.label == PatternLabel.APNEA:
        return x, rr_t, amp_t

    f0 = spec.rr / 60.0
    if fs < 4.0 * f0:
        raise ValueError(f"sampling rate {fs} Hz too low for {spec.rr} breaths/min")

    if spec.label in _SIMPLE:
        depth = spec.effort * _depth_wander(n, fs, spec.depth_var, rng)
        x = depth * np.sin(2.0 * np.pi * f0 * t + spec.phase)
        rr_t[:] = spec.rr
        amp_t[:] = depth
        return x, rr_t, amp_t

    if spec.label == PatternLabel.CHEYNE_STOKES:
        cycle = CHEYNE_STOKES_BURST_S + CHEYNE_STOKES_APNEA_S
        depth = _depth_wander(n, fs, spec.depth_var, rng)
        pos = max(spec.latency, 0.0)
        while pos < spec.duration:
            peak = spec.effort * float(rng.uniform(*CHEYNE_STOKES_PEAK_RANGE))
            b0 = int(round(pos * fs))
            b1 = min(int(round((pos + CHEYNE_STOKES_BURST_S) * fs)), n)
            tb = (np.arange(b0, b1) / fs) - pos
            env = peak * depth[b0:b1] * np.sin(np.pi * tb / CHEYNE_STOKES_BURST_S) ** 2
            x[b0:b1] = env * np.sin(2.0 * np.pi * f0 * tb + spec.phase)
            rr_t[b0:b1] = spec.rr
            amp_t[b0:b1] = env
            pos += cycle
        return x, rr_t, amp_t

    if spec.label == PatternLabel.BIOTS:
        depth = _depth_wander(n, fs, spec.depth_var, rng)
        pos = max(spec.latency, 0.0)
        while pos < spec.duration:
            burst = float(rng.uniform(*BIOTS_BURST_RANGE_S))
            b0 = int(round(pos * fs))
            b1 = min(int(round((pos + burst) * fs)), n)
            tb = (np.arange(b0, b1) / fs) - pos
            length = (b1 - b0) / fs
            env = spec.effort * depth[b0:b1] * np.minimum(
                _smoothstep(tb / BIOTS_RAMP_S), _smoothstep((length - tb) / BIOTS_RAMP_S))
            x[b0:b1] = env * np.sin(2.0 * np.pi * f0 * tb + spec.phase)
            rr_t[b0:b1] = spec.rr
            amp_t[b0:b1] = env
            pos += burst + float(rng.uniform(*BIOTS_GAP_RANGE_S))
        return x, rr_t, amp_t

    raise ValueError(f"unhandled pattern {spec.label!r}")


def render_pattern(spec: PatternSpec, fs: float, seed: int = 0):
    """Like :func:`generate_pattern` but also returns the truth series."""
    fs = check_fs(fs)
    rng = np.random.default_rng(seed)
    x, rr_t, amp_t = _render(spec, fs, rng)
    signal = RespiratorySignal(x, fs)
    truth = FeatureSeries(rr_t, amp_t, np.ones(len(x), dtype=bool), fs)
    return signal, truth


def generate_pattern(spec: PatternSpec, fs: float, seed: int = 0) -> RespiratorySignal:
    """Render one protocol-conformant breathing pattern."""
    return render_pattern(spec, fs, seed)[0]


def _render_protocol(specs: Sequence[PatternSpec], pause_s: float, fs: float, seed: int):
    if not specs:
        raise ValueError("protocol needs at least one pattern")
    seeds = np.random.SeedSequence(seed).spawn(len(specs))
    parts_x, parts_rr, parts_amp = [], [], []
    segments: list[LabeledSegment] = []
    cursor = 0
    pause_spec = None
    if pause_s > 0:
        pause_spec = PatternSpec(PatternLabel.EUPNEA, PAUSE_RR, PAUSE_EFFORT,
                                 pause_s, (12.0, 18.0))
    for i, spec in enumerate(specs):
        if i > 0 and pause_spec is not None:
            px, prr, pamp = _render(pause_spec, fs, np.random.default_rng(0))
            parts_x.append(px)
            parts_rr.append(prr)
            parts_amp.append(pamp)
            cursor += len(px)
        x, rr_t, amp_t = _render(spec, fs, np.random.default_rng(seeds[i]))
        parts_x.append(x)
        parts_rr.append(rr_t)
        parts_amp.append(amp_t)
        segments.append((cursor, len(x), spec))
        cursor += len(x)
    x = np.concatenate(parts_x)
    rr_t = np.concatenate(parts_rr)
    amp_t = np.concatenate(parts_amp)
    signal = RespiratorySignal(x, fs)
    out_segments = [
        LabeledSegment(signal.slice(start, start + length), spec.label,
                       spec.target_rr_range, start=start)
        for start, length, spec in segments
    ]
    truth = FeatureSeries(rr_t, amp_t, np.ones(x.size, dtype=bool), fs)
    return signal, out_segments, truth


def generate_protocol(specs: Sequence[PatternSpec], pause_s: float = 5.0,
                      fs: float = 10.0, seed: int = 0):
    """Concatenate patterns with free-breathing pauses in between.

    Returns the full signal and one :class:`LabeledSegment` per protocol
    entry with exact sample boundaries (pauses are unlabeled).
    """
    signal, segments, _ = _render_protocol(specs, pause_s, check_fs(fs), seed)
    return signal, segments


def generate_protocol_truth(specs: Sequence[PatternSpec], pause_s: float = 5.0,
                            fs: float = 10.0, seed: int = 0) -> FeatureSeries:
    """Ground-truth instantaneous rate/amplitude for the same protocol render."""
    return _render_protocol(specs, pause_s, check_fs(fs), seed)[2]


def _shift(x: np.ndarray, delay: int) -> np.ndarray:
    if delay == 0:
        return x
    out = np.empty_like(x)
    if delay > 0:
        out[:delay] = x[0]
        out[delay:] = x[:-delay]
    else:
        out[delay:] = x[-1]
        out[:delay] = x[-delay:]
    return out


def synthesize_observations(clean: RespiratorySignal,
                            channels: Sequence[ChannelModel],
                            respiratory_fraction: Sequence[float],
                            seed: int = 0) -> ObservationMatrix:
    """Build a noisy multi-channel observation matrix from a clean signal.

    Column ``i`` carries ``respiratory_fraction[i] * gain_i`` of the clean
    signal (resampled by the channel's rate error and delayed), plus
    baseline wander, white noise and sparse step artifacts.  A fraction of
    zero yields a pure nuisance channel.
    """
    from .prep import resample_by_factor  # local import to avoid a cycle

    if len(channels) == 0:
        raise ValueError("need at least one channel")
    if len(respiratory_fraction) != len(channels):
        raise ValueError("respiratory_fraction must match the channel list")
    fractions = [check_unit_interval(p, "respiratory_fraction") for p in respiratory_fraction]

    m = clean.n
    t = clean.times
    child_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(channels))]
    cols = []
    for ch, frac, rng in zip(channels, fractions, child_rngs):
        y = np.asarray(clean.samples)
        if ch.rate_error != 1.0:
            y = resample_by_factor(y, ch.rate_error)
            if len(y) >= m:
                y = y[:m]
            else:
                y = np.concatenate([y, np.full(m - len(y), y[-1])])
        y = _shift(y, int(ch.delay))
        col = frac * ch.gain * y
        if ch.baseline_wander_amp > 0:
            phase = rng.uniform(0.0, 2.0 * np.pi)
            col = col + ch.baseline_wander_amp * np.sin(
                2.0 * np.pi * ch.baseline_wander_freq * t + phase)
        if ch.noise_sd > 0:
            col = col + rng.normal(0.0, ch.noise_sd, m)
        if ch.artifact_rate > 0:
            n_events = rng.poisson(ch.artifact_rate * clean.duration / 60.0)
            for _ in range(n_events):
                pos = int(rng.integers(1, m))
                step = rng.uniform(2.0, 4.0) * (1.0 if rng.random() < 0.5 else -1.0)
                col = col.copy()
                col[pos:] += step
        cols.append(col)
    return ObservationMatrix(np.column_stack(cols), clean.fs)


def load_protocol(path) -> tuple[PatternSpec, ...]:
    """Load a protocol from a JSON file mirroring the published table columns.

    Expected shape: a list of objects with ``pattern``, ``frequency_bpm``,
    ``effort_nu``, ``target_range_bpm`` ([lo, hi]) and optional
    ``duration_s`` (default 60).
    """
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    specs = []
    for row in rows:
        specs.append(PatternSpec(
            PatternLabel.from_name(row["pattern"]),
            float(row["frequency_bpm"]),
            float(row["effort_nu"]),
            float(row.get("duration_s", 60.0)),
            tuple(float(v) for v in row["target_range_bpm"]),
        ))
    return tuple(specs)


def protocol_to_json(specs: Sequence[PatternSpec]) -> str:
    rows = [
        {
            "pattern": s.label.display_name,
            "frequency_bpm": s.rr,
            "effort_nu": s.effort,
            "duration_s": s.duration,
            "target_range_bpm": list(s.target_rr_range),
        }
        for s in specs
    ]
    return json.dumps(rows, indent=2)
