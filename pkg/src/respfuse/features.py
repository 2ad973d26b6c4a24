"""Redundant feature extraction: time-domain peaks and spectral ridges.

Two independent paths estimate the respiratory rate and amplitude:

* peak path: Savitzky-Golay smoothing, prominence-filtered peak detection,
  rate from consecutive peak spacing, amplitude as half the prominence;
* ridge path: analytic Morse-wavelet spectrogram, rate/amplitude from the
  per-sample magnitude maximum over frequency.

Both emit a :class:`~respfuse.types.FeatureSeries` sampled on the signal
grid, ready for artifact correction and fusion.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as sps
from scipy.fft import next_fast_len

from .types import FeatureSeries, RespiratorySignal
from .validation import check_fs

__all__ = [
    "SGOLAY_ORDER",
    "SGOLAY_FRAME_S",
    "PEAK_MIN_PROMINENCE",
    "PEAK_MIN_DISTANCE_S",
    "PEAK_MAX_WIDTH_S",
    "CWT_TIME_BANDWIDTH",
    "CWT_VOICES_PER_OCTAVE",
    "CWT_FREQ_RANGE_HZ",
    "PeakSet",
    "CwtSpectrogram",
    "sgolay_smooth",
    "detect_peaks",
    "peak_features",
    "cwt_spectrogram",
    "ridge_features",
]

SGOLAY_ORDER = 2
SGOLAY_FRAME_S = 1.5
PEAK_MIN_PROMINENCE = 0.3   # n.u.
PEAK_MIN_DISTANCE_S = 1.5   # 60 s / 40 breaths/min
PEAK_MAX_WIDTH_S = 10.0     # (2/3) * 60 s / 4 breaths/min
CWT_TIME_BANDWIDTH = 10.0
CWT_VOICES_PER_OCTAVE = 48
CWT_FREQ_RANGE_HZ = (4.0 / 60.0, 40.0 / 60.0)
CWT_GAMMA = 3.0
PEAK_HOLD_PERIODS = 1.5


@dataclass(frozen=True, eq=False)
class PeakSet:
    """Detected inspiratory peaks with prominence-derived amplitudes."""

    locations: np.ndarray    # s, strictly increasing
    prominences: np.ndarray  # n.u.
    amplitudes: np.ndarray   # n.u., 0.5 * prominence
    half_widths: np.ndarray  # s, measured at half prominence

    def __post_init__(self):
        if np.any(np.diff(self.locations) <= 0):
            raise ValueError("peak locations must be strictly increasing")

    @property
    def n(self) -> int:
        return self.locations.size


@dataclass(frozen=True, eq=False)
class CwtSpectrogram:
    """Magnitude scalogram on a log-spaced frequency axis (time x freq)."""

    freqs: np.ndarray       # Hz, strictly increasing
    magnitudes: np.ndarray  # (n_samples, n_freqs), >= 0
    fs: float
    coi_s: np.ndarray       # per-frequency edge region treated as unreliable

    def __post_init__(self):
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if self.magnitudes.shape[1] != self.freqs.size:
            raise ValueError("magnitudes must be (time, freq)")


def sgolay_smooth(s: RespiratorySignal, order: int = SGOLAY_ORDER,
                  frame_s: float = SGOLAY_FRAME_S) -> RespiratorySignal:
    """Least-squares local polynomial smoothing.

    The frame is the odd sample count nearest ``frame_s``; endpoints are
    handled by evaluating the polynomial fit of the truncated edge windows,
    so polynomials up to ``order`` pass through unchanged.
    """
    frame = int(round(frame_s * s.fs))
    if frame % 2 == 0:
        frame += 1
    if frame < order + 2:
        raise ValueError("frame too short for the polynomial order")
    if s.n < frame:
        raise ValueError("signal shorter than the smoothing frame")
    smoothed = sps.savgol_filter(s.samples, frame, order, mode="interp")
    return RespiratorySignal(smoothed, s.fs, s.valid)


def _refine_location(x: np.ndarray, k: int) -> float:
    """Sub-sample peak position from a parabola through three samples."""
    if k <= 0 or k >= x.size - 1:
        return float(k)
    denom = x[k - 1] - 2.0 * x[k] + x[k + 1]
    if denom >= 0:
        return float(k)
    delta = 0.5 * (x[k - 1] - x[k + 1]) / denom
    return float(k) + float(np.clip(delta, -0.5, 0.5))


def detect_peaks(s: RespiratorySignal, min_prominence: float = PEAK_MIN_PROMINENCE,
                 min_distance_s: float = PEAK_MIN_DISTANCE_S,
                 max_width_s: float = PEAK_MAX_WIDTH_S) -> PeakSet:
    """Find local maxima passing the prominence, spacing and width criteria.

    When two candidates violate the minimum spacing the more prominent one
    is kept.  An empty result is legal (flat or apneic input).
    """
    x = np.asarray(s.samples)
    idx, props = sps.find_peaks(x, prominence=min_prominence,
                                width=(None, max_width_s * s.fs), rel_height=0.5)
    if idx.size == 0:
        empty = np.empty(0)
        return PeakSet(empty, empty.copy(), empty.copy(), empty.copy())
    prominences = props["prominences"]
    widths = props["widths"] / s.fs
    # enforce spacing, most prominent first
    order = np.argsort(-prominences, kind="stable")
    min_dist = min_distance_s * s.fs
    kept: list[int] = []
    for cand in order:
        if all(abs(idx[cand] - idx[k]) >= min_dist for k in kept):
            kept.append(cand)
    kept_arr = np.sort(np.asarray(kept))
    locations = np.array([_refine_location(x, int(idx[k])) for k in kept_arr]) / s.fs
    prominences = prominences[kept_arr]
    return PeakSet(locations, prominences, 0.5 * prominences, widths[kept_arr])


def peak_features(peaks: PeakSet, n_samples: int, fs: float) -> FeatureSeries:
    """Sample-and-hold peak features onto the signal grid.

    The rate for the interval between two consecutive peaks becomes
    available at the later peak and is held until the next one; amplitude
    and half-width are held the same way.  A held value stays trustworthy
    only while breaths keep arriving: samples more than
    ``PEAK_HOLD_PERIODS`` breath periods past the producing peak keep the
    written value but are flagged invalid, so apneic stretches do not pass
    as breathing.  With fewer than two peaks the whole series is invalid.
    """
    fs = check_fs(fs)
    rr = np.zeros(n_samples)
    amp = np.zeros(n_samples)
    width = np.zeros(n_samples)
    valid = np.zeros(n_samples, dtype=bool)
    if peaks.n < 2:
        return FeatureSeries(rr, amp, valid, fs, width)
    starts = np.clip(np.ceil(peaks.locations * fs - 1e-9).astype(int), 0, n_samples)
    intervals = np.diff(peaks.locations)
    rates = 60.0 / intervals
    # an interval much longer than its predecessor spans a pause, not a breath
    measured = np.ones(intervals.size, dtype=bool)
    measured[1:] = intervals[1:] <= PEAK_HOLD_PERIODS * intervals[:-1]
    for k in range(1, peaks.n):
        lo = starts[k]
        hi = starts[k + 1] if k + 1 < peaks.n else n_samples
        rr[lo:hi] = rates[k - 1]
        amp[lo:hi] = peaks.amplitudes[k]
        width[lo:hi] = peaks.half_widths[k]
        cap = lo + int(np.ceil(PEAK_HOLD_PERIODS * (60.0 / rates[k - 1]) * fs))
        valid[lo:min(hi, cap)] = measured[k - 1]
    return FeatureSeries(rr, amp, valid, fs, width)


def _morse_beta(time_bandwidth: float, gamma: float) -> float:
    return time_bandwidth / gamma


@lru_cache(maxsize=8)
def _coi_cycles(time_bandwidth: float, gamma: float) -> float:
    """Edge-region half width in cycles of the analysis frequency.

    Measured numerically as the e-folding half width of the wavelet's
    time-domain envelope at a reference frequency.
    """
    n, fs_ref, f_ref = 8192, 32.0, 1.0
    bank = _filter_bank(n, fs_ref, (f_ref,), time_bandwidth, gamma)
    envelope = np.abs(np.fft.fftshift(np.fft.ifft(bank[0])))
    above = np.flatnonzero(envelope >= envelope.max() / np.e)
    half_width_s = (above[-1] - above[0]) / 2.0 / fs_ref
    return float(half_width_s * f_ref)


@lru_cache(maxsize=32)
def _filter_bank(n_fft: int, fs: float, freqs: tuple, time_bandwidth: float,
                 gamma: float) -> np.ndarray:
    """Frequency responses of the analytic Morse bank, peak-normalized to 2.

    With the peak at 2 the analytic transform of ``A * cos`` has ridge
    magnitude ``A``.
    """
    beta = _morse_beta(time_bandwidth, gamma)
    f_grid = np.fft.fftfreq(n_fft, d=1.0 / fs)
    bank = np.zeros((len(freqs), n_fft))
    pos = f_grid > 0
    r = f_grid[pos][None, :] / np.asarray(freqs)[:, None]
    with np.errstate(divide="ignore"):
        bank[:, pos] = 2.0 * np.exp(beta * np.log(r) + (beta / gamma) * (1.0 - r ** gamma))
    return bank


def cwt_freqs(fs: float, freq_range: tuple[float, float] = CWT_FREQ_RANGE_HZ,
              voices: int = CWT_VOICES_PER_OCTAVE) -> np.ndarray:
    fmin, fmax = freq_range
    n_bins = int(np.floor(voices * np.log2(fmax / fmin))) + 1
    freqs = fmin * 2.0 ** (np.arange(n_bins) / voices)
    if freqs[-1] > fs / 2:
        raise ValueError("analysis band exceeds the Nyquist frequency")
    return freqs


def cwt_spectrogram(s: RespiratorySignal,
                    time_bandwidth: float = CWT_TIME_BANDWIDTH,
                    voices: int = CWT_VOICES_PER_OCTAVE,
                    freq_range: tuple[float, float] = CWT_FREQ_RANGE_HZ) -> CwtSpectrogram:
    """Analytic Morse-wavelet magnitude scalogram of a respiratory signal.

    Reflection padding handles the boundaries; ``coi_s`` reports, per
    frequency, how much of each edge is still dominated by the boundary.
    A unit-amplitude sinusoid yields ridge magnitude 1.
    """
    freqs = cwt_freqs(s.fs, freq_range, voices)
    coi = _coi_cycles(time_bandwidth, CWT_GAMMA) / freqs
    n = s.n
    if n < 2.0 * coi[0] * s.fs:
        raise ValueError("signal too short for the lowest analysis frequency")
    x = np.asarray(s.samples)
    padded = np.concatenate([x[::-1], x, x[::-1]])
    n_fft = next_fast_len(padded.size)
    bank = _filter_bank(n_fft, s.fs, tuple(freqs), time_bandwidth, CWT_GAMMA)
    spectrum = np.fft.fft(padded, n_fft)
    coeffs = np.fft.ifft(spectrum[None, :] * bank, axis=1)[:, n:2 * n]
    return CwtSpectrogram(freqs, np.abs(coeffs).T, s.fs, coi)


def ridge_features(spec: CwtSpectrogram) -> FeatureSeries:
    """Rate and amplitude from the per-sample spectrogram maximum.

    Frequency ties break toward the lower frequency.  Samples whose ridge
    frequency puts them inside the boundary region at either end are
    flagged invalid.
    """
    if spec.magnitudes.size == 0:
        raise ValueError("empty spectrogram")
    n = spec.magnitudes.shape[0]
    ridge_idx = np.argmax(spec.magnitudes, axis=1)
    rr = 60.0 * spec.freqs[ridge_idx]
    amp = spec.magnitudes[np.arange(n), ridge_idx]
    guard = np.ceil(spec.coi_s[ridge_idx] * spec.fs).astype(int)
    pos = np.arange(n)
    valid = (pos >= guard) & (pos <= n - 1 - guard)
    return FeatureSeries(rr, amp, valid, spec.fs)
