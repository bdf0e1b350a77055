"""Power spectra, power cepstra, liftering and cepstrogram features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.signal

from .acoustics import TimeSeries

LOW_QUEFRENCY_S = 84e-6
HIGH_QUEFRENCY_S = 1.4e-3
DEFAULT_FLOOR = 1e-12


class DSPError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralParams:
    window_length: int = 8192
    overlap_fraction: float = 0.5
    floor_epsilon: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.window_length < 2:
            raise DSPError("window_length must be >= 2")
        if not 0 <= self.overlap_fraction < 1:
            raise DSPError("overlap_fraction must lie in [0, 1)")
        if self.floor_epsilon < 0:
            raise DSPError("floor_epsilon must be >= 0")

    @property
    def hop(self) -> int:
        return max(1, int(round(self.window_length * (1 - self.overlap_fraction))))


@dataclass(frozen=True)
class PowerSpectrum:
    """Two-sided averaged periodogram.

    ``values[k]`` is the power at frequency ``k * bin_width`` for
    ``k < N/2`` and at ``(k - N) * bin_width`` above that (numpy FFT order),
    so ``values[k] == values[N - k]``. Scaling: ``values.sum()`` equals the
    taper-weighted mean square ``mean((w*x)**2) / mean(w**2)`` averaged over
    segments (Hann: 8/3 times the mean square of the tapered segment).
    """

    values: np.ndarray
    bin_width: float


@dataclass(frozen=True)
class Cepstrum:
    values: np.ndarray
    quefrency_step: float

    def quefrency(self, k):
        return np.asarray(k) * self.quefrency_step


@dataclass(frozen=True)
class LifterWindow:
    low_index: int = 21
    high_index: int = 350

    def __post_init__(self):
        if not 0 <= self.low_index <= self.high_index:
            raise DSPError("need 0 <= low_index <= high_index")

    @property
    def size(self) -> int:
        return self.high_index - self.low_index + 1

    @classmethod
    def for_sample_rate(cls, sample_rate: float, low_s: float = LOW_QUEFRENCY_S,
                        high_s: float = HIGH_QUEFRENCY_S) -> "LifterWindow":
        return cls(int(round(low_s * sample_rate)), int(round(high_s * sample_rate)))

    def quefrencies(self, sample_rate: float) -> np.ndarray:
        return np.arange(self.low_index, self.high_index + 1) / sample_rate


@dataclass(frozen=True)
class CepstrogramFeature:
    values: np.ndarray
    lifter: LifterWindow
    quefrency_step: float

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != self.lifter.size or v.shape[1] < 1:
            raise DSPError(f"feature shape {v.shape} inconsistent with lifter "
                           f"{self.lifter.size} x n")
        if not np.all(np.isfinite(v)):
            raise DSPError("feature contains non-finite values")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def _segments(x: np.ndarray, window_length: int, hop: int) -> np.ndarray:
    """Overlapping segments along the last axis, shape (..., nseg, window_length)."""
    view = np.lib.stride_tricks.sliding_window_view(x, window_length, axis=-1)
    return view[..., ::hop, :]


def _taper(window_length: int) -> np.ndarray:
    return scipy.signal.get_window("hann", window_length, fftbins=True)


def _onesided_power(x: np.ndarray, params: SpectralParams) -> np.ndarray:
    """Averaged one-sided periodogram bins 0..N/2 over the last axis.

    Uses the same scaling as :class:`PowerSpectrum` (two-sided values,
    not doubled).
    """
    n = params.window_length
    w = _taper(n)
    segs = _segments(x, n, params.hop)
    spec = scipy.fft.rfft(segs * w.astype(x.dtype if x.dtype.kind == "f" else float),
                          axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    return power.mean(axis=-2) / (n * np.sum(w * w))


def power_spectrum(x: TimeSeries, window_length: int = 8192,
                   overlap_fraction: float = 0.5) -> PowerSpectrum:
    """Averaged modified periodogram (Hann taper, overlapping segments)."""
    params = SpectralParams(window_length, overlap_fraction)
    data = np.asarray(x.samples, dtype=np.float64)
    if window_length > len(data):
        raise DSPError("window longer than signal")
    half = _onesided_power(data, params)
    full = np.empty(window_length)
    full[:len(half)] = half
    # mirror onto negative frequencies
    full[len(half):] = half[1:window_length - len(half) + 1][::-1]
    return PowerSpectrum(full, x.sample_rate / window_length)


def _log_floor(power: np.ndarray, eps: float) -> np.ndarray:
    peak = power.max(axis=-1, keepdims=True)
    ref = np.where(peak > 0, peak, 1.0)
    if eps == 0:
        if np.any(power <= 0):
            raise DSPError("zero-power bin with floor_epsilon = 0: log undefined")
        return np.log(power)
    return np.log(np.maximum(power, eps * ref))


def cepstrum(spec: PowerSpectrum, floor_epsilon: float = DEFAULT_FLOOR) -> Cepstrum:
    """Power cepstrum: real part of IFFT(log |S|^2), with a relative log floor."""
    values = np.asarray(spec.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DSPError("spectrum contains non-finite values")
    full = np.fft.ifft(_log_floor(values, floor_epsilon))
    scale = max(float(np.max(np.abs(full.real))), 1e-300)
    if np.max(np.abs(full.imag)) > 1e-9 * scale:
        raise DSPError("log-spectrum is not conjugate symmetric")
    return Cepstrum(full.real.copy(), 1.0 / (spec.bin_width * len(values)))


def lifter(c: Cepstrum, w: LifterWindow) -> np.ndarray:
    """Keep quefrency indices ``low_index..high_index`` inclusive."""
    if w.high_index >= len(c.values):
        raise DSPError("lifter window exceeds cepstrum length")
    return c.values[w.low_index:w.high_index + 1].copy()


def _liftered_cepstra(sections: np.ndarray, w: LifterWindow,
                      params: SpectralParams) -> np.ndarray:
    """Batched lifter(cepstrum(power_spectrum(.))) over the last axis."""
    n = params.window_length
    if w.high_index >= n:
        raise DSPError("lifter window exceeds cepstrum length")
    logp = _log_floor(_onesided_power(sections, params), params.floor_epsilon)
    ceps = scipy.fft.irfft(logp, n=n, axis=-1)
    return ceps[..., w.low_index:w.high_index + 1]


def cepstrogram(x: TimeSeries, n: int, w: LifterWindow,
                params: SpectralParams = SpectralParams()) -> CepstrogramFeature:
    """Split ``x`` into ``n`` equal sections, one liftered cepstrum column each."""
    return CepstrogramFeature(cepstrogram_batch(np.asarray(x.samples)[None], n, w, params)[0],
                              w, 1.0 / x.sample_rate)


def cepstrogram_batch(segments: np.ndarray, n: int, w: LifterWindow,
                      params: SpectralParams = SpectralParams()) -> np.ndarray:
    """Features for a stack of equal-length segments, shape (batch, m, n).

    Trailing samples that do not fill ``n`` equal sections are dropped.
    """
    if n < 1:
        raise DSPError("n must be >= 1")
    segments = np.asarray(segments, dtype=np.float64)
    section = segments.shape[-1] // n
    if section < params.window_length:
        raise DSPError(f"signal too short: {n} sections of {section} samples "
                       f"< window {params.window_length}")
    parts = segments[..., :section * n].reshape(segments.shape[0], n, section)
    cols = _liftered_cepstra(parts, w, params)           # (batch, n, m)
    return np.ascontiguousarray(np.swapaxes(cols, 1, 2))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    EPS = 1e-8


def fit_normalization(features) -> NormStats:
    """Per-quefrency-row mean and standard deviation over a feature set.

    Statistics pool every column of every feature, so they do not depend on n.
    """
    arr = _stack(features)
    if arr.shape[0] < 2:
        raise DSPError("need at least two features to fit normalization")
    rows = np.moveaxis(arr, 1, 0).reshape(arr.shape[1], -1)
    return NormStats(rows.mean(axis=1), rows.std(axis=1))


def apply_normalization(f, stats: NormStats):
    """``(f - mean) / (std + 1e-8)`` row-wise; accepts a feature or an array stack."""
    if isinstance(f, CepstrogramFeature):
        vals = (f.values - stats.mean[:, None]) / (stats.std[:, None] + NormStats.EPS)
        return CepstrogramFeature(vals, f.lifter, f.quefrency_step)
    arr = np.asarray(f)
    return (arr - stats.mean[:, None]) / (stats.std[:, None] + NormStats.EPS)


def _stack(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        arr = features
    else:
        features = list(features)
        if not features:
            raise DSPError("empty feature list")
        arr = np.stack([f.values if isinstance(f, CepstrogramFeature) else np.asarray(f)
                        for f in features])
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise DSPError("expected a non-empty stack of m x n features")
    return arr
