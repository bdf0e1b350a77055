"""Background-noise PSD estimation, matched colored noise and training augmentations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

from .acoustics import SimulationError, TimeSeries, noise_gain, shaped_noise
from .dsp import CepstrogramFeature, DSPError

SNR_RANGE_DB = (-10.0, 50.0)


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class PsdModel:
    """One-sided PSD as power per bin: ``band_powers.sum()`` is the mean-square power.

    Bin ``k`` is centred on ``k * bin_width`` Hz, from DC to Nyquist.
    """

    band_powers: np.ndarray
    bin_width: float
    sample_rate: float

    def __post_init__(self):
        bp = np.asarray(self.band_powers, dtype=np.float64)
        if np.any(bp < 0) or not np.all(np.isfinite(bp)):
            raise AugmentError("band powers must be finite and non-negative")
        object.__setattr__(self, "band_powers", bp)

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(len(self.band_powers)) * self.bin_width

    @property
    def total_power(self) -> float:
        return float(self.band_powers.sum())

    def density(self, f) -> np.ndarray:
        """Power per Hz, linearly interpolated between bin centres."""
        return np.interp(f, self.frequencies, self.band_powers / self.bin_width)


def estimate_psd(noise: TimeSeries, window_length: int = 8192) -> PsdModel:
    """Welch estimate (Hann, 50% overlap) as one-sided power per bin."""
    x = np.asarray(noise.samples, dtype=np.float64)
    if len(x) < 4 * window_length:
        raise AugmentError(f"need at least {4 * window_length} samples, got {len(x)}")
    f, pxx = scipy.signal.welch(x, fs=noise.sample_rate, window="hann",
                                nperseg=window_length, noverlap=window_length // 2,
                                detrend=False, scaling="density")
    df = f[1] - f[0]
    return PsdModel(pxx * df, df, noise.sample_rate)


def colored_noise(psd: PsdModel, length: int, seed: int) -> TimeSeries:
    """Gaussian noise whose expected PSD matches ``psd`` (frequency-domain shaping)."""
    if length <= 0:
        raise AugmentError("length must be positive")
    rng = np.random.default_rng(seed)
    x = shaped_noise(psd.density, length, psd.sample_rate, rng)
    return TimeSeries(x, psd.sample_rate)


def augment_snr(segment: TimeSeries, psd: PsdModel, snr_range_db=SNR_RANGE_DB,
                rng_seed=None, return_snr: bool = False):
    """Add matched colored noise at an SNR drawn uniformly from ``snr_range_db``.

    SNR is the full-band mean-square ratio of the segment (as given, including
    any noise it already carries) to the added noise. The input is not modified.
    """
    low, high = snr_range_db
    if low > high:
        raise AugmentError("snr range must satisfy low <= high")
    rng = np.random.default_rng(rng_seed)
    snr = float(rng.uniform(low, high)) if high > low else float(low)
    s = np.asarray(segment.samples, dtype=np.float64)
    ps = float(np.mean(s * s))
    if ps <= 0:
        raise AugmentError("segment has zero power")
    noise = shaped_noise(psd.density, len(s), psd.sample_rate, rng)
    pn = float(np.mean(noise * noise))
    if pn <= 0:
        raise AugmentError("noise model has zero power")
    try:
        g = noise_gain(ps, pn, snr)
    except SimulationError as exc:  # pragma: no cover - guarded above
        raise AugmentError(str(exc)) from exc
    out = TimeSeries(s + g * noise, segment.sample_rate)
    return (out, snr) if return_snr else out


def flip_width(f):
    """Reverse the time columns of an m x n feature (n > 1); quefrency rows untouched."""
    values = f.values if isinstance(f, CepstrogramFeature) else np.asarray(f)
    if values.ndim != 2:
        raise DSPError("expected an m x n feature")
    if values.shape[1] < 2:
        raise AugmentError("width flip needs n > 1")
    flipped = values[:, ::-1].copy()
    if isinstance(f, CepstrogramFeature):
        return CepstrogramFeature(flipped, f.lifter, f.quefrency_step)
    return flipped
