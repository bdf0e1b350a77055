"""Conventional single-hydrophone ranging from the dominant cepstral peak.

The strongest liftered cepstral peak is taken as the direct/surface-reflected
TDOA and the two-path geometry is inverted for horizontal range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import LifterWindow

DEFAULT_MIN_PROMINENCE = 4.0
DEFAULT_MIN_PEAK = 0.2
DEFAULT_MEDIAN_WINDOW = 5


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PeakEstimate:
    quefrency: float
    peak_value: float
    prominence: float
    index: float


@dataclass(frozen=True)
class RangingGeometry:
    source_depth: float = 1.0
    receiver_depth: float = 29.0
    sound_speed: float = 1500.0

    def __post_init__(self):
        if self.source_depth <= 0 or self.receiver_depth <= 0:
            raise GeometryError("depths must be positive")
        if self.sound_speed <= 0:
            raise GeometryError("sound_speed must be positive")

    @property
    def tau_max(self) -> float:
        zr, zs = self.receiver_depth, self.source_depth
        return ((zr + zs) - abs(zr - zs)) / self.sound_speed

    def path_difference(self, r):
        """Surface-reflected minus direct path length at horizontal range ``r``."""
        r = np.asarray(r, dtype=float)
        zr, zs = self.receiver_depth, self.source_depth
        return np.hypot(r, zr + zs) - np.hypot(r, zr - zs)

    def tdoa(self, r):
        return self.path_difference(r) / self.sound_speed

    def range_at_tdoa(self, tau: float) -> float:
        return tdoa_to_range(tau, self)


@dataclass(frozen=True)
class BaselineConfig:
    lifter: LifterWindow = LifterWindow()
    sample_rate: float = 250_000.0
    min_prominence: float = DEFAULT_MIN_PROMINENCE
    min_peak: float = DEFAULT_MIN_PEAK
    median_window: int = DEFAULT_MEDIAN_WINDOW
    geometry: RangingGeometry = RangingGeometry()


def pick_peak(liftered, w: LifterWindow, min_prominence: float = DEFAULT_MIN_PROMINENCE,
              sample_rate: float = 250_000.0, min_peak: float = 0.0):
    """Dominant peak of a liftered cepstrum, or ``None`` for no detection.

    The peak is the largest-magnitude value: an inverted (pressure-release
    surface) echo shows as a negative cepstral peak. It is rejected when

    * its prominence, ``|peak| / median(|c|)``, is below ``min_prominence``;
    * ``|peak|`` is below ``min_peak`` (the echo-to-direct amplitude a
      Lloyd's-mirror pair must reach; weaker peaks are rahmonics or clutter);
    * it sits on the first or last lifter bin, where it cannot be told apart
      from the skirt of a peak outside the band.

    Three-point parabolic interpolation refines the quefrency.
    """
    c = np.asarray(liftered, dtype=np.float64)
    if c.ndim != 1 or len(c) == 0:
        raise ValueError("liftered cepstrum must be a non-empty vector")
    mag = np.abs(c)
    k = int(np.argmax(mag))
    med = float(np.median(mag))
    peak = float(mag[k])
    if peak == 0:
        return None
    prominence = peak / med if med > 0 else math.inf
    if prominence < min_prominence or peak < min_peak:
        return None
    if k == 0 or k == len(c) - 1:
        return None
    a, b, d = mag[k - 1], mag[k], mag[k + 1]
    denom = a - 2 * b + d
    offset = 0.5 * (a - d) / denom if denom != 0 else 0.0
    offset = float(np.clip(offset, -0.5, 0.5))
    index = w.low_index + k + offset
    return PeakEstimate(index / sample_rate, float(c[k]), prominence, index)


def tdoa_to_range(tau: float, g: RangingGeometry, tol: float = 0.01) -> float:
    """Horizontal range whose surface-minus-direct delay equals ``tau`` (bisection)."""
    tmax = g.tau_max
    if not 0 < tau <= tmax * (1 + 1e-12):
        raise GeometryError(f"tdoa {tau:.6g} s outside (0, {tmax:.6g}] for this geometry")
    target = min(tau, tmax) * g.sound_speed
    zsum = g.receiver_depth + g.source_depth
    zdiff = abs(g.receiver_depth - g.source_depth)
    # far-field approximation dL ~ (zsum^2 - zdiff^2) / 2r bounds the root from above
    lo, hi = 0.0, max(1.0, (zsum ** 2 - zdiff ** 2) / (2 * target) + zsum)
    while g.path_difference(hi) > target:
        hi *= 2
    while hi - lo > tol / 4:
        mid = 0.5 * (lo + hi)
        if g.path_difference(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def range_frame(liftered, cfg: BaselineConfig):
    """Range for one frame, or ``None``."""
    pk = pick_peak(liftered, cfg.lifter, cfg.min_prominence, cfg.sample_rate, cfg.min_peak)
    if pk is None:
        return None
    try:
        return tdoa_to_range(pk.quefrency, cfg.geometry)
    except GeometryError:
        return None


def median_smooth(values, window: int):
    """Sliding median over detected frames only; ``None`` entries pass through.

    The window covers ``window`` consecutive frames centred on each detection;
    the median is taken over the detections inside it, so isolated detections
    across a gap are never pulled toward far-away frames.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("median_window must be a positive odd integer")
    values = list(values)
    out = list(values)
    h = window // 2
    for i, v in enumerate(values):
        if v is None:
            continue
        near = [u for u in values[max(0, i - h):i + h + 1] if u is not None]
        out[i] = float(np.median(near))
    return out


def track_ranges(features, g: RangingGeometry | None = None,
                 min_prominence: float = DEFAULT_MIN_PROMINENCE,
                 median_window: int = DEFAULT_MEDIAN_WINDOW,
                 cfg: BaselineConfig | None = None):
    """Per-frame ranges (``None`` for no detection) for a time-ordered cepstrum sequence.

    Each entry of ``features`` is a liftered cepstrum vector; a 2-d m x n
    feature is reduced to the mean over its columns.
    """
    if cfg is None:
        cfg = BaselineConfig(min_prominence=min_prominence, median_window=median_window,
                             geometry=g or RangingGeometry())
    raw = []
    for f in features:
        v = np.asarray(getattr(f, "values", f), dtype=np.float64)
        if v.ndim == 2:
            v = v.mean(axis=1)
        raw.append(range_frame(v, cfg))
    return median_smooth(raw, cfg.median_window)
