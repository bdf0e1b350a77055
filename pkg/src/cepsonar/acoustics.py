"""Shallow-water transit simulator.

Image-source multipath between a near-surface source and a hydrophone
mounted just above the sea floor, a straight-line constant-speed transit
past the receiver, and synthetic vessel / ambient noise sources.

Depths are positive downwards with the surface at z = 0 and the bottom at
z = water_depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.fft

CROSSFADE_SECONDS = 5e-3


class SimulationError(ValueError):
    """Raised for invalid geometry, kinematics or signal shapes."""


@dataclass(frozen=True)
class Environment:
    water_depth: float = 30.0
    sound_speed: float = 1500.0
    receiver_height_above_bottom: float = 1.0
    surface_reflection_coeff: float = -1.0
    bottom_reflection_coeff: float = 0.5

    def __post_init__(self):
        if not self.water_depth > 0:
            raise SimulationError("water_depth must be positive")
        if not self.sound_speed > 0:
            raise SimulationError("sound_speed must be positive")
        if not 0 < self.receiver_height_above_bottom < self.water_depth:
            raise SimulationError("receiver must sit inside the water column")
        for name in ("surface_reflection_coeff", "bottom_reflection_coeff"):
            if abs(getattr(self, name)) > 1:
                raise SimulationError(f"|{name}| must be <= 1")

    @property
    def receiver_depth(self) -> float:
        return self.water_depth - self.receiver_height_above_bottom


@dataclass(frozen=True)
class ScenarioConfig:
    environment: Environment = field(default_factory=Environment)
    source_depth: float = 1.0
    start_range: float = 500.0
    end_range: float = 500.0
    speed: float = 5.0
    cpa_offset: float = 10.0
    track_interval: float = 0.1
    sample_rate: float = 250_000.0
    max_reflection_order: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.source_depth < self.environment.water_depth:
            raise SimulationError("source_depth must lie inside the water column")
        if not (self.start_range > 0 and self.end_range > 0):
            raise SimulationError("start_range and end_range must be positive")
        if not self.track_interval > 0:
            raise SimulationError("track_interval must be positive")
        if not self.sample_rate > 0:
            raise SimulationError("sample_rate must be positive")
        if self.max_reflection_order < 0:
            raise SimulationError("max_reflection_order must be >= 0")
        if self.cpa_offset < 0:
            raise SimulationError("cpa_offset must be >= 0")


@dataclass(frozen=True)
class TransitTrack:
    timestamps: np.ndarray
    slant_ranges: np.ndarray
    horizontal_ranges: np.ndarray
    interval: float

    @property
    def duration(self) -> float:
        return len(self.timestamps) * self.interval


@dataclass(frozen=True)
class Arrival:
    delay: float
    amplitude: float
    surface_bounces: int = 0
    bottom_bounces: int = 0

    @property
    def order(self) -> int:
        return self.surface_bounces + self.bottom_bounces


@dataclass
class TimeSeries:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise SimulationError("TimeSeries samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise SimulationError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise SimulationError("TimeSeries contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def segment(self, start: int, length: int) -> "TimeSeries":
        return TimeSeries(self.samples[start:start + length], self.sample_rate)


class SourceKind(str, Enum):
    """Radiated-noise families.

    ``A`` is the training vessel (smooth broadband hump), ``B`` the
    generalization vessel (steeper tilt plus harmonic tonal lines).
    """

    A = "A"
    B = "B"


# --------------------------------------------------------------------------
# kinematics
# --------------------------------------------------------------------------

def make_transit_track(cfg: ScenarioConfig) -> TransitTrack:
    """Straight-line, constant-speed transit passing the receiver at ``cpa_offset``.

    The track starts ``start_range`` (horizontal) from the receiver, closes to
    the CPA and opens to ``end_range``. One track point per ``track_interval``.
    """
    if cfg.speed <= 0:
        raise SimulationError("speed must be positive")
    if cfg.start_range < cfg.cpa_offset or cfg.end_range < cfg.cpa_offset:
        raise SimulationError("start/end ranges must be >= cpa_offset")
    x0 = -math.sqrt(cfg.start_range ** 2 - cfg.cpa_offset ** 2)
    x1 = math.sqrt(cfg.end_range ** 2 - cfg.cpa_offset ** 2)
    duration = (x1 - x0) / cfg.speed
    count = int(math.floor(duration / cfg.track_interval + 1e-9)) + 1
    t = np.arange(count) * cfg.track_interval
    x = x0 + cfg.speed * t
    horizontal = np.hypot(x, cfg.cpa_offset)
    dz = cfg.environment.receiver_depth - cfg.source_depth
    slant = np.hypot(horizontal, dz)
    return TransitTrack(t, slant, horizontal, cfg.track_interval)


# --------------------------------------------------------------------------
# image-source multipath
# --------------------------------------------------------------------------

def _image_sources(source_depth: float, depth: float, max_order: int):
    """Yield (image depth, surface bounces, bottom bounces).

    Two images per order >= 1: one whose reflection sequence starts at the
    surface and one starting at the bottom, alternating thereafter.
    """
    yield source_depth, 0, 0
    for first in ("surface", "bottom"):
        z = source_depth
        ns = nb = 0
        boundary = first
        for _ in range(max_order):
            if boundary == "surface":
                z = -z
                ns += 1
                boundary = "bottom"
            else:
                z = 2.0 * depth - z
                nb += 1
                boundary = "surface"
            yield z, ns, nb


def path_arrivals(horizontal_range: float, source_depth: float, env: Environment,
                  max_order: int) -> list[Arrival]:
    """All image-source arrivals with at most ``max_order`` boundary reflections.

    Amplitudes carry the product of reflection coefficients and 1/R
    spherical spreading; the list is sorted by delay.
    """
    if horizontal_range < 0:
        raise SimulationError("horizontal_range must be >= 0")
    if max_order < 0:
        raise SimulationError("max_order must be >= 0")
    zr = env.receiver_depth
    out = []
    for z_img, ns, nb in _image_sources(source_depth, env.water_depth, max_order):
        length = math.hypot(horizontal_range, z_img - zr)
        coeff = env.surface_reflection_coeff ** ns * env.bottom_reflection_coeff ** nb
        out.append(Arrival(length / env.sound_speed, coeff / length, ns, nb))
    out.sort(key=lambda a: (a.delay, a.order))
    return out


def two_path_tdoa(horizontal_range, source_depth: float, receiver_depth: float,
                  sound_speed: float):
    """Surface-reflected minus direct travel time (vectorised over range)."""
    r = np.asarray(horizontal_range, dtype=float)
    diff = (np.hypot(r, receiver_depth + source_depth)
            - np.hypot(r, receiver_depth - source_depth))
    return diff / sound_speed


# --------------------------------------------------------------------------
# sources
# --------------------------------------------------------------------------

def shaped_noise(density, length: int, sample_rate: float, rng: np.random.Generator,
                 dtype=np.float64, lines=()) -> np.ndarray:
    """Gaussian noise whose expected one-sided PSD is ``density(f)`` (power/Hz).

    White noise is transformed, each bin scaled by sqrt(density * fs / 2) and
    transformed back (circular, so no filter transient). ``lines`` holds
    ``(frequency, amplitude, phase)`` cosines added on the nearest bin.
    """
    nfft = scipy.fft.next_fast_len(length, real=True)
    white = rng.standard_normal(nfft, dtype=np.float32 if dtype == np.float32 else np.float64)
    spec = scipy.fft.rfft(white)
    del white
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    gain = np.sqrt(np.maximum(density(freqs), 0.0) * sample_rate / 2.0)
    spec *= gain.astype(spec.real.dtype, copy=False)
    del freqs, gain
    for f, amp, phase in lines:
        k = int(round(f * nfft / sample_rate))
        if 0 < k < len(spec) - 1:
            spec[k] += amp * nfft / 2 * np.exp(1j * phase)
    return scipy.fft.irfft(spec, n=nfft)[:length]


def _hump(freqs, f0, slope_up=2.0, slope_down=2.0):
    u = np.asarray(freqs) / f0
    return u ** slope_up / (1.0 + u ** (slope_up + slope_down))


KIND_B_LINE_FUNDAMENTAL = 97.0
KIND_B_LINE_COUNT = 24
KIND_B_LINE_EXCESS_DB = 20.0


def _source_density(kind: SourceKind, f0_scale: float = 1.0, slope_scale: float = 1.0):
    f0, up, down = (6_000.0, 1.0, 1.0) if kind is SourceKind.A else (2_500.0, 1.0, 1.6)
    return lambda f: _hump(f, f0 * f0_scale, up * slope_scale, down * slope_scale)


def _unit_power(density, sample_rate: float) -> float:
    f = np.linspace(0.0, sample_rate / 2.0, 200_001)
    return float(np.trapezoid(density(f), f))


def source_signal(kind, duration: float, sample_rate: float, seed: int,
                  f0_scale: float = 1.0, slope_scale: float = 1.0) -> TimeSeries:
    """Broadband vessel noise of the given kind, unit-power continuum.

    Kind B adds harmonic tonal lines (fundamental ~97 Hz, so the line comb sits
    at ~10 ms quefrency, well outside the ranging lifter band), each
    ``KIND_B_LINE_EXCESS_DB`` above the continuum in a 1 Hz band.
    ``f0_scale`` and ``slope_scale`` perturb the hump (centre frequency and
    both slopes) to vary one vessel's spectrum between transits.
    """
    kind = SourceKind(kind)
    if duration <= 0:
        raise SimulationError("duration must be positive")
    if f0_scale <= 0 or slope_scale <= 0:
        raise SimulationError("spectral scales must be positive")
    n = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    dens = _source_density(kind, f0_scale, slope_scale)
    norm = _unit_power(dens, sample_rate)
    lines = []
    if kind is SourceKind.B:
        phases = rng.uniform(0, 2 * np.pi, KIND_B_LINE_COUNT)
        for k, f in enumerate(source_line_frequencies(kind)):
            # continuum power in 1 Hz, raised by the excess, as cosine power A^2/2
            power = dens(f) / norm * 10 ** (KIND_B_LINE_EXCESS_DB / 10)
            lines.append((f, math.sqrt(2 * power), phases[k]))
    x = shaped_noise(lambda f: dens(f) / norm, n, sample_rate, rng, dtype=np.float32,
                     lines=lines)
    return TimeSeries(x, sample_rate)


def source_line_frequencies(kind) -> np.ndarray:
    if SourceKind(kind) is SourceKind.B:
        return KIND_B_LINE_FUNDAMENTAL * np.arange(1, KIND_B_LINE_COUNT + 1)
    return np.zeros(0)


def ambient_density(f, knee: float = 200.0):
    """Pink-tilted ambient noise shape (1/f above ``knee``), unnormalised."""
    f = np.asarray(f, dtype=float)
    return 1.0 / np.maximum(f, knee)


def ambient_noise(duration_samples: int, sample_rate: float, power: float,
                  seed: int) -> TimeSeries:
    """Background noise with the ambient spectral shape and given mean-square power."""
    norm = _unit_power(ambient_density, sample_rate)
    rng = np.random.default_rng(seed)
    x = shaped_noise(lambda f: ambient_density(f) * (power / norm), duration_samples,
                     sample_rate, rng, dtype=np.float32)
    return TimeSeries(x, sample_rate)


# --------------------------------------------------------------------------
# propagation
# --------------------------------------------------------------------------

def _max_delay(track: TransitTrack, env: Environment, source_depth: float,
               max_order: int) -> float:
    far = float(np.max(track.horizontal_ranges))
    arrivals = path_arrivals(far, source_depth, env, max_order)
    return max(a.delay for a in arrivals)


def required_source_samples(track: TransitTrack, env: Environment, source_depth: float,
                            max_order: int, sample_rate: float) -> int:
    """Source length needed by :func:`propagate` for this track."""
    block = int(round(track.interval * sample_rate))
    n_out = block * len(track.timestamps)
    half = int(round(CROSSFADE_SECONDS * sample_rate / 2))
    lead = int(math.ceil(_max_delay(track, env, source_depth, max_order) * sample_rate)) + 2
    return n_out + lead + half + 2


def propagate(track: TransitTrack, source: TimeSeries, env: Environment,
              source_depth: float, max_order: int) -> TimeSeries:
    """Received pressure at the hydrophone for a source moving along ``track``.

    Geometry is frozen per track block; each block is the sum of
    amplitude-scaled copies of the source delayed by the arrival times
    (linear interpolation for the fractional part), and neighbouring blocks
    are joined with a 5 ms linear crossfade.

    The source is taken to start ``lead`` samples before the first output
    sample, with ``lead`` covering the longest propagation delay, so every
    output sample sees emitted signal; see :func:`required_source_samples`.
    """
    fs = source.sample_rate
    block = int(round(track.interval * fs))
    nblk = len(track.timestamps)
    n_out = block * nblk
    need = required_source_samples(track, env, source_depth, max_order, fs)
    if len(source) < need:
        raise SimulationError(
            f"source has {len(source)} samples, track needs {need}")
    half = int(round(CROSSFADE_SECONDS * fs / 2))
    lead = need - n_out - half - 2
    src = source.samples
    out = np.zeros(n_out, dtype=np.result_type(src.dtype, np.float32))
    ramp = (np.arange(2 * half) + 0.5) / (2 * half) if half else np.zeros(0)

    for k in range(nblk):
        lo = max(k * block - half, 0)
        hi = min((k + 1) * block + half, n_out)
        m = hi - lo
        y = np.zeros(m, dtype=np.float64)
        for arr in path_arrivals(float(track.horizontal_ranges[k]), source_depth, env,
                                 max_order):
            if arr.amplitude == 0.0:
                continue
            pos = lead - arr.delay * fs
            i0 = int(math.floor(pos))
            frac = pos - i0
            a = lo + i0
            seg0 = src[a:a + m]
            seg1 = src[a + 1:a + 1 + m]
            y += arr.amplitude * ((1.0 - frac) * seg0 + frac * seg1)
        w = np.ones(m)
        if k > 0 and half:
            w[:2 * half] = ramp
        if k < nblk - 1 and half:
            w[m - 2 * half:] = ramp[::-1]
        out[lo:hi] += w * y
    return TimeSeries(out, fs)


def mix_at_snr(signal: TimeSeries, noise: TimeSeries, snr_db: float) -> TimeSeries:
    """``signal + g * noise`` with g chosen so the mean-square ratio is ``snr_db``."""
    if len(signal) != len(noise) or signal.sample_rate != noise.sample_rate:
        raise SimulationError("signal and noise must share length and sample rate")
    s = np.asarray(signal.samples, dtype=np.float64)
    v = np.asarray(noise.samples, dtype=np.float64)
    ps = float(np.mean(s * s))
    pn = float(np.mean(v * v))
    if ps <= 0:
        raise SimulationError("signal has zero power")
    if pn <= 0:
        if math.isinf(snr_db) and snr_db > 0:
            return TimeSeries(s.copy(), signal.sample_rate)
        raise SimulationError("noise has zero power")
    g = math.sqrt(ps / (pn * 10 ** (snr_db / 10)))
    return TimeSeries(s + g * v, signal.sample_rate)


def noise_gain(signal_power: float, noise_power: float, snr_db: float) -> float:
    return math.sqrt(signal_power / (noise_power * 10 ** (snr_db / 10)))


# --------------------------------------------------------------------------
# config + binary I/O
# --------------------------------------------------------------------------

_ENV_KEYS = {f: float for f in ("water_depth", "sound_speed", "receiver_height_above_bottom",
                                "surface_reflection_coeff", "bottom_reflection_coeff")}
_SCEN_KEYS = {"source_depth": float, "start_range": float, "end_range": float,
              "speed": float, "cpa_offset": float, "track_interval": float,
              "sample_rate": float, "max_reflection_order": int, "seed": int}


def scenario_from_mapping(values: dict) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from flat ``key -> str/number`` pairs.

    Unknown keys raise; missing keys keep their defaults.
    """
    env_kw, scen_kw = {}, {}
    for key, raw in values.items():
        if key in _ENV_KEYS:
            env_kw[key] = _ENV_KEYS[key](raw)
        elif key in _SCEN_KEYS:
            scen_kw[key] = _SCEN_KEYS[key](raw)
        else:
            raise SimulationError(f"unknown scenario key {key!r}")
    return ScenarioConfig(environment=Environment(**env_kw), **scen_kw)


def scenario_to_mapping(cfg: ScenarioConfig) -> dict:
    out = {k: getattr(cfg.environment, k) for k in _ENV_KEYS}
    out.update({k: getattr(cfg, k) for k in _SCEN_KEYS})
    return out


def parse_key_values(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SimulationError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise SimulationError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_mapping(parse_key_values(fh.read()))


def dump_scenario(cfg: ScenarioConfig) -> str:
    return "".join(f"{k} = {float(v)!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                   for k, v in scenario_to_mapping(cfg).items())
