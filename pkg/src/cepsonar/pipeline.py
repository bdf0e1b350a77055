"""End-to-end experiment: corpus synthesis, featurization, training, evaluation, report.

Everything here is deterministic given :class:`ExperimentConfig` (all seeds
are derived from ``ExperimentConfig.seed`` through ``numpy.random.SeedSequence``).
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import formats
from .acoustics import (ScenarioConfig, SimulationError, SourceKind, TimeSeries,
                        TransitTrack, ambient_noise, make_transit_track, parse_key_values,
                        path_arrivals, propagate, required_source_samples,
                        scenario_from_mapping, scenario_to_mapping, source_signal)
from .augment import PsdModel, augment_snr, estimate_psd
from .baseline import BaselineConfig, RangingGeometry, median_smooth, range_frame
from .dsp import LifterWindow, SpectralParams, cepstrogram_batch
from .evaluation import PredictionRecord, compare_report, mean_relative_error
from .net.model import ModelConfig, NetworkModel, predict_batch
from .net.training import Dataset, TrainConfig, train

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "gen")


class ConfigError(ValueError):
    pass


def _phase_defaults(alpha: float) -> TrainConfig:
    # desk-scale values (published values live in training.REFERENCE_DEFAULTS); the
    # ranging error is weighted by the range scale, i.e. measured in metres
    return TrainConfig(learning_rate=1e-5 if alpha == 0 else 2e-4, weight_decay=5e-4,
                       momentum=0.9, batch_size=32, alpha=alpha, patience=5,
                       min_rel_improvement=1e-3, max_epochs=20 if alpha == 0 else 6, seed=0,
                       range_loss_weight=500.0)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    spectral: SpectralParams = field(default_factory=SpectralParams)
    lifter_low_s: float = 84e-6
    lifter_high_s: float = 1.4e-3
    segment_seconds: float = 1.0
    hop_seconds: float = 0.5
    snr_at_100m_db: float = 24.0
    cpa_scale_range: tuple = (0.5, 2.0)
    speed_scale_range: tuple = (0.8, 1.2)
    source_f0_scale_range: tuple = (0.6, 1.5)
    source_slope_scale_range: tuple = (0.7, 1.4)
    transits: dict = field(default_factory=lambda: {"train": 6, "val": 2, "test": 2, "gen": 2})
    examples: dict = field(default_factory=lambda: {"train": 4000, "val": 1000, "test": 800,
                                                    "gen": 800})
    background_recording_seconds: float = 60.0
    widths: tuple = (1, 8)
    augment_snr_db: tuple = (-10.0, 50.0)
    flip_width: bool = True
    far_field_repeat: int = 4
    phase1: TrainConfig = field(default_factory=lambda: _phase_defaults(0.0))
    phase2: TrainConfig = field(default_factory=lambda: _phase_defaults(0.99))
    baseline_min_prominence: float = 4.0
    baseline_min_peak: float = 0.2
    baseline_median_window: int = 5
    bin_width_m: float = 20.0
    sweep_snrs_db: tuple = (-10.0, 0.0, 10.0, 20.0, 60.0)
    seed: int = 0

    def __post_init__(self):
        for s in SPLITS:
            if self.transits.get(s, 0) < 1:
                raise ConfigError(f"need at least one {s} transit")
            if self.examples.get(s, 0) < 2:
                raise ConfigError(f"need at least two {s} examples")
        if self.segment_seconds <= 0 or self.hop_seconds <= 0:
            raise ConfigError("segment and hop durations must be positive")
        if any(w < 1 for w in self.widths) or not self.widths:
            raise ConfigError("widths must be >= 1")
        if self.augment_snr_db[0] > self.augment_snr_db[1]:
            raise ConfigError("augment SNR range must be ordered")
        if self.background_recording_seconds < self.segment_seconds:
            raise ConfigError("background recordings shorter than one segment")
        if self.far_field_repeat < 1:
            raise ConfigError("far_field_repeat must be >= 1")
        if self.baseline_median_window < 1 or self.baseline_median_window % 2 == 0:
            raise ConfigError("baseline median window must be odd")

    @property
    def sample_rate(self) -> float:
        return self.scenario.sample_rate

    @property
    def lifter(self) -> LifterWindow:
        return LifterWindow.for_sample_rate(self.sample_rate, self.lifter_low_s, self.lifter_high_s)

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_seconds * self.sample_rate))

    @property
    def range_scale(self) -> float:
        return max(self.scenario.start_range, self.scenario.end_range)

    @property
    def geometry(self) -> RangingGeometry:
        env = self.scenario.environment
        return RangingGeometry(self.scenario.source_depth, env.receiver_depth, env.sound_speed)

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(self.lifter, self.sample_rate, self.baseline_min_prominence,
                              self.baseline_min_peak, self.baseline_median_window, self.geometry)

    def failure_range(self) -> float:
        """Range beyond which the surface/direct TDOA falls below the lifter's low bound."""
        return self.geometry.range_at_tdoa(self.lifter.low_index / self.sample_rate)

    def bin_edges(self) -> np.ndarray:
        nb = int(math.ceil(self.range_scale / self.bin_width_m))
        return np.arange(nb + 1) * self.bin_width_m

    def model_config(self, width: int) -> ModelConfig:
        return ModelConfig(input_height=self.lifter.size, input_width=width,
                           range_scale=self.range_scale)

    def phases(self, flip: bool) -> list[TrainConfig]:
        return [replace(p, flip_width=flip, seed=self.seed + p.seed)
                for p in (self.phase1, self.phase2)]


# --------------------------------------------------------------------------
# config file
# --------------------------------------------------------------------------

_TUPLE_FLOAT = {"cpa_scale_range", "speed_scale_range", "source_f0_scale_range",
                "source_slope_scale_range", "augment_snr_db", "sweep_snrs_db"}
_SIMPLE = {"lifter_low_s": float, "lifter_high_s": float, "segment_seconds": float,
           "hop_seconds": float, "snr_at_100m_db": float,
           "background_recording_seconds": float, "baseline_min_prominence": float,
           "baseline_min_peak": float, "baseline_median_window": int,
           "far_field_repeat": int, "bin_width_m": float,
           "seed": int}


def _parse_bool(v: str) -> bool:
    v = str(v).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple:
    return tuple(float(p) for p in str(v).replace(",", " ").split())


def config_from_mapping(values: dict) -> ExperimentConfig:
    """Experiment config from flat keys.

    Keys: ``scenario.<field>`` (see :class:`ScenarioConfig` / ``Environment``),
    ``spectral.window_length|overlap_fraction|floor_epsilon``,
    ``phase1.<TrainConfig field>``, ``phase2.<...>``, ``transits.<split>``,
    ``examples.<split>``, ``widths`` (space separated), tuple-valued keys as
    space-separated numbers, and the scalar fields of :class:`ExperimentConfig`.
    """
    scen, spec, ph1, ph2, kw = {}, {}, {}, {}, {}
    transits = dict(ExperimentConfig().transits)
    examples = dict(ExperimentConfig().examples)
    tc_types = {f.name: f.type for f in fields(TrainConfig)}
    for key, raw in values.items():
        head, _, tail = key.partition(".")
        if head == "scenario" and tail:
            scen[tail] = raw
        elif head == "spectral" and tail:
            conv = {"window_length": int, "overlap_fraction": float, "floor_epsilon": float}
            if tail not in conv:
                raise ConfigError(f"unknown spectral key {tail!r}")
            spec[tail] = conv[tail](raw)
        elif head in ("phase1", "phase2") and tail:
            if tail not in tc_types:
                raise ConfigError(f"unknown training key {tail!r}")
            t = tc_types[tail]
            val = (_parse_bool(raw) if t in (bool, "bool") else
                   int(raw) if t in (int, "int") else float(raw))
            (ph1 if head == "phase1" else ph2)[tail] = val
        elif head in ("transits", "examples") and tail:
            if tail not in SPLITS:
                raise ConfigError(f"unknown split {tail!r}")
            (transits if head == "transits" else examples)[tail] = int(raw)
        elif key == "widths":
            kw["widths"] = tuple(int(float(p)) for p in str(raw).replace(",", " ").split())
        elif key == "flip_width":
            kw["flip_width"] = _parse_bool(raw)
        elif key in _TUPLE_FLOAT:
            kw[key] = _floats(raw)
        elif key in _SIMPLE:
            kw[key] = _SIMPLE[key](raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        scenario = scenario_from_mapping(scen)
    except SimulationError as exc:
        raise ConfigError(str(exc)) from exc
    base = ExperimentConfig()
    return ExperimentConfig(scenario=scenario, spectral=replace(base.spectral, **spec),
                            phase1=replace(base.phase1, **ph1), phase2=replace(base.phase2, **ph2),
                            transits=transits, examples=examples, **kw)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_mapping(parse_key_values(fh.read()))


def dump_config(cfg: ExperimentConfig) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (tuple, list)):
            return " ".join(fmt(x) for x in v)
        return repr(float(v)) if isinstance(v, float) else str(v)

    lines = [f"scenario.{k} = {fmt(v)}" for k, v in scenario_to_mapping(cfg.scenario).items()]
    lines += [f"spectral.{k} = {fmt(v)}" for k, v in asdict(cfg.spectral).items()]
    for name in ("phase1", "phase2"):
        lines += [f"{name}.{k} = {fmt(v)}" for k, v in asdict(getattr(cfg, name)).items()]
    lines += [f"transits.{s} = {cfg.transits[s]}" for s in SPLITS]
    lines += [f"examples.{s} = {cfg.examples[s]}" for s in SPLITS]
    for k in sorted(_SIMPLE) + sorted(_TUPLE_FLOAT) + ["widths", "flip_width"]:
        lines.append(f"{k} = {fmt(getattr(cfg, k))}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# corpus
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RecordingSpec:
    name: str
    split: str
    kind: str            # "A", "B" or "background"
    seed: int
    cpa_offset: float = 0.0
    speed: float = 0.0
    duration: float = 0.0  # background only; transit duration follows its track
    f0_scale: float = 1.0
    slope_scale: float = 1.0

    @property
    def is_transit(self) -> bool:
        return self.kind != "background"


def _child_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def _split_id(split: str) -> int:
    return SPLITS.index(split)


def examples_in(n_samples: int, cfg: ExperimentConfig) -> int:
    if n_samples < cfg.segment_samples:
        return 0
    return (n_samples - cfg.segment_samples) // cfg.hop_samples + 1


def plan_corpus(cfg: ExperimentConfig) -> list[RecordingSpec]:
    """Transits (kind A for train/val/test, kind B for gen) and background recordings.

    Each transit draws its CPA offset and speed from the configured scale
    ranges around the scenario values, and perturbs its vessel's spectral
    hump (centre frequency, slopes). Background recordings per split are
    sized to supply half that split's examples.
    """
    rng = np.random.default_rng(_child_seed(cfg.seed, 7))
    specs = []
    for split in SPLITS:
        kind = SourceKind.B.value if split == "gen" else SourceKind.A.value
        for i in range(cfg.transits[split]):
            cpa = cfg.scenario.cpa_offset * rng.uniform(*cfg.cpa_scale_range)
            speed = cfg.scenario.speed * rng.uniform(*cfg.speed_scale_range)
            f0s = rng.uniform(*cfg.source_f0_scale_range)
            sls = rng.uniform(*cfg.source_slope_scale_range)
            cpa = min(cpa, cfg.scenario.start_range, cfg.scenario.end_range)
            specs.append(RecordingSpec(f"{split}_transit{i:02d}_{kind}", split, kind,
                                       _child_seed(cfg.seed, 1, _split_id(split), i),
                                       round(cpa, 6), round(speed, 6), 0.0,
                                       round(f0s, 6), round(sls, 6)))
    per_rec = examples_in(int(round(cfg.background_recording_seconds * cfg.sample_rate)), cfg)
    for split in SPLITS:
        need = cfg.examples[split] // 2
        for i in range(int(math.ceil(need / per_rec))):
            specs.append(RecordingSpec(f"{split}_background{i:02d}", split, "background",
                                       _child_seed(cfg.seed, 2, _split_id(split), i),
                                       duration=cfg.background_recording_seconds))
    return specs


def received_power(r: float, cfg: ExperimentConfig) -> float:
    """Incoherent received power at horizontal range ``r`` for a unit-power source."""
    arr = path_arrivals(r, cfg.scenario.source_depth, cfg.scenario.environment,
                        cfg.scenario.max_reflection_order)
    return float(sum(a.amplitude ** 2 for a in arr))


def ambient_power(cfg: ExperimentConfig) -> float:
    return received_power(100.0, cfg) / 10 ** (cfg.snr_at_100m_db / 10)


def transit_scenario(spec: RecordingSpec, cfg: ExperimentConfig) -> ScenarioConfig:
    return replace(cfg.scenario, cpa_offset=spec.cpa_offset, speed=spec.speed, seed=spec.seed)


def render_recording(spec: RecordingSpec, cfg: ExperimentConfig, with_noise: bool = True):
    """Audio (float32) and, for transits, the ground-truth track."""
    fs = cfg.sample_rate
    if not spec.is_transit:
        n = int(round(spec.duration * fs))
        return ambient_noise(n, fs, ambient_power(cfg), spec.seed), None
    scen = transit_scenario(spec, cfg)
    track = make_transit_track(scen)
    need = required_source_samples(track, scen.environment, scen.source_depth,
                                   scen.max_reflection_order, fs)
    src = source_signal(spec.kind, need / fs, fs, _child_seed(spec.seed, 1), spec.f0_scale,
                        spec.slope_scale)
    rx = propagate(track, src, scen.environment, scen.source_depth, scen.max_reflection_order)
    del src
    y = rx.samples.astype(np.float32, copy=False)
    if with_noise:
        noise = ambient_noise(len(y), fs, ambient_power(cfg), _child_seed(spec.seed, 2))
        y = y + noise.samples.astype(np.float32, copy=False)
    return TimeSeries(y, fs), track


class Corpus:
    """Recordings either rendered on demand or read from a ``simulate`` directory."""

    def __init__(self, cfg: ExperimentConfig, specs: list[RecordingSpec] | None = None,
                 directory: str | None = None):
        self.cfg = cfg
        self.specs = specs if specs is not None else plan_corpus(cfg)
        self.directory = directory

    def load(self, spec: RecordingSpec):
        if self.directory is None:
            return render_recording(spec, self.cfg)
        audio = formats.read_timeseries(os.path.join(self.directory, f"{spec.name}.tser"))
        track = None
        if spec.is_transit:
            track = read_track(os.path.join(self.directory, f"{spec.name}.track.csv"),
                               self.cfg.scenario.track_interval)
        return audio, track

    def by_split(self, split: str, transit: bool | None = None) -> list[RecordingSpec]:
        return [s for s in self.specs if s.split == split
                and (transit is None or s.is_transit == transit)]


def write_track(path, track: TransitTrack) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time_s,horizontal_range_m,slant_range_m\n")
        for t, h, s in zip(track.timestamps, track.horizontal_ranges, track.slant_ranges):
            fh.write(f"{float(t)!r},{float(h)!r},{float(s)!r}\n")


def read_track(path, interval: float) -> TransitTrack:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TransitTrack(data[:, 0], data[:, 2], data[:, 1], interval)


def simulate_corpus(cfg: ExperimentConfig, out_dir: str, generalization: bool = True) -> dict:
    """Write every planned recording as TSER plus a JSON ground-truth index."""
    os.makedirs(out_dir, exist_ok=True)
    specs = [s for s in plan_corpus(cfg) if generalization or s.split != "gen"]
    index = {"config": dump_config(cfg), "recordings": []}
    for spec in specs:
        audio, track = render_recording(spec, cfg)
        formats.write_timeseries(os.path.join(out_dir, f"{spec.name}.tser"), audio)
        entry = asdict(spec)
        entry["samples"] = len(audio)
        if track is not None:
            write_track(os.path.join(out_dir, f"{spec.name}.track.csv"), track)
            entry["track"] = f"{spec.name}.track.csv"
        index["recordings"].append(entry)
        log.info("simulated %s (%d samples)", spec.name, len(audio))
    with open(os.path.join(out_dir, "index.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    return index


def open_corpus(directory: str, cfg: ExperimentConfig | None = None) -> Corpus:
    path = os.path.join(directory, "index.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no corpus index at {path}")
    with open(path, encoding="utf-8") as fh:
        index = json.load(fh)
    if cfg is None:
        cfg = config_from_mapping(parse_key_values(index["config"]))
    keys = {f.name for f in fields(RecordingSpec)}
    specs = [RecordingSpec(**{k: v for k, v in e.items() if k in keys})
             for e in index["recordings"]]
    return Corpus(cfg, specs, directory)


# --------------------------------------------------------------------------
# featurization
# --------------------------------------------------------------------------

@dataclass
class ExampleMeta:
    example_id: str
    recording: str
    start: int
    time_mid: float
    presence: bool
    true_range: float  # NaN when absent


@dataclass
class FeatureSet:
    """Features for one split: ``features[width]`` is (N, m, width) float32."""

    meta: list
    features: dict

    @property
    def presence(self) -> np.ndarray:
        return np.array([m.presence for m in self.meta], dtype=bool)

    @property
    def ranges(self) -> np.ndarray:
        return np.array([m.true_range for m in self.meta], dtype=np.float64)

    def dataset(self, width: int) -> Dataset:
        return Dataset(self.features[width], self.presence, self.ranges)

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=int)
        return FeatureSet([self.meta[i] for i in idx],
                          {w: f[idx] for w, f in self.features.items()})


def label_at(track: TransitTrack, time_s: float) -> float:
    """Ground-truth horizontal range at ``time_s``; float32-representable."""
    return float(np.float32(np.interp(time_s, track.timestamps, track.horizontal_ranges)))


def featurize_segments(segments: np.ndarray, widths, cfg: ExperimentConfig) -> dict:
    return {w: cepstrogram_batch(segments, w, cfg.lifter, cfg.spectral).astype(np.float32)
            for w in widths}


def featurize_recording(audio: TimeSeries, starts, widths, cfg: ExperimentConfig,
                        psd: PsdModel | None = None, aug_seeds=None, batch: int = 16) -> dict:
    """Features for the segments beginning at ``starts``; optional SNR augmentation.

    With ``psd`` given, each segment gets matched colored noise at an SNR
    drawn from ``cfg.augment_snr_db`` using its own seed from ``aug_seeds``.
    """
    L = cfg.segment_samples
    out = {w: [] for w in widths}
    x = audio.samples
    for i in range(0, len(starts), batch):
        chunk = starts[i:i + batch]
        segs = np.stack([np.asarray(x[s:s + L], dtype=np.float64) for s in chunk])
        if psd is not None:
            for j in range(len(chunk)):
                segs[j] = augment_snr(TimeSeries(segs[j], audio.sample_rate), psd,
                                      cfg.augment_snr_db, aug_seeds[i + j]).samples
        for w, f in featurize_segments(segs, widths, cfg).items():
            out[w].append(f)
    m = cfg.lifter.size
    return {w: (np.concatenate(v) if v else np.zeros((0, m, w), np.float32))
            for w, v in out.items()}


def _select(rng, pool: int, quota: int) -> np.ndarray:
    if quota >= pool:
        return np.arange(pool)
    return np.sort(rng.choice(pool, size=quota, replace=False))


def background_psd(corpus: Corpus) -> PsdModel:
    """Augmentation PSD from the first training background recording."""
    spec = corpus.by_split("train", transit=False)[0]
    audio, _ = corpus.load(spec)
    return estimate_psd(audio, corpus.cfg.spectral.window_length)


def build_split(corpus: Corpus, split: str, widths, augment: bool = False,
                psd: PsdModel | None = None) -> FeatureSet:
    """Balanced examples for one split.

    Transit examples are sampled down to half the split's example budget;
    the same number of background examples is taken. In the train split,
    every transit example beyond the failure range is included
    ``far_field_repeat`` times (the rest of the quota is sampled at random):
    that regime is a small slice of each transit and is otherwise underfit.
    With ``augment`` each example (and each repeat) gets its own colored
    noise before featurization.
    """
    cfg = corpus.cfg
    rng = np.random.default_rng(_child_seed(cfg.seed, 3, _split_id(split)))
    quota = cfg.examples[split] // 2
    fs, L, hop = cfg.sample_rate, cfg.segment_samples, cfg.hop_samples
    transits = corpus.by_split(split, transit=True)
    repeat = cfg.far_field_repeat if split == "train" else 1
    far_lo = cfg.failure_range()
    # candidate (transit, frame) pairs are known from the tracks without rendering audio
    near, far = [], []
    for t_no, spec in enumerate(transits):
        track = make_transit_track(transit_scenario(spec, cfg))
        n = int(round(track.interval * fs)) * len(track.timestamps)
        for k in range(examples_in(n, cfg)):
            r = label_at(track, (k * hop + L / 2) / fs)
            (far if repeat > 1 and r >= far_lo else near).append((t_no, k))
    if repeat > 1:
        picks = [(t, k, c) for c in range(repeat) for t, k in far][:quota]
        rest = _select(rng, len(near), quota - len(picks))
        picks += [(*near[i], 0) for i in rest]
    else:
        picks = [(*near[i], 0) for i in _select(rng, len(near), quota)]
    picks.sort()
    if augment and psd is None:
        psd = background_psd(corpus)

    meta, feats = [], {w: [] for w in widths}

    def add(spec, audio, track, items, rec_no):
        starts = [int(k) * hop for k, _ in items]
        seeds = [_child_seed(cfg.seed, 4, _split_id(split), rec_no, int(k), c) for k, c in items]
        f = featurize_recording(audio, starts, widths, cfg, psd if augment else None, seeds)
        for w in widths:
            feats[w].append(f[w])
        for (_, c), s in zip(items, starts):
            tmid = (s + L / 2) / fs
            rng_m = label_at(track, tmid) if track is not None else math.nan
            eid = f"{spec.name}:{s}" + (f"#{c}" if c else "")
            meta.append(ExampleMeta(eid, spec.name, s, tmid, track is not None, rng_m))

    for t_no, spec in enumerate(transits):
        items = [(k, c) for t, k, c in picks if t == t_no]
        if not items:
            continue
        audio, track = corpus.load(spec)
        add(spec, audio, track, items, t_no)
        del audio
    remaining = len(meta)
    for b_no, spec in enumerate(corpus.by_split(split, transit=False)):
        if remaining <= 0:
            break
        audio, _ = corpus.load(spec)
        take = min(remaining, examples_in(len(audio), cfg))
        add(spec, audio, None, [(k, 0) for k in range(take)], 1000 + b_no)
        remaining -= take
    if remaining > 0:
        raise ConfigError(f"{split}: background recordings too short for balancing")
    return FeatureSet(meta, {w: np.concatenate(v) for w, v in feats.items()})


def frame_features(audio: TimeSeries, cfg: ExperimentConfig, width: int = 1):
    """All hop-spaced frames of a recording: (starts, features)."""
    starts = [k * cfg.hop_samples for k in range(examples_in(len(audio), cfg))]
    return starts, featurize_recording(audio, starts, (width,), cfg)[width]


# --------------------------------------------------------------------------
# evaluation helpers
# --------------------------------------------------------------------------

def cnn_records(model: NetworkModel, fs_: FeatureSet, width: int, tag: str,
                threshold: float = 0.5) -> list[PredictionRecord]:
    prob, rng_m, _ = predict_batch(model, fs_.features[width])
    out = []
    for m, p, r in zip(fs_.meta, prob, rng_m):
        out.append(PredictionRecord(m.example_id, m.presence,
                                    m.true_range if m.presence else None, float(p),
                                    float(r) if p >= threshold else None, tag))
    return out


def baseline_track(frames, cfg: ExperimentConfig):
    """Smoothed baseline ranges for a time-ordered stack of n=1 frames."""
    bcfg = cfg.baseline_config()
    raw = [range_frame(f[:, 0] if f.ndim == 2 else f, bcfg) for f in frames]
    return median_smooth(raw, bcfg.median_window)


def baseline_records(corpus: Corpus, fs_: FeatureSet, split: str, tag: str = "baseline"):
    """Baseline predictions for a split's examples plus per-transit time tracks.

    Each transit is ranged frame by frame over its whole length (median
    smoothing needs the time sequence); background examples are ranged
    individually.
    """
    cfg = corpus.cfg
    wanted = {m.example_id for m in fs_.meta}
    preds, tracks = {}, {}
    for spec in corpus.by_split(split, transit=True):
        audio, track = corpus.load(spec)
        starts, frames = frame_features(audio, cfg, 1)
        del audio
        smooth = baseline_track(frames, cfg)
        rows = []
        for s, r in zip(starts, smooth):
            eid = f"{spec.name}:{s}"
            tmid = (s + cfg.segment_samples / 2) / cfg.sample_rate
            rows.append((tmid, label_at(track, tmid), tag, r))
            if eid in wanted:
                preds[eid] = r
        tracks[spec.name] = rows
    bcfg = cfg.baseline_config()
    neg = [i for i, m in enumerate(fs_.meta) if not m.presence]
    if neg and 1 in fs_.features:
        for i in neg:
            preds[fs_.meta[i].example_id] = range_frame(fs_.features[1][i][:, 0], bcfg)
    elif neg:
        raise ConfigError("baseline needs n=1 features for background examples")
    recs = []
    for m in fs_.meta:
        recs.append(PredictionRecord(m.example_id, m.presence,
                                     m.true_range if m.presence else None, math.nan,
                                     preds.get(m.example_id), tag))
    return recs, tracks


def variant_tag(width: int, augment: bool) -> str:
    return f"cnn_n{width}_{'aug' if augment else 'noaug'}"


def far_field_clips(corpus: Corpus, split: str, lo: float):
    """Raw audio of every frame of ``split`` transits whose true range is >= ``lo``."""
    cfg = corpus.cfg
    clips = []
    for spec in corpus.by_split(split, transit=True):
        audio, track = corpus.load(spec)
        for k in range(examples_in(len(audio), cfg)):
            s = k * cfg.hop_samples
            tmid = (s + cfg.segment_samples / 2) / cfg.sample_rate
            r = label_at(track, tmid)
            if r >= lo:
                clips.append((f"{spec.name}:{s}", np.array(audio.samples[s:s + cfg.segment_samples],
                                                              dtype=np.float64), r))
        del audio
    return clips


def snr_sweep(models: dict, cfg: ExperimentConfig, clips, psd: PsdModel, snr_list_db,
              far_lo: float):
    """Far-field mean relative error per SNR for each CNN and the baseline.

    ``models`` maps tag -> (NetworkModel, width). Each clip is re-noised with
    matched colored noise at exactly the requested SNR (fresh, seeded noise
    per clip and SNR), re-featurized and ranged. The baseline ranges single
    frames here (no median smoothing, since clips are evaluated independently).
    Rows: ``(snr_db, method, mean_relative_error|None, detection_fraction, count)``.
    """
    snr_list_db = list(snr_list_db)
    if not snr_list_db:
        raise ConfigError("snr list must not be empty")
    widths = sorted({w for _, w in models.values()} | {1})
    bcfg = cfg.baseline_config()
    rows = []
    for snr in snr_list_db:
        feats = {w: [] for w in widths}
        for c_no, (_, x, _) in enumerate(clips):
            seed = _child_seed(cfg.seed, 5, c_no, int(round(snr * 1000)) & 0xFFFFFFFF)
            noisy = augment_snr(TimeSeries(x, cfg.sample_rate), psd, (snr, snr), seed).samples
            for w, f in featurize_segments(noisy[None], widths, cfg).items():
                feats[w].append(f[0])
        truth = [r for _, _, r in clips]
        ids = [i for i, _, _ in clips]
        methods = {}
        for tag, (model, w) in sorted(models.items()):
            prob, rng_m, _ = predict_batch(model, np.stack(feats[w]))
            methods[tag] = [PredictionRecord(i, True, t, float(p), float(r) if p >= 0.5 else None,
                                             tag)
                            for i, t, p, r in zip(ids, truth, prob, rng_m)]
        methods["baseline"] = [PredictionRecord(i, True, t, math.nan,
                                                range_frame(f[:, 0], bcfg), "baseline")
                               for i, t, f in zip(ids, truth, feats[1])]
        for tag in sorted(methods):
            recs = methods[tag]
            det = sum(r.predicted_range is not None for r in recs) / max(len(recs), 1)
            rows.append((float(snr), tag, mean_relative_error(recs, far_lo), det, len(recs)))
    return rows


# --------------------------------------------------------------------------
# full experiment
# --------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    models: dict = field(default_factory=dict)       # tag -> NetworkModel
    logs: dict = field(default_factory=dict)         # tag -> TrainingLog
    records: dict = field(default_factory=dict)      # (split, tag) -> list[PredictionRecord]
    tracks: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    failure_range: float = math.nan


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   variants=None, sweep: bool = True, corpus: Corpus | None = None,
                   progress=None) -> ExperimentResult:
    """Synthesize, featurize, train every (width, augmentation) variant, evaluate, report.

    ``variants`` is a list of ``(width, augment)``; default is every width
    in the config with augmentation off and on.
    """
    say = progress or (lambda msg: log.info(msg))
    corpus = corpus or Corpus(cfg)
    if variants is None:
        variants = [(w, a) for w in cfg.widths for a in (False, True)]
    widths = sorted({w for w, _ in variants} | {1})
    res = ExperimentResult(cfg, failure_range=cfg.failure_range())

    say("estimating background PSD")
    psd = background_psd(corpus)
    sets = {}
    for split in ("val", "test", "gen"):
        say(f"featurizing {split}")
        sets[split] = build_split(corpus, split, widths)
    say("featurizing train (clean)")
    train_clean = build_split(corpus, "train", widths)
    train_aug = None
    if any(a for _, a in variants):
        say("featurizing train (augmented)")
        train_aug = build_split(corpus, "train", widths, augment=True, psd=psd)

    for width, aug in variants:
        tag = variant_tag(width, aug)
        tr = (train_aug if aug else train_clean).dataset(width)
        say(f"training {tag}")
        model, tlog = train(tr, sets["val"].dataset(width), cfg.model_config(width),
                            cfg.phases(flip=aug and cfg.flip_width),
                            init_seed=_child_seed(cfg.seed, 6, width))
        res.models[tag], res.logs[tag] = model, tlog
        for split in ("test", "gen"):
            res.records[(split, tag)] = cnn_records(model, sets[split], width, tag)

    say("baseline ranging")
    for split in ("test", "gen"):
        recs, tracks = baseline_records(corpus, sets[split], split)
        res.records[(split, "baseline")] = recs
        if split == "test":
            res.tracks.update(tracks)

    if sweep:
        say("SNR sweep")
        clips = far_field_clips(corpus, "test", res.failure_range)
        models = {variant_tag(w, a): (res.models[variant_tag(w, a)], w) for w, a in variants}
        res.sweep = snr_sweep(models, cfg, clips, psd, cfg.sweep_snrs_db, res.failure_range)

    if out_dir is not None:
        write_outputs(res, out_dir)
    return res


def _track_rows(res: ExperimentResult, name: str):
    rows = list(res.tracks[name])
    # CNN tracks over the sampled test examples of this transit, in time order
    for (split, tag), recs in sorted(res.records.items()):
        if split != "test" or tag == "baseline":
            continue
        for r in recs:
            rec_name, _, start = r.example_id.rpartition(":")
            if rec_name == name:
                tmid = (int(start) + res.config.segment_samples / 2) / res.config.sample_rate
                rows.append((tmid, r.true_range, tag, r.predicted_range))
    rows.sort(key=lambda row: (row[0], row[2]))
    return rows


def write_outputs(res: ExperimentResult, out_dir: str) -> dict:
    """Prediction CSVs, training logs, checkpoints and the comparison report."""
    from .evaluation import write_records
    os.makedirs(out_dir, exist_ok=True)
    cfg = res.config
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    for (split, tag), recs in sorted(res.records.items()):
        write_records(os.path.join(out_dir, f"records_{split}_{tag}.csv"), recs)
    for tag, model in sorted(res.models.items()):
        formats.write_model(os.path.join(out_dir, f"{tag}.cnnm"), model)
        with open(os.path.join(out_dir, f"{tag}.log.jsonl"), "w", encoding="utf-8") as fh:
            fh.write(res.logs[tag].dumps())
    summaries = {}
    for split in ("test", "gen"):
        by_method = {tag: recs for (s, tag), recs in res.records.items() if s == split}
        tracks = {n: _track_rows(res, n) for n in res.tracks} if split == "test" else None
        extra = {"failure_range_m": res.failure_range, "split": split}
        summaries[split] = compare_report(os.path.join(out_dir, f"report_{split}"), by_method,
                                          cfg.bin_edges(), tracks,
                                          res.sweep if (split == "test" and res.sweep) else None,
                                          extra)
    res.summary = summaries
    return summaries


# --------------------------------------------------------------------------
# feature-set files (CEPS plus a CSV sidecar tracing each label to its source)
# --------------------------------------------------------------------------

_META_FIELDS = ("example_id", "recording", "start", "time_mid", "presence", "true_range")


def dataset_name(split: str, width: int, augment: bool = False) -> str:
    return f"{split}_n{width}{'_aug' if augment else ''}"


def save_featureset(directory: str, name: str, fs_: FeatureSet, width: int) -> None:
    os.makedirs(directory, exist_ok=True)
    formats.write_dataset(os.path.join(directory, f"{name}.ceps"), fs_.features[width],
                          fs_.presence, fs_.ranges)
    with open(os.path.join(directory, f"{name}.index.csv"), "w", encoding="utf-8") as fh:
        fh.write(",".join(_META_FIELDS) + "\n")
        for m in fs_.meta:
            rng_s = "" if math.isnan(m.true_range) else repr(m.true_range)
            fh.write(f"{m.example_id},{m.recording},{m.start},{float(m.time_mid)!r},"
                     f"{int(m.presence)},{rng_s}\n")


def load_featureset(directory: str, name: str) -> tuple[FeatureSet, int]:
    """Read ``<name>.ceps`` and its index; returns the set and its width."""
    path = os.path.join(directory, f"{name}.ceps")
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing dataset {path}")
    feats, presence, ranges = formats.read_dataset(path)
    meta = []
    with open(os.path.join(directory, f"{name}.index.csv"), encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != _META_FIELDS:
            raise formats.FormatError(f"{name}: unexpected index header")
        for line in fh:
            eid, rec, start, tmid, pres, rng_s = line.rstrip("\n").split(",")
            meta.append(ExampleMeta(eid, rec, int(start), float(tmid), pres == "1",
                                    float(rng_s) if rng_s else math.nan))
    if len(meta) != len(feats):
        raise formats.FormatError(f"{name}: index and dataset lengths differ")
    for m, p, r in zip(meta, presence, ranges):
        if m.presence != bool(p) or (p and m.true_range != r):
            raise formats.FormatError(f"{name}: label mismatch for {m.example_id}")
    width = feats.shape[2]
    return FeatureSet(meta, {width: feats}), width
