"""SGD with momentum, two-phase (ranging, then joint) training and early stopping."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..dsp import NormStats, fit_normalization
from ..evaluation import average_precision_scores
from .model import (ModelConfig, NetworkModel, backward, forward, init_model,
                    joint_loss, normalize_input)

log = logging.getLogger(__name__)

# reference hyperparameters (MatConvNet run on real recordings)
REFERENCE_DEFAULTS = {"learning_rate": 1e-6, "weight_decay": 5e-4, "momentum": 0.9,
                  "batch_size": 256}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-6
    weight_decay: float = 5e-4
    momentum: float = 0.9
    batch_size: int = 256
    alpha: float = 0.0
    patience: int = 5
    min_rel_improvement: float = 1e-3
    max_epochs: int = 50
    flip_width: bool = False
    seed: int = 0
    range_loss_weight: float = 1.0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")
        if not self.range_loss_weight > 0:
            raise ValueError("range_loss_weight must be positive")

    def deviations(self) -> dict:
        out = {k: {"reference": v, "used": getattr(self, k)}
               for k, v in REFERENCE_DEFAULTS.items() if getattr(self, k) != v}
        if self.range_loss_weight != 1.0:
            out["range_loss_weight"] = {"normalized_units": 1.0, "used": self.range_loss_weight}
        return out


@dataclass
class Dataset:
    """Features (N, m, n) plus presence flags and ranges in metres (NaN when absent)."""

    features: np.ndarray
    presence: np.ndarray
    ranges: np.ndarray

    def __post_init__(self):
        self.presence = np.asarray(self.presence).astype(bool)
        self.ranges = np.asarray(self.ranges, dtype=np.float64)
        if not (len(self.features) == len(self.presence) == len(self.ranges)):
            raise ValueError("features, presence and ranges must align")
        if np.any(self.presence & ~np.isfinite(self.ranges)):
            raise ValueError("present example without range label")

    def __len__(self) -> int:
        return len(self.presence)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.presence[idx], self.ranges[idx])

    def positives(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.presence))


@dataclass
class SGDState:
    velocity: dict = field(default_factory=dict)


def sgd_step(model: NetworkModel, grads: dict, state: SGDState, cfg: TrainConfig) -> NetworkModel:
    """In-place momentum update: ``v = mu*v - lr*(g + wd*w); w = w + v``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    for name, w in model.params.items():
        g = grads[name]
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(w)
        v *= w.dtype.type(cfg.momentum)
        v -= w.dtype.type(cfg.learning_rate) * (g.astype(w.dtype, copy=False)
                                                 + w.dtype.type(cfg.weight_decay) * w)
        w += v
    return model


def loss_and_grads(model: NetworkModel, x, presence, ranges_norm, alpha, mode="train",
                   rng=None, range_weight: float = 1.0):
    r, logits, cache = forward(model, x, mode, rng)
    loss, d_r, d_l, parts = joint_loss(r, logits, presence, ranges_norm, alpha, range_weight)
    return loss, backward(model, d_r, d_l, cache), parts


def evaluate(model: NetworkModel, data: Dataset, alpha: float, batch_size: int = 256,
             range_weight: float = 1.0):
    """Infer-mode loss and detection AP on normalised-input ``data``."""
    total, scores = 0.0, []
    scale = model.config.range_scale
    for i in range(0, len(data), batch_size):
        sl = slice(i, i + batch_size)
        r, logits, _ = forward(model, data.features[sl], "infer")
        loss, _, _, _ = joint_loss(r, logits, data.presence[sl], data.ranges[sl] / scale, alpha,
                                   range_weight)
        total += loss * len(r)
        lg = logits.astype(np.float64)
        scores.append(1.0 / (1.0 + np.exp(lg[:, 0] - lg[:, 1])))
    loss = total / max(len(data), 1)
    ap = float("nan")
    if len(data) and data.presence.any() and not data.presence.all():
        ap = average_precision_scores(np.concatenate(scores), data.presence)
    return loss, ap


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def add(self, **rec):
        self.records.append(rec)

    def epochs(self, phase=None):
        return [r for r in self.records if r.get("event") == "epoch"
                and (phase is None or r["phase"] == phase)]

    def phases(self):
        return [r for r in self.records if r.get("event") == "phase"]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _run_phase(model, train, val, cfg: TrainConfig, phase: int, tlog: TrainingLog):
    rng = np.random.default_rng(cfg.seed + 1000 * phase)
    state = SGDState()
    scale = model.config.range_scale
    width = model.config.input_width
    flip = cfg.flip_width and width > 1
    tlog.add(event="phase", phase=phase, alpha=cfg.alpha, config=asdict(cfg),
             deviations_from_reference=cfg.deviations(), train_examples=len(train),
             val_examples=len(val))
    rw = cfg.range_loss_weight
    init_train, _ = evaluate(model, train, cfg.alpha, range_weight=rw)
    best_val, val_ap = evaluate(model, val, cfg.alpha, range_weight=rw)
    tlog.add(event="epoch", phase=phase, alpha=cfg.alpha, epoch=0, train_loss=init_train,
             val_loss=best_val, val_ap=val_ap)
    best = model.copy()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            x = train.features[idx]
            if flip:
                swap = rng.random(len(idx)) < 0.5
                x = np.where(swap[:, None, None], x[:, :, ::-1], x)
            loss, grads, _ = loss_and_grads(model, x, train.presence[idx],
                                            train.ranges[idx] / scale, cfg.alpha, "train", rng,
                                            rw)
            if not np.isfinite(loss):
                raise TrainingError(f"phase {phase} epoch {epoch}: non-finite loss")
            sgd_step(model, grads, state, cfg)
            total += loss * len(idx)
        train_loss = total / len(order)
        val_loss, val_ap = evaluate(model, val, cfg.alpha, range_weight=rw)
        tlog.add(event="epoch", phase=phase, alpha=cfg.alpha, epoch=epoch,
                 train_loss=train_loss, val_loss=val_loss, val_ap=val_ap)
        log.info("phase %d epoch %d train %.5f val %.5f ap %.4f", phase, epoch,
                 train_loss, val_loss, val_ap)
        if not np.isfinite(val_loss):
            raise TrainingError(f"phase {phase} epoch {epoch}: validation diverged")
        if val_loss < best_val * (1 - cfg.min_rel_improvement):
            best_val, best, stale = val_loss, model.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    tlog.add(event="phase_end", phase=phase, best_val_loss=best_val)
    return best


def default_phases(**overrides) -> list[TrainConfig]:
    """Ranging-only phase (alpha 0) followed by joint training (alpha 0.99)."""
    return [replace(TrainConfig(alpha=0.0), **overrides),
            replace(TrainConfig(alpha=0.99), **overrides)]


def train(train_set: Dataset, val_set: Dataset, model_cfg: ModelConfig,
          phase_cfgs: list[TrainConfig], init_seed: int = 0,
          norm: NormStats | None = None, dtype=np.float32):
    """Fit a network; returns ``(best model, TrainingLog)``.

    Input normalisation statistics are fitted on ``train_set`` unless given.
    Phases whose alpha is 0 see only presence-positive examples (the
    detection term is inert and absent examples contribute no ranging loss).
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise TrainingError("training and validation sets must be non-empty")
    if norm is None:
        norm = fit_normalization(train_set.features)
    model = init_model(model_cfg, init_seed, dtype)
    model.norm_mean = norm.mean.astype(np.float64)
    model.norm_std = norm.std.astype(np.float64)
    tr = Dataset(normalize_input(model, train_set.features).astype(dtype),
                 train_set.presence, train_set.ranges)
    va = Dataset(normalize_input(model, val_set.features).astype(dtype),
                 val_set.presence, val_set.ranges)
    tlog = TrainingLog()
    tlog.add(event="model", config=asdict(model_cfg), init_seed=init_seed,
             parameters=model.n_parameters())
    for k, cfg in enumerate(phase_cfgs, 1):
        t, v = (tr.positives(), va.positives()) if cfg.alpha == 0 else (tr, va)
        if len(t) == 0 or len(v) == 0:
            raise TrainingError(f"phase {k} has no usable examples")
        best = _run_phase(model, t, v, cfg, k, tlog)
        model.params = best.params
    return model, tlog
