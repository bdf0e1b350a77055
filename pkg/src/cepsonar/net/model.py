"""Three-convolution + fully-connected network with detection and ranging heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b",
               "fc_w", "fc_b", "range_w", "range_b", "detect_w", "detect_b")


@dataclass(frozen=True)
class ModelConfig:
    input_height: int = 330
    input_width: int = 8
    conv_filters: int = 48
    filter_height: int = 10
    hidden_units: int = 200
    dropout_rate: float = 0.5
    range_scale: float = 500.0

    def __post_init__(self):
        if self.input_height < 3 * (self.filter_height - 1) + 1:
            raise L.ShapeError(
                f"input_height {self.input_height} too small for three "
                f"{self.filter_height}-tap convolutions")
        if self.input_width < 1:
            raise L.ShapeError("input_width must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not self.range_scale > 0:
            raise ValueError("range_scale must be positive")

    def layer_shapes(self) -> dict:
        """Activation shapes (height, width, channels) after each layer."""
        h = self.input_height - (self.filter_height - 1)
        shapes = {"input": (self.input_height, self.input_width, 1),
                  "conv1": (h, 1, self.conv_filters)}
        h -= self.filter_height - 1
        shapes["conv2"] = (h, 1, self.conv_filters)
        h -= self.filter_height - 1
        shapes["conv3"] = (h, 1, self.conv_filters)
        shapes["flatten"] = (h * self.conv_filters,)
        shapes["fc"] = (self.hidden_units,)
        shapes["range"] = (1,)
        shapes["detect"] = (2,)
        return shapes

    def param_shapes(self) -> dict:
        f, fh = self.conv_filters, self.filter_height
        flat = self.layer_shapes()["flatten"][0]
        return {
            "conv1_w": (fh, self.input_width, 1, f), "conv1_b": (f,),
            "conv2_w": (fh, 1, f, f), "conv2_b": (f,),
            "conv3_w": (fh, 1, f, f), "conv3_b": (f,),
            "fc_w": (flat, self.hidden_units), "fc_b": (self.hidden_units,),
            "range_w": (self.hidden_units, 1), "range_b": (1,),
            "detect_w": (self.hidden_units, 2), "detect_b": (2,),
        }


@dataclass
class NetworkModel:
    config: ModelConfig
    params: dict
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.param_shapes()
        if set(self.params) != set(shapes):
            raise L.ShapeError("parameter set does not match the architecture")
        for k, s in shapes.items():
            if self.params[k].shape != s:
                raise L.ShapeError(f"{k}: shape {self.params[k].shape}, expected {s}")

    @property
    def dtype(self):
        return self.params["conv1_w"].dtype

    def copy(self) -> "NetworkModel":
        return NetworkModel(self.config, {k: v.copy() for k, v in self.params.items()},
                            None if self.norm_mean is None else self.norm_mean.copy(),
                            None if self.norm_std is None else self.norm_std.copy(),
                            dict(self.meta))

    def astype(self, dtype) -> "NetworkModel":
        m = self.copy()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        return m

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> NetworkModel:
    """Uniform(+-sqrt(6 / fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name in PARAM_ORDER:
        shape = cfg.param_shapes()[name]
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            lim = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-lim, lim, shape).astype(dtype)
    return NetworkModel(cfg, params)


def forward(model: NetworkModel, x: np.ndarray, mode: str = "infer", rng=None):
    """Forward pass on a (batch, m, n) feature stack.

    Returns ``(range_out, detect_logits, cache)``; ``range_out`` is in
    normalised units (metres / ``range_scale``).
    """
    p, cfg = model.params, model.config
    if x.ndim != 3 or x.shape[1:] != (cfg.input_height, cfg.input_width):
        raise L.ShapeError(f"input shape {x.shape[1:]} does not match model "
                           f"({cfg.input_height}, {cfg.input_width})")
    x = x.astype(model.dtype, copy=False)[..., None]
    cache = {}
    h, cache["c1"] = L.conv_valid(x, p["conv1_w"], p["conv1_b"])
    h, cache["r1"] = L.relu(h)
    h, cache["c2"] = L.conv_valid(h, p["conv2_w"], p["conv2_b"])
    h, cache["r2"] = L.relu(h)
    h, cache["c3"] = L.conv_valid(h, p["conv3_w"], p["conv3_b"])
    h, cache["r3"] = L.relu(h)
    cache["conv_shape"] = h.shape
    h = h.reshape(h.shape[0], -1)
    h, cache["fc"] = L.fc(h, p["fc_w"], p["fc_b"])
    h, cache["r4"] = L.relu(h)
    h, cache["drop"] = L.dropout(h, cfg.dropout_rate, mode, rng)
    rng_out, cache["range"] = L.fc(h, p["range_w"], p["range_b"])
    logits, cache["detect"] = L.fc(h, p["detect_w"], p["detect_b"])
    return rng_out[:, 0], logits, cache


def backward(model: NetworkModel, d_range: np.ndarray, d_logits: np.ndarray, cache) -> dict:
    """Parameter gradients given loss gradients at both heads."""
    g = {}
    dt = model.dtype
    dh_r, g["range_w"], g["range_b"] = L.fc_backward(d_range.astype(dt)[:, None],
                                                     cache["range"])
    dh_d, g["detect_w"], g["detect_b"] = L.fc_backward(d_logits.astype(dt), cache["detect"])
    dh = L.dropout_backward(dh_r + dh_d, cache["drop"])
    dh = L.relu_backward(dh, cache["r4"])
    dh, g["fc_w"], g["fc_b"] = L.fc_backward(dh, cache["fc"])
    dh = dh.reshape(cache["conv_shape"])
    dh = L.relu_backward(dh, cache["r3"])
    dh, g["conv3_w"], g["conv3_b"] = L.conv_valid_backward(dh, cache["c3"])
    dh = L.relu_backward(dh, cache["r2"])
    dh, g["conv2_w"], g["conv2_b"] = L.conv_valid_backward(dh, cache["c2"])
    dh = L.relu_backward(dh, cache["r1"])
    _, g["conv1_w"], g["conv1_b"] = L.conv_valid_backward(dh, cache["c1"], need_dx=False)
    return g


class LabelError(ValueError):
    pass


def joint_loss(range_out: np.ndarray, logits: np.ndarray, presence: np.ndarray,
               range_label: np.ndarray, alpha: float, range_weight: float = 1.0):
    """Weighted detection + ranging loss, averaged over the batch.

    Per example ``alpha * CE(softmax(logits), presence)
    + (1 - alpha) * presence * range_weight * |range_out - range_label|``.
    Range labels are in normalised units and ignored (may be NaN) where
    presence is 0; the ranging term and its gradient are exactly zero there.
    ``range_weight`` rescales the ranging error (``range_scale`` measures it
    in metres); the default keeps it in normalised units.

    Returns ``(loss, d_range, d_logits, parts)`` with ``parts`` holding the
    batch-mean detection and ranging terms.
    """
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if not range_weight > 0:
        raise ValueError("range_weight must be positive")
    presence = np.asarray(presence).astype(bool)
    range_label = np.asarray(range_label, dtype=np.float64)
    if np.any(presence & ~np.isfinite(range_label)):
        raise LabelError("presence-positive example without a range label")
    B = len(presence)
    lg = logits.astype(np.float64)
    z = lg - lg.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    cls = presence.astype(int)
    ce = logsum - z[np.arange(B), cls]
    prob = np.exp(z - logsum[:, None])
    onehot = np.zeros_like(prob)
    onehot[np.arange(B), cls] = 1.0
    d_logits = alpha * (prob - onehot) / B

    diff = np.where(presence, range_out.astype(np.float64) - np.where(presence, range_label, 0.0),
                    0.0)
    e_r = range_weight * np.abs(diff)
    d_range = np.where(presence, (1 - alpha) * range_weight * np.sign(diff) / B, 0.0)

    E_d = float(ce.mean())
    E_r = float(e_r.sum() / B)
    loss = alpha * E_d + (1 - alpha) * E_r
    return loss, d_range, d_logits, {"detection": E_d, "ranging": E_r}


@dataclass(frozen=True)
class Prediction:
    presence_probability: float
    range_estimate: float


def normalize_input(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    if model.norm_mean is None:
        return x
    return (x - model.norm_mean[:, None]) / (model.norm_std[:, None] + 1e-8)


def predict_batch(model: NetworkModel, x: np.ndarray, batch_size: int = 256):
    """Presence probabilities and range estimates (metres) for raw features."""
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    probs, ranges = [], []
    for i in range(0, len(x), batch_size):
        xb = normalize_input(model, x[i:i + batch_size])
        r, logits, _ = forward(model, xb, "infer")
        probs.append(L.softmax(logits.astype(np.float64)))
        ranges.append(r.astype(np.float64) * model.config.range_scale)
    if not probs:
        return np.zeros(0), np.zeros(0), np.zeros((0, 2))
    p = np.concatenate(probs)
    return p[:, 1], np.concatenate(ranges), p


def predict(model: NetworkModel, feature) -> Prediction:
    values = feature.values if hasattr(feature, "values") else np.asarray(feature)
    prob, rng, _ = predict_batch(model, values[None])
    return Prediction(float(prob[0]), float(rng[0]))
