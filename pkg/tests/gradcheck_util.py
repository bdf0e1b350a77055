"""Central-difference gradient check shared by the unit and acceptance suites."""
import numpy as np

from cepsonar.net.model import ModelConfig, backward, forward, init_model, joint_loss

SMALL = ModelConfig(input_height=40, input_width=2, conv_filters=4, hidden_units=16)


def small_batch(seed=0, batch=6, cfg=SMALL):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, cfg.input_height, cfg.input_width))
    presence = np.arange(batch) % 3 != 0
    ranges = np.where(presence, rng.uniform(0.05, 1.0, batch), np.nan)
    return x, presence, ranges


def _loss(model, x, presence, ranges, alpha, seed):
    # a fresh generator per call reproduces the same dropout mask
    r, logits, cache = forward(model, x, "train", np.random.default_rng(seed))
    loss, d_r, d_l, _ = joint_loss(r, logits, presence, ranges, alpha)
    return loss, d_r, d_l, cache


def relative_errors(alpha, seed=0, eps=1e-6):
    """Per-parameter-group ``|a - n| / (|a| + |n|)`` (2-norms) for a float64 model."""
    model = init_model(SMALL, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for v in model.params.values():
        # non-zero biases so every bias gradient is exercised away from ReLU kinks
        v += 0.05 * rng.standard_normal(v.shape)
    x, presence, ranges = small_batch(seed)
    _, d_r, d_l, cache = _loss(model, x, presence, ranges, alpha, seed)
    grads = backward(model, d_r, d_l, cache)
    out = {}
    for name, w in model.params.items():
        num = np.zeros_like(w)
        flat = w.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp = _loss(model, x, presence, ranges, alpha, seed)[0]
            flat[i] = old - eps
            lm = _loss(model, x, presence, ranges, alpha, seed)[0]
            flat[i] = old
            nflat[i] = (lp - lm) / (2 * eps)
        a = grads[name]
        denom = np.linalg.norm(a) + np.linalg.norm(num)
        out[name] = 0.0 if denom == 0 else float(np.linalg.norm(a - num) / denom)
    return out
