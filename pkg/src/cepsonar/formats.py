"""Little-endian binary containers for audio, PSD models, checkpoints and datasets.

TSER  magic, u32 version, f64 sample_rate, u64 count, f32[count] samples
PSDM  magic, u32 version, f64 sample_rate, f64 bin_width, u64 count, f32[count] band powers
CNNM  magic, u32 version, u32 input_height, u32 input_width, u32 conv_filters,
      u32 filter_height, u32 hidden_units, f64 dropout_rate, f64 range_scale,
      f32 parameter tensors in ``PARAM_ORDER`` (shapes implied by the config),
      u8 has_norm, then (when set) f64[m] row means and f64[m] row stds
CEPS  magic, u32 version, u32 m, u32 n, u64 count, then per record
      f32 range (NaN when absent), u8 presence, f32[m*n] row-major feature
"""
from __future__ import annotations

import struct

import numpy as np

from .acoustics import TimeSeries
from .augment import PsdModel
from .net.model import PARAM_ORDER, ModelConfig, NetworkModel

VERSION = 1


class FormatError(ValueError):
    pass


def _check_magic(fh, magic: bytes):
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read(fh, 4))
    if version != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}")


def _read(fh, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise FormatError("truncated file")
    return b


def _read_f32(fh, count: int) -> np.ndarray:
    return np.frombuffer(_read(fh, 4 * count), dtype="<f4").astype(np.float32)


# ---------------------------------------------------------------- TSER

def write_timeseries(path, ts: TimeSeries) -> None:
    with open(path, "wb") as fh:
        fh.write(b"TSER" + struct.pack("<IdQ", VERSION, ts.sample_rate, len(ts)))
        fh.write(np.asarray(ts.samples, dtype="<f4").tobytes())


def read_timeseries(path) -> TimeSeries:
    with open(path, "rb") as fh:
        _check_magic(fh, b"TSER")
        fs, count = struct.unpack("<dQ", _read(fh, 16))
        samples = _read_f32(fh, count)
        if fh.read(1):
            raise FormatError("trailing bytes after samples")
    return TimeSeries(samples, fs)


# ---------------------------------------------------------------- PSDM

def write_psd(path, psd: PsdModel) -> None:
    with open(path, "wb") as fh:
        fh.write(b"PSDM" + struct.pack("<IddQ", VERSION, psd.sample_rate, psd.bin_width,
                                       len(psd.band_powers)))
        fh.write(np.asarray(psd.band_powers, dtype="<f4").tobytes())


def read_psd(path) -> PsdModel:
    with open(path, "rb") as fh:
        _check_magic(fh, b"PSDM")
        fs, df, count = struct.unpack("<ddQ", _read(fh, 24))
        bp = _read_f32(fh, count)
    return PsdModel(bp.astype(np.float64), df, fs)


# ---------------------------------------------------------------- CNNM

def write_model(path, model: NetworkModel) -> None:
    c = model.config
    with open(path, "wb") as fh:
        fh.write(b"CNNM" + struct.pack("<IIIIIIdd", VERSION, c.input_height, c.input_width,
                                       c.conv_filters, c.filter_height, c.hidden_units,
                                       c.dropout_rate, c.range_scale))
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())
        has_norm = model.norm_mean is not None
        fh.write(struct.pack("<B", int(has_norm)))
        if has_norm:
            fh.write(np.asarray(model.norm_mean, dtype="<f8").tobytes())
            fh.write(np.asarray(model.norm_std, dtype="<f8").tobytes())


def read_model(path) -> NetworkModel:
    with open(path, "rb") as fh:
        _check_magic(fh, b"CNNM")
        h, w, f, fh_, hid, drop, scale = struct.unpack("<IIIIIdd", _read(fh, 36))
        cfg = ModelConfig(h, w, f, fh_, hid, drop, scale)
        shapes = cfg.param_shapes()
        params = {}
        for name in PARAM_ORDER:
            shape = shapes[name]
            params[name] = _read_f32(fh, int(np.prod(shape))).reshape(shape).copy()
        (has_norm,) = struct.unpack("<B", _read(fh, 1))
        mean = std = None
        if has_norm:
            mean = np.frombuffer(_read(fh, 8 * h), dtype="<f8").astype(np.float64)
            std = np.frombuffer(_read(fh, 8 * h), dtype="<f8").astype(np.float64)
    return NetworkModel(cfg, params, mean, std)


# ---------------------------------------------------------------- CEPS

_CEPS_HEADER = struct.Struct("<IIIQ")


def write_dataset(path, features: np.ndarray, presence, ranges) -> None:
    """Write an (N, m, n) feature stack with labels; range is NaN where absent."""
    features = np.asarray(features)
    if features.ndim != 3:
        raise FormatError("features must be (count, m, n)")
    count, m, n = features.shape
    presence = np.asarray(presence).astype(np.uint8)
    ranges = np.asarray(ranges, dtype=np.float64)
    if len(presence) != count or len(ranges) != count:
        raise FormatError("label arrays must match the feature count")
    if np.any((presence == 0) != np.isnan(ranges)):
        raise FormatError("range must be NaN exactly when presence is 0")
    rec = np.dtype([("range", "<f4"), ("presence", "u1"), ("feature", "<f4", (m * n,))])
    arr = np.empty(count, dtype=rec)
    arr["range"] = ranges
    arr["presence"] = presence
    arr["feature"] = features.reshape(count, m * n)
    with open(path, "wb") as fh:
        fh.write(b"CEPS" + _CEPS_HEADER.pack(VERSION, m, n, count))
        fh.write(arr.tobytes())


def read_dataset(path):
    """Return ``(features (N, m, n) float32, presence bool, ranges float64)``."""
    with open(path, "rb") as fh:
        _check_magic(fh, b"CEPS")
        m, n, count = struct.unpack("<IIQ", _read(fh, 16))
        rec = np.dtype([("range", "<f4"), ("presence", "u1"), ("feature", "<f4", (m * n,))])
        arr = np.frombuffer(_read(fh, rec.itemsize * count), dtype=rec)
        if fh.read(1):
            raise FormatError("trailing bytes after records")
    presence = arr["presence"]
    if np.any(presence > 1):
        raise FormatError("presence must be 0 or 1")
    ranges = arr["range"].astype(np.float64)
    if np.any((presence == 0) != np.isnan(ranges)):
        raise FormatError("range must be NaN exactly when presence is 0")
    feats = arr["feature"].reshape(count, m, n).astype(np.float32)
    return feats, presence.astype(bool), ranges
