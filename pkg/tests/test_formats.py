import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cepsonar import formats
from cepsonar.acoustics import TimeSeries
from cepsonar.augment import PsdModel
from cepsonar.formats import FormatError
from cepsonar.net.model import ModelConfig, init_model

SMALL = ModelConfig(input_height=40, input_width=2, conv_filters=3, hidden_units=5)


def test_timeseries_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal(1001).astype(np.float32)
    p = tmp_path / "a.tser"
    formats.write_timeseries(p, TimeSeries(x, 250_000.0))
    back = formats.read_timeseries(p)
    assert back.sample_rate == 250_000.0
    assert np.array_equal(back.samples, x)
    assert p.read_bytes()[:4] == b"TSER"
    assert len(p.read_bytes()) == 4 + 4 + 8 + 8 + 4 * 1001


def test_psd_round_trip(tmp_path):
    psd = PsdModel(np.linspace(0, 1, 17), 10.0, 320.0)
    p = tmp_path / "b.psdm"
    formats.write_psd(p, psd)
    back = formats.read_psd(p)
    assert np.array_equal(back.band_powers, psd.band_powers.astype(np.float32))
    assert (back.bin_width, back.sample_rate) == (10.0, 320.0)


@pytest.mark.parametrize("with_norm", [False, True])
def test_model_round_trip(tmp_path, with_norm):
    m = init_model(SMALL, seed=4)
    if with_norm:
        m.norm_mean = np.arange(40, dtype=np.float64)
        m.norm_std = np.ones(40)
    p = tmp_path / "m.cnnm"
    formats.write_model(p, m)
    back = formats.read_model(p)
    assert back.config == SMALL
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)
    if with_norm:
        assert np.array_equal(back.norm_mean, m.norm_mean)
    else:
        assert back.norm_mean is None


@given(count=st.integers(0, 6), m=st.integers(1, 5), n=st.integers(1, 3),
       seed=st.integers(0, 100))
@settings(max_examples=30, deadline=None)
def test_dataset_round_trip_bit_exact(tmp_path_factory, count, m, n, seed):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((count, m, n)).astype(np.float32)
    presence = rng.random(count) < 0.5
    ranges = np.where(presence, rng.uniform(0, 500, count).astype(np.float32), np.nan)
    p = tmp_path_factory.mktemp("ceps") / "d.ceps"
    formats.write_dataset(p, feats, presence, ranges)
    f2, p2, r2 = formats.read_dataset(p)
    assert f2.tobytes() == feats.tobytes()
    assert np.array_equal(p2, presence)
    assert np.array_equal(r2, ranges, equal_nan=True)
    # write(read(x)) reproduces the same bytes
    q = p.with_name("e.ceps")
    formats.write_dataset(q, f2, p2, r2)
    assert q.read_bytes() == p.read_bytes()


def test_dataset_label_consistency_enforced(tmp_path):
    with pytest.raises(FormatError):
        formats.write_dataset(tmp_path / "x", np.zeros((1, 2, 1)), [1], [np.nan])
    with pytest.raises(FormatError):
        formats.write_dataset(tmp_path / "x", np.zeros((1, 2, 1)), [0], [3.0])
    with pytest.raises(FormatError):
        formats.write_dataset(tmp_path / "x", np.zeros((2, 1)), [0], [np.nan])
    # hand-made file with presence 0 but a finite range
    body = struct.pack("<fB", 5.0, 0) + np.zeros(2, "<f4").tobytes()
    (tmp_path / "bad.ceps").write_bytes(b"CEPS" + struct.pack("<IIIQ", 1, 2, 1, 1) + body)
    with pytest.raises(FormatError):
        formats.read_dataset(tmp_path / "bad.ceps")


def test_corrupt_files_rejected(tmp_path):
    p = tmp_path / "a.tser"
    formats.write_timeseries(p, TimeSeries(np.ones(8), 10.0))
    raw = p.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "version").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    (tmp_path / "short").write_bytes(raw[:-3])
    (tmp_path / "long").write_bytes(raw + b"\0")
    for name in ("magic", "version", "short", "long"):
        with pytest.raises(FormatError):
            formats.read_timeseries(tmp_path / name)
    with pytest.raises(FormatError):
        formats.read_model(p)
