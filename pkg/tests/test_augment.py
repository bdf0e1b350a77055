import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cepsonar.acoustics import TimeSeries, ambient_noise
from cepsonar.augment import (
    AugmentError, PsdModel, augment_snr, colored_noise, estimate_psd, flip_width,
)
from cepsonar.dsp import CepstrogramFeature, DSPError, LifterWindow

FS = 50_000.0


@pytest.fixture(scope="module")
def psd():
    return estimate_psd(ambient_noise(400_000, FS, power=2.0, seed=0), window_length=1024)


def test_estimate_psd_total_power(psd):
    assert psd.total_power == pytest.approx(2.0, rel=0.03)
    assert psd.frequencies[-1] == pytest.approx(FS / 2)
    assert psd.bin_width == pytest.approx(FS / 1024)


def test_estimate_psd_needs_enough_samples():
    with pytest.raises(AugmentError):
        estimate_psd(TimeSeries(np.ones(1000), FS), window_length=1024)


def test_psd_model_validation():
    with pytest.raises(AugmentError):
        PsdModel(np.array([1.0, -1.0]), 1.0, 2.0)
    with pytest.raises(AugmentError):
        PsdModel(np.array([1.0, np.nan]), 1.0, 2.0)


def test_colored_noise_matches_model(psd):
    x = colored_noise(psd, 400_000, seed=1)
    est = estimate_psd(x, window_length=1024)
    assert est.total_power == pytest.approx(psd.total_power, rel=0.03)
    # spectral shape within ~1 dB over the band, bin by bin averaged in octaves
    lo = 200.0
    while lo * 2 < FS / 2:
        band = (psd.frequencies >= lo) & (psd.frequencies < 2 * lo)
        ratio = est.band_powers[band].sum() / psd.band_powers[band].sum()
        assert abs(10 * math.log10(ratio)) < 1.0
        lo *= 2
    assert np.array_equal(colored_noise(psd, 100, seed=5).samples,
                          colored_noise(psd, 100, seed=5).samples)
    with pytest.raises(AugmentError):
        colored_noise(psd, 0, seed=0)


@given(seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20, deadline=None)
def test_augment_snr_is_exact_and_in_range(seed):
    rng = np.random.default_rng(seed)
    seg = TimeSeries(rng.standard_normal(4096), FS)
    psd = PsdModel(np.full(65, 1.0 / 65), FS / 128, FS)
    out, snr = augment_snr(seg, psd, (-10, 50), rng_seed=seed, return_snr=True)
    assert -10 <= snr <= 50
    added = out.samples - seg.samples
    measured = 10 * math.log10(np.mean(seg.samples ** 2) / np.mean(added ** 2))
    assert measured == pytest.approx(snr, abs=1e-9)


def test_augment_snr_fixed_and_deterministic():
    seg = TimeSeries(np.random.default_rng(0).standard_normal(2048), FS)
    psd = PsdModel(np.full(33, 1.0 / 33), FS / 64, FS)
    a, snr = augment_snr(seg, psd, (5.0, 5.0), rng_seed=3, return_snr=True)
    b = augment_snr(seg, psd, (5.0, 5.0), rng_seed=3)
    assert snr == 5.0
    assert np.array_equal(a.samples, b.samples)
    with pytest.raises(AugmentError):
        augment_snr(seg, psd, (10, 0))
    with pytest.raises(AugmentError):
        augment_snr(TimeSeries(np.zeros(16), FS), psd)


def test_augment_does_not_modify_input():
    x = np.random.default_rng(1).standard_normal(512)
    seg = TimeSeries(x.copy(), FS)
    augment_snr(seg, PsdModel(np.ones(9), FS / 16, FS), rng_seed=0)
    assert np.array_equal(seg.samples, x)


@given(st.integers(2, 10))
@settings(max_examples=10, deadline=None)
def test_flip_width_is_an_involution(n):
    f = np.arange(5 * n, dtype=float).reshape(5, n)
    g = flip_width(f)
    assert np.array_equal(g[:, 0], f[:, -1])
    assert np.array_equal(flip_width(g), f)
    # quefrency rows stay where they are
    assert np.array_equal(np.sort(g, axis=1), np.sort(f, axis=1))


def test_flip_width_feature_object_and_errors():
    w = LifterWindow(0, 2)
    feat = CepstrogramFeature(np.arange(6.0).reshape(3, 2), w, 1.0)
    out = flip_width(feat)
    assert isinstance(out, CepstrogramFeature)
    assert np.array_equal(out.values, feat.values[:, ::-1])
    with pytest.raises(AugmentError):
        flip_width(np.zeros((3, 1)))
    with pytest.raises(DSPError):
        flip_width(np.zeros(3))
