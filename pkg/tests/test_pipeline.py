import math

import numpy as np
import pytest

from cepsonar import pipeline as P
from cepsonar.acoustics import make_transit_track
from cepsonar.formats import FormatError
from conftest import TINY_CONFIG_TEXT, tiny_config


def test_default_config_values():
    cfg = P.ExperimentConfig()
    assert cfg.lifter.size == 330
    assert cfg.segment_samples == 250_000 and cfg.hop_samples == 125_000
    assert cfg.examples == {"train": 4000, "val": 1000, "test": 800, "gen": 800}
    assert cfg.failure_range() == pytest.approx(459.40, abs=0.01)
    assert cfg.bin_edges()[-1] == 500.0 and len(cfg.bin_edges()) == 26
    assert cfg.model_config(8).input_width == 8
    p1, p2 = cfg.phases(flip=True)
    assert (p1.alpha, p2.alpha) == (0.0, 0.99)
    assert p1.flip_width and p2.flip_width


def test_config_text_round_trip(tmp_path):
    cfg = tiny_config(seed=11, source_f0_scale_range="0.7 1.3")
    text = P.dump_config(cfg)
    p = tmp_path / "cfg.txt"
    p.write_text(text)
    back = P.load_config(p)
    assert back == cfg
    assert P.dump_config(back) == text
    assert back.source_f0_scale_range == (0.7, 1.3)


@pytest.mark.parametrize("line", ["bogus = 1", "spectral.nope = 1", "phase1.nope = 1",
                                  "transits.holdout = 2", "flip_width = maybe",
                                  "transits.test = 0", "baseline_median_window = 4",
                                  "scenario.source_depth = 99"])
def test_config_errors(line):
    values = P.parse_key_values(TINY_CONFIG_TEXT + line + "\n")
    with pytest.raises(ValueError):
        P.config_from_mapping(values)


def test_plan_corpus_deterministic_and_seeded(tiny_cfg):
    a, b = P.plan_corpus(tiny_cfg), P.plan_corpus(tiny_cfg)
    assert a == b
    other = P.plan_corpus(tiny_config(seed=1))
    assert [s.seed for s in other] != [s.seed for s in a]
    kinds = {(s.split, s.kind) for s in a if s.is_transit}
    assert kinds == {("train", "A"), ("val", "A"), ("test", "A"), ("gen", "B")}
    lo, hi = tiny_cfg.cpa_scale_range
    for s in a:
        if s.is_transit:
            assert lo * 10 <= s.cpa_offset <= hi * 10
            assert 0.6 <= s.f0_scale <= 1.5 and 0.7 <= s.slope_scale <= 1.4


def test_ambient_power_sets_snr_at_100m(tiny_cfg):
    ratio = P.received_power(100.0, tiny_cfg) / P.ambient_power(tiny_cfg)
    assert 10 * math.log10(ratio) == pytest.approx(tiny_cfg.snr_at_100m_db)


def test_corpus_on_disk_matches_rendered(tiny_cfg, tiny_corpus_dir):
    disk = P.open_corpus(str(tiny_corpus_dir))
    assert disk.cfg == tiny_cfg
    mem = P.Corpus(tiny_cfg)
    spec = disk.by_split("test", transit=True)[0]
    a, ta = disk.load(spec)
    b, tb = mem.load(spec)
    assert np.array_equal(a.samples, b.samples.astype(np.float32))
    assert np.array_equal(ta.horizontal_ranges, tb.horizontal_ranges)
    with pytest.raises(FileNotFoundError):
        P.open_corpus(str(tiny_corpus_dir / "missing"))


@pytest.fixture(scope="module")
def corpus(tiny_corpus_dir):
    return P.open_corpus(str(tiny_corpus_dir))


def test_split_is_balanced_and_labels_trace_to_tracks(corpus):
    cfg = corpus.cfg
    fs_ = P.build_split(corpus, "test", (1, 8))
    assert abs(int(fs_.presence.sum()) * 2 - len(fs_.meta)) <= 1
    assert fs_.features[8].shape == (len(fs_.meta), 330, 8)
    assert fs_.features[1].shape == (len(fs_.meta), 330, 1)
    specs = {s.name: s for s in corpus.specs}
    for m in fs_.meta:
        spec = specs[m.recording]
        assert spec.split == "test"
        if m.presence:
            track = make_transit_track(P.transit_scenario(spec, cfg))
            assert m.true_range == P.label_at(track, m.time_mid)
            assert m.time_mid == pytest.approx((m.start + cfg.segment_samples / 2) / 250_000)
        else:
            assert math.isnan(m.true_range) and not spec.is_transit


def test_train_split_repeats_far_field(corpus):
    fs_ = P.build_split(corpus, "train", (1,))
    far = corpus.cfg.failure_range()
    ids = [m.example_id for m in fs_.meta if m.presence]
    copies = [i for i in ids if "#" in i]
    assert copies, "far-field frames should be repeated"
    for c in copies:
        base = c.split("#")[0]
        assert base in ids
    ranges = {m.example_id: m.true_range for m in fs_.meta}
    assert all(ranges[c] >= far for c in copies)


def test_augmentation_only_changes_train(corpus):
    clean = P.build_split(corpus, "train", (1,))
    aug = P.build_split(corpus, "train", (1,), augment=True)
    assert [m.example_id for m in clean.meta] == [m.example_id for m in aug.meta]
    assert not np.array_equal(clean.features[1], aug.features[1])
    # far-field copies share their audio but get their own noise
    ids = [m.example_id for m in aug.meta]
    c = next(i for i in ids if "#" in i)
    i0, i1 = ids.index(c.split("#")[0]), ids.index(c)
    assert np.array_equal(clean.features[1][i0], clean.features[1][i1])
    assert not np.array_equal(aug.features[1][i0], aug.features[1][i1])
    t1 = P.build_split(corpus, "test", (1,))
    t2 = P.build_split(corpus, "test", (1,))
    assert t1.features[1].tobytes() == t2.features[1].tobytes()


def test_featureset_files_round_trip(corpus, tmp_path):
    fs_ = P.build_split(corpus, "val", (8,))
    P.save_featureset(str(tmp_path), "val_n8", fs_, 8)
    back, w = P.load_featureset(str(tmp_path), "val_n8")
    assert w == 8
    assert back.features[8].tobytes() == fs_.features[8].tobytes()
    assert [m.example_id for m in back.meta] == [m.example_id for m in fs_.meta]
    assert np.array_equal(back.ranges, fs_.ranges, equal_nan=True)
    idx = tmp_path / "val_n8.index.csv"
    lines = idx.read_text().splitlines()
    first_present = next(i for i, l in enumerate(lines[1:], 1) if l.split(",")[4] == "1")
    parts = lines[first_present].split(",")
    parts[5] = "1.5"
    lines[first_present] = ",".join(parts)
    idx.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError):
        P.load_featureset(str(tmp_path), "val_n8")
    with pytest.raises(FileNotFoundError):
        P.load_featureset(str(tmp_path), "nope")


def test_baseline_records_cover_every_example(corpus):
    fs_ = P.build_split(corpus, "test", (1,))
    recs, tracks = P.baseline_records(corpus, fs_, "test")
    assert [r.example_id for r in recs] == [m.example_id for m in fs_.meta]
    assert all(math.isnan(r.score) for r in recs)
    (name, rows), = tracks.items()
    assert [t for t, *_ in rows] == sorted(t for t, *_ in rows)
    with pytest.raises(P.ConfigError):
        P.baseline_records(corpus, P.build_split(corpus, "test", (8,)), "test")


def test_snr_sweep_rows(corpus):
    cfg = corpus.cfg
    psd = P.background_psd(corpus)
    clips = P.far_field_clips(corpus, "test", cfg.failure_range())
    assert clips and all(r >= cfg.failure_range() for _, _, r in clips)
    rows = P.snr_sweep({}, cfg, clips, psd, (0.0, 20.0), cfg.failure_range())
    n = len(clips)
    assert [(snr, tag, k) for snr, tag, _, _, k in rows] == [(0.0, "baseline", n),
                                                            (20.0, "baseline", n)]
    assert all(0.0 <= det <= 1.0 for _, _, _, det, _ in rows)
    with pytest.raises(P.ConfigError):
        P.snr_sweep({}, cfg, clips, psd, [], 0.0)


def test_run_experiment_writes_outputs(corpus, tmp_path):
    res = P.run_experiment(corpus.cfg, str(tmp_path), variants=[(1, False)], corpus=corpus)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"config.txt", "cnn_n1_noaug.cnnm", "cnn_n1_noaug.log.jsonl",
            "records_test_cnn_n1_noaug.csv", "records_test_baseline.csv",
            "records_gen_baseline.csv", "report_test", "report_gen"} <= names
    report = {p.name for p in (tmp_path / "report_test").iterdir()}
    assert {"ap_table.csv", "range_error_by_bin.csv", "snr_sweep.csv", "summary.json"} <= report
    assert "cnn_n1_noaug" in res.summary["test"]["average_precision"]
    assert res.failure_range == pytest.approx(459.40, abs=0.01)
