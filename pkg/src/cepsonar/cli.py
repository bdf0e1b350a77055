"""Command-line entry point: ``cepsonar <subcommand> [options]``.

Subcommands communicate only through files:

simulate   corpus directory (TSER audio, track CSVs, index.json)
featurize  CEPS datasets per split (+ augmented train set) and the noise PSD
train      CNNM checkpoint and JSON-lines training log for one variant
eval       prediction CSVs for a checkpoint on the test/gen datasets
baseline   prediction CSVs and range-vs-time tracks for the peak-picking baseline
sweep      far-field error vs SNR for every checkpoint in a directory
report     comparison tables and summary.json from a records directory
run        everything above in one process
"""
from __future__ import annotations

import argparse
import dataclasses
import glob
import logging
import os
import sys

from . import formats, pipeline
from .evaluation import EvaluationError, compare_report, read_records, write_records

log = logging.getLogger("cepsonar")


def _config(args) -> pipeline.ExperimentConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _width(args) -> int:
    return 1 if args.variant == "n1" else 8


def _augment(args) -> bool:
    return args.augment == "on"


def cmd_simulate(args) -> None:
    cfg = _config(args)
    index = pipeline.simulate_corpus(cfg, args.out, generalization=not args.no_generalization)
    print(f"wrote {len(index['recordings'])} recordings to {args.out}")


def cmd_featurize(args) -> None:
    corpus = pipeline.open_corpus(args.corpus, _config(args) if args.config else None)
    if args.seed is not None:
        corpus.cfg = dataclasses.replace(corpus.cfg, seed=args.seed)
    cfg, w, aug = corpus.cfg, _width(args), _augment(args)
    psd = pipeline.background_psd(corpus)
    os.makedirs(args.out, exist_ok=True)
    formats.write_psd(os.path.join(args.out, "background.psdm"), psd)
    for split in pipeline.SPLITS:
        if split == "gen" and not corpus.by_split("gen"):
            continue
        use_aug = aug and split == "train"
        fs_ = pipeline.build_split(corpus, split, (w,), augment=use_aug, psd=psd)
        name = pipeline.dataset_name(split, w, use_aug)
        pipeline.save_featureset(args.out, name, fs_, w)
        print(f"{name}: {len(fs_.meta)} examples ({int(fs_.presence.sum())} present)")
    if w != 1:
        # the baseline ranges n=1 frames; keep them next to the CNN sets
        for split in ("test", "gen"):
            if corpus.by_split(split):
                fs_ = pipeline.build_split(corpus, split, (1,))
                pipeline.save_featureset(args.out, pipeline.dataset_name(split, 1), fs_, 1)
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(pipeline.dump_config(cfg))


def cmd_train(args) -> None:
    cfg = _config(args)
    w, aug = _width(args), _augment(args)
    tr, _ = pipeline.load_featureset(args.data, pipeline.dataset_name("train", w, aug))
    val, _ = pipeline.load_featureset(args.data, pipeline.dataset_name("val", w))
    from .net.training import train
    model, tlog = train(tr.dataset(w), val.dataset(w), cfg.model_config(w),
                        cfg.phases(flip=aug and cfg.flip_width),
                        init_seed=pipeline._child_seed(cfg.seed, 6, w))
    os.makedirs(args.out, exist_ok=True)
    tag = pipeline.variant_tag(w, aug)
    formats.write_model(os.path.join(args.out, f"{tag}.cnnm"), model)
    with open(os.path.join(args.out, f"{tag}.log.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(tlog.dumps())
    print(f"wrote {tag}.cnnm")


def _model_paths(path: str) -> list[str]:
    if os.path.isdir(path):
        found = sorted(glob.glob(os.path.join(path, "*.cnnm")))
        if not found:
            raise FileNotFoundError(f"no .cnnm checkpoints in {path}")
        return found
    return [path]


def cmd_eval(args) -> None:
    os.makedirs(args.out, exist_ok=True)
    for path in _model_paths(args.model):
        model = formats.read_model(path)
        w = model.config.input_width
        tag = os.path.splitext(os.path.basename(path))[0]
        for split in ("test", "gen"):
            name = pipeline.dataset_name(split, w)
            if not os.path.exists(os.path.join(args.data, f"{name}.ceps")):
                continue
            fs_, _ = pipeline.load_featureset(args.data, name)
            recs = pipeline.cnn_records(model, fs_, w, tag)
            write_records(os.path.join(args.out, f"records_{split}_{tag}.csv"), recs)
            print(f"records_{split}_{tag}.csv: {len(recs)} records")


def cmd_baseline(args) -> None:
    corpus = pipeline.open_corpus(args.corpus, _config(args) if args.config else None)
    os.makedirs(args.out, exist_ok=True)
    for split in ("test", "gen"):
        name = pipeline.dataset_name(split, 1)
        if not os.path.exists(os.path.join(args.data, f"{name}.ceps")):
            continue
        fs_, _ = pipeline.load_featureset(args.data, name)
        recs, tracks = pipeline.baseline_records(corpus, fs_, split)
        write_records(os.path.join(args.out, f"records_{split}_baseline.csv"), recs)
        if split == "test":
            for tname, rows in sorted(tracks.items()):
                _write_track(os.path.join(args.out, f"track_{tname}.csv"), rows)
        print(f"records_{split}_baseline.csv: {len(recs)} records")


def _write_track(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time_s,true_range_m,method,predicted_range_m\n")
        for t, r, m, p in rows:
            fh.write(f"{float(t)!r},{float(r)!r},{m},{'' if p is None else repr(float(p))}\n")


def _read_track(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            t, r, m, p = line.rstrip("\n").split(",")
            rows.append((float(t), float(r), m, float(p) if p else None))
    return rows


def cmd_sweep(args) -> None:
    corpus = pipeline.open_corpus(args.corpus, _config(args) if args.config else None)
    cfg = corpus.cfg
    models = {}
    for path in _model_paths(args.model):
        m = formats.read_model(path)
        models[os.path.splitext(os.path.basename(path))[0]] = (m, m.config.input_width)
    psd = pipeline.background_psd(corpus)
    far = cfg.failure_range()
    clips = pipeline.far_field_clips(corpus, "test", far)
    rows = pipeline.snr_sweep(models, cfg, clips, psd, cfg.sweep_snrs_db, far)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "snr_sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write("snr_db,method,far_field_mean_relative_error,far_field_detection_fraction,"
                 "examples\n")
        for snr, tag, err, det, n in rows:
            fh.write(f"{float(snr)!r},{tag},{'' if err is None else repr(float(err))},"
                     f"{float(det)!r},{n}\n")
    print(f"snr_sweep.csv: {len(rows)} rows")


def _read_sweep(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            snr, tag, err, det, n = line.rstrip("\n").split(",")
            rows.append((float(snr), tag, float(err) if err else None, float(det), int(n)))
    return rows


def cmd_report(args) -> None:
    cfg = _config(args)
    for split in ("test", "gen"):
        by_method = {}
        for path in sorted(glob.glob(os.path.join(args.records, f"records_{split}_*.csv"))):
            tag = os.path.basename(path)[len(f"records_{split}_"):-4]
            by_method[tag] = read_records(path)
        if not by_method:
            if split == "test":
                raise EvaluationError(f"no records_test_*.csv in {args.records}")
            continue
        tracks = sweep = None
        if split == "test":
            tracks = {os.path.basename(p)[6:-4]: _read_track(p)
                      for p in sorted(glob.glob(os.path.join(args.records, "track_*.csv")))}
            sp = os.path.join(args.records, "snr_sweep.csv")
            sweep = _read_sweep(sp) if os.path.exists(sp) else None
        compare_report(os.path.join(args.out, f"report_{split}"), by_method, cfg.bin_edges(),
                       tracks, sweep, {"failure_range_m": cfg.failure_range(), "split": split})
        print(f"wrote {os.path.join(args.out, f'report_{split}')}")


def cmd_run(args) -> None:
    cfg = _config(args)
    variants = None
    if args.variant or args.augment:
        widths = [_width(args)] if args.variant else list(cfg.widths)
        augs = [_augment(args)] if args.augment else [False, True]
        variants = [(w, a) for w in widths for a in augs]
    res = pipeline.run_experiment(cfg, args.out, variants=variants, progress=print)
    for split, summary in sorted(res.summary.items()):
        for tag, ap in sorted(summary["average_precision"].items()):
            if ap is not None:
                print(f"{split} AP {tag}: {ap:.4f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cepsonar", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, out_default, *extra):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment config (key = value lines)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default=out_default, help="output directory")
        for e in extra:
            e(sp)
        sp.set_defaults(func=func)
        return sp

    corpus = lambda sp: sp.add_argument("--corpus", default="corpus", help="simulated corpus dir")
    data = lambda sp: sp.add_argument("--data", default="data", help="featurized dataset dir")
    model = lambda sp: sp.add_argument("--model", default="models",
                                       help="checkpoint file or directory of checkpoints")
    variant = lambda sp: sp.add_argument("--variant", choices=("n1", "n8"), default="n8")
    augment = lambda sp: sp.add_argument("--augment", choices=("on", "off"), default="on")

    add("simulate", cmd_simulate, "corpus").add_argument(
        "--no-generalization", action="store_true", help="skip the kind-B transits")
    add("featurize", cmd_featurize, "data", corpus, variant, augment)
    add("train", cmd_train, "models", data, variant, augment)
    add("eval", cmd_eval, "records", data, model)
    add("baseline", cmd_baseline, "records", corpus, data)
    add("sweep", cmd_sweep, "records", corpus, model)
    add("report", cmd_report, "report").add_argument("--records", default="records")
    run = add("run", cmd_run, "results")
    run.add_argument("--variant", choices=("n1", "n8"))
    run.add_argument("--augment", choices=("on", "off"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        # config, format, simulation and evaluation errors all derive from ValueError
        print(f"cepsonar {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
