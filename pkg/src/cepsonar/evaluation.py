"""Detection AP, range-error tables, SNR sweeps and CSV/JSON reports."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass

import numpy as np

MIN_TRUE_RANGE = 1.0


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    example_id: str
    true_presence: bool
    true_range: float | None
    score: float
    predicted_range: float | None
    method_tag: str

    def __post_init__(self):
        if self.true_presence != (self.true_range is not None):
            raise EvaluationError(f"{self.example_id}: true_range must be given iff present")
        if not (0.0 <= self.score <= 1.0) and not math.isnan(self.score):
            raise EvaluationError(f"{self.example_id}: score outside [0, 1]")


@dataclass(frozen=True)
class RangeBinTable:
    bin_edges: np.ndarray
    mean_abs_relative_error: list      # float or None for bins without detections
    detection_fraction: list           # float or None for empty bins
    counts: list
    detected: list


def _sort_key(example_id):
    # numeric ids sort numerically, everything else lexically
    try:
        return (0, float(example_id), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(example_id))


def average_precision(records) -> float:
    """Mean precision at the ranks of the positives (unsmoothed).

    Ranking is by score descending; ties are broken by ascending example_id.
    """
    records = list(records)
    labels = [bool(r.true_presence) for r in records]
    if not records or all(labels) or not any(labels):
        raise EvaluationError("average precision needs both classes")
    ordered = sorted(records, key=lambda r: (-r.score, _sort_key(r.example_id)))
    hits, total = 0, 0.0
    for rank, rec in enumerate(ordered, 1):
        if rec.true_presence:
            hits += 1
            total += hits / rank
    return total / hits


def average_precision_scores(scores, labels, ids=None) -> float:
    """Vectorised :func:`average_precision` for arrays; ids default to positions."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if len(scores) == 0 or labels.all() or not labels.any():
        raise EvaluationError("average precision needs both classes")
    ids = np.arange(len(scores)) if ids is None else np.asarray(ids)
    order = np.lexsort((ids, -scores))
    hit = labels[order]
    cum = np.cumsum(hit)
    ranks = np.arange(1, len(hit) + 1)
    return float(np.sum(cum[hit] / ranks[hit]) / cum[-1])


def range_error_by_bin(records, bin_edges) -> RangeBinTable:
    """Mean |pred - true| / true over detected records per true-range bin.

    Bins are half-open ``[lo, hi)`` except the last, which is closed.
    Records with true range below ``MIN_TRUE_RANGE`` count toward detection
    fraction but not toward the error mean. Empty bins report ``None``.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise EvaluationError("bin edges must be strictly increasing")
    ranged = [r for r in records if r.true_presence]
    if not ranged:
        raise EvaluationError("no records with a true range")
    nb = len(edges) - 1
    errs = [[] for _ in range(nb)]
    counts, detected = [0] * nb, [0] * nb
    for rec in ranged:
        t = rec.true_range
        if t < edges[0] or t > edges[-1]:
            continue
        b = min(int(np.searchsorted(edges, t, side="right")) - 1, nb - 1)
        counts[b] += 1
        if rec.predicted_range is not None:
            detected[b] += 1
            if t >= MIN_TRUE_RANGE:
                errs[b].append(abs(rec.predicted_range - t) / t)
    mean_err = [float(np.mean(e)) if e else None for e in errs]
    frac = [d / c if c else None for d, c in zip(detected, counts)]
    return RangeBinTable(edges, mean_err, frac, counts, detected)


def mean_relative_error(records, lo: float = -math.inf, hi: float = math.inf):
    """Mean relative error of detected, ranged records with ``lo <= true < hi``."""
    e = [abs(r.predicted_range - r.true_range) / r.true_range for r in records
         if r.true_presence and r.predicted_range is not None
         and lo <= r.true_range < hi and r.true_range >= MIN_TRUE_RANGE]
    return float(np.mean(e)) if e else None


def detection_fraction(records, lo: float = -math.inf, hi: float = math.inf):
    sel = [r for r in records if r.true_presence and lo <= r.true_range < hi]
    if not sel:
        return None
    return sum(r.predicted_range is not None for r in sel) / len(sel)


# --------------------------------------------------------------------------
# CSV / report I/O
# --------------------------------------------------------------------------

RECORD_FIELDS = ("example_id", "true_presence", "true_range", "score",
                 "predicted_range", "method_tag")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_records(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in RECORD_FIELDS])


def read_records(path) -> list[PredictionRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != RECORD_FIELDS:
            raise EvaluationError(f"{path}: unexpected header {rd.fieldnames}")
        for row in rd:
            out.append(PredictionRecord(
                row["example_id"], row["true_presence"] == "1",
                float(row["true_range"]) if row["true_range"] else None,
                float(row["score"]) if row["score"] else float("nan"),
                float(row["predicted_range"]) if row["predicted_range"] else None,
                row["method_tag"]))
    return out


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def ap_table(records_by_method: dict) -> list[tuple]:
    rows = []
    for tag in sorted(records_by_method):
        recs = records_by_method[tag]
        scored = [r for r in recs if not math.isnan(r.score)]
        labels = {r.true_presence for r in scored}
        ap = average_precision(scored) if len(labels) == 2 else None
        rows.append((tag, ap, len(scored)))
    return rows


def compare_report(out_dir, records_by_method: dict, bin_edges, tracks: dict | None = None,
                   sweep_rows=None, summary_extra: dict | None = None) -> dict:
    """Write the comparison tables and a JSON summary; returns the summary.

    Files: ``ap_table.csv``, ``range_error_by_bin.csv``, ``track_<name>.csv``
    for each range-vs-time track, ``snr_sweep.csv`` when sweep rows are given,
    and ``summary.json``. Output bytes depend only on the inputs.
    """
    if not records_by_method or not any(records_by_method.values()):
        raise EvaluationError("no prediction records to report")
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    aps = ap_table(records_by_method)
    files["ap_table.csv"] = _csv_text(("method", "average_precision", "examples"), aps)

    rows, summary_bins = [], {}
    for tag in sorted(records_by_method):
        recs = records_by_method[tag]
        if not any(r.true_presence for r in recs):
            continue
        tab = range_error_by_bin(recs, bin_edges)
        summary_bins[tag] = {"mean_abs_relative_error": tab.mean_abs_relative_error,
                             "detection_fraction": tab.detection_fraction}
        for b in range(len(tab.counts)):
            rows.append((tag, tab.bin_edges[b], tab.bin_edges[b + 1], tab.counts[b],
                         tab.detected[b], tab.detection_fraction[b],
                         tab.mean_abs_relative_error[b]))
    files["range_error_by_bin.csv"] = _csv_text(
        ("method", "bin_lo_m", "bin_hi_m", "count", "detected", "detection_fraction",
         "mean_abs_relative_error"), rows)

    for name in sorted(tracks or {}):
        files[f"track_{name}.csv"] = _csv_text(
            ("time_s", "true_range_m", "method", "predicted_range_m"), tracks[name])
    if sweep_rows is not None:
        files["snr_sweep.csv"] = _csv_text(
            ("snr_db", "method", "far_field_mean_relative_error", "far_field_detection_fraction",
             "examples"), sweep_rows)

    summary = {"average_precision": {t: ap for t, ap, _ in aps},
               "range_error_by_bin": summary_bins,
               "bin_edges": [float(e) for e in bin_edges]}
    if sweep_rows is not None:
        summary["snr_sweep"] = [list(r) for r in sweep_rows]
    if summary_extra:
        summary.update(summary_extra)
    files["summary.json"] = json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return summary


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
