"""Detection and localization metrics binned by SNR.

Every sweep first scores a dataset with a detector (a :class:`ScoreSet`,
persisted as ``raw_scores.bin``) and then derives the report rows from the
scores and the calibrated thresholds, so a report can be regenerated
bit-identically from the persisted scores.

Detection probability is ``TP / (TP + FN)`` and false-alarm probability
``FP / (FP + TN)``.  Position and reflectance RMSE are computed over true
positives only.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import bound_pd, empirical_threshold, matched_filter_pd_mc
from .dataset import PATTERN_CODE, Dataset
from .exceptions import CalibrationError, FormatError, ShapeError
from .svgplot import write_plot

DEFAULT_PFA_LEVELS = (0.01, 0.05, 0.1)
ML_NAME = "CNN"
BOUND_NAME = "optimum bound (closed form)"
MF_NAME = "matched filter (Monte Carlo)"

REPORT_COLUMNS = [
    "figure", "detector_name", "dataset_variant", "p_fa_target", "threshold",
    "snr_bin_lo_db", "snr_bin_hi_db", "snr_bin_db", "n_pos", "n_neg", "tp", "fn", "fp", "tn",
    "p_d", "p_d_se", "p_fa", "n_tp", "rmse_position_m", "rmse_reflectance_db",
]


def confusion_counts(decisions, labels):
    """``(TP, FP, TN, FN)`` for binary decisions against binary labels."""
    d = np.asarray(decisions).astype(bool)
    y = np.asarray(labels).astype(bool)
    if d.shape != y.shape:
        raise ShapeError(f"{d.size} decisions for {y.size} labels")
    return (int(np.sum(d & y)), int(np.sum(d & ~y)), int(np.sum(~d & ~y)), int(np.sum(~d & y)))


def detection_probability(tp, fn):
    return tp / (tp + fn) if tp + fn else math.nan


def false_alarm_probability(fp, tn):
    return fp / (fp + tn) if fp + tn else math.nan


def calibrate_threshold_for_pfa(negative_scores, p_fa_target):
    """Empirical ``1 - p_fa_target`` quantile of negative-class scores."""
    negative_scores = np.asarray(negative_scores, dtype=float)
    if negative_scores.size < math.ceil(1.0 / p_fa_target - 1e-9):
        raise CalibrationError(
            f"{negative_scores.size} negatives are too few for p_fa={p_fa_target}")
    return empirical_threshold(negative_scores, p_fa_target)


@dataclass
class ScoreSet:
    """Detector outputs on one dataset, aligned with its labels."""

    detector_name: str
    dataset_variant: str
    score: np.ndarray
    position_hat: np.ndarray
    reflectance_hat: np.ndarray
    class_id: np.ndarray
    position_idx: np.ndarray
    reflectance_db: np.ndarray
    snr_db: np.ndarray
    pattern_kind: np.ndarray
    sample_spacing_m: float = 1.0
    thresholds: dict = field(default_factory=dict)

    _DTYPE = np.dtype([("score", "<f8"), ("position_hat", "<f8"), ("reflectance_hat", "<f8"),
                       ("class_id", "u1"), ("position_idx", "<f4"), ("reflectance_db", "<f4"),
                       ("snr_db", "<f4"), ("pattern_kind", "u1")])

    def __len__(self):
        return self.score.size

    def header(self):
        return {"detector_name": self.detector_name, "dataset_variant": self.dataset_variant,
                "sample_spacing_m": self.sample_spacing_m, "n": len(self),
                "thresholds": [[repr(float(k)), repr(float(v))] for k, v in sorted(self.thresholds.items())]}

    def records(self):
        rec = np.empty(len(self), dtype=self._DTYPE)
        for name in self._DTYPE.names:
            rec[name] = getattr(self, name)
        return rec


def score_detector(detector, dataset: Dataset, name=None, variant="mixed") -> ScoreSet:
    """Run ``detector.score_windows`` over a dataset."""
    score, pos, refl = detector.score_windows(dataset.values)
    n = len(dataset)
    pos = np.full(n, np.nan) if pos is None else np.asarray(pos, dtype=float)
    refl = np.full(n, np.nan) if refl is None else np.asarray(refl, dtype=float)
    spacing = dataset.manifest.get("sim_config", {}).get("sample_spacing_m", 1.0)
    return ScoreSet(name or getattr(detector, "name", type(detector).__name__), variant,
                    np.asarray(score, dtype=float), pos, refl, dataset.class_id.copy(),
                    dataset.position_idx.copy(), dataset.reflectance_db.copy(),
                    dataset.snr_db.copy(), dataset.pattern_kind.copy(), float(spacing))


_MAGIC = b"OTDRSCR1"


def save_scores(path, score_sets):
    """Write score sets as consecutive blocks: magic, u32 header length,
    JSON header, little-endian records."""
    with open(path, "wb") as fh:
        for ss in score_sets:
            head = json.dumps(ss.header(), sort_keys=True).encode()
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            fh.write(ss.records().tobytes())


def load_scores(path) -> list[ScoreSet]:
    data = Path(path).read_bytes()
    out, off = [], 0
    while off < len(data):
        if data[off:off + 8] != _MAGIC:
            raise FormatError(f"{path}: bad score block at byte {off}")
        (hl,) = struct.unpack_from("<I", data, off + 8)
        head = json.loads(data[off + 12:off + 12 + hl])
        off += 12 + hl
        size = head["n"] * ScoreSet._DTYPE.itemsize
        if off + size > len(data):
            raise FormatError(f"{path}: truncated score block")
        rec = np.frombuffer(data, dtype=ScoreSet._DTYPE, count=head["n"], offset=off)
        off += size
        out.append(ScoreSet(head["detector_name"], head["dataset_variant"],
                            sample_spacing_m=head["sample_spacing_m"],
                            thresholds={float(k): float(v) for k, v in head["thresholds"]},
                            **{n: rec[n].copy() for n in ScoreSet._DTYPE.names}))
    return out


def snr_bins(lo=0.0, hi=30.0, width=1.0):
    n = int(round((hi - lo) / width))
    return [(lo + i * width, lo + (i + 1) * width) for i in range(n)]


def _bin_index(snr, bins):
    lo, width = bins[0][0], bins[0][1] - bins[0][0]
    return np.clip(np.floor((np.asarray(snr, dtype=float) - lo) / width), 0, len(bins) - 1).astype(int)


def _rmse(err):
    return float(np.sqrt(np.mean(err * err))) if err.size else math.nan


def rows_from_scores(ss: ScoreSet, figure: str, bins=None) -> list[dict]:
    """One row per (threshold, SNR bin) of ``ss.thresholds``."""
    bins = bins or snr_bins()
    b = _bin_index(ss.snr_db, bins)
    y = ss.class_id == 1
    rows = []
    for p_fa, tau in sorted(ss.thresholds.items()):
        det = ss.score >= tau
        for k, (lo, hi) in enumerate(bins):
            m = b == k
            tp, fp, tn, fn = confusion_counts(det[m], y[m])
            pd = detection_probability(tp, fn)
            tpm = m & y & det
            pos_err = (ss.position_hat[tpm] - ss.position_idx[tpm]) * ss.sample_spacing_m
            refl_err = ss.reflectance_hat[tpm] - ss.reflectance_db[tpm]
            rows.append({
                "figure": figure, "detector_name": ss.detector_name,
                "dataset_variant": ss.dataset_variant, "p_fa_target": p_fa, "threshold": tau,
                "snr_bin_lo_db": lo, "snr_bin_hi_db": hi, "snr_bin_db": 0.5 * (lo + hi),
                "n_pos": tp + fn, "n_neg": fp + tn, "tp": tp, "fn": fn, "fp": fp, "tn": tn,
                "p_d": pd, "p_d_se": math.sqrt(pd * (1 - pd) / (tp + fn)) if tp + fn else math.nan,
                "p_fa": false_alarm_probability(fp, tn), "n_tp": tp,
                "rmse_position_m": _rmse(pos_err[np.isfinite(pos_err)]) if tp else math.nan,
                "rmse_reflectance_db": _rmse(refl_err[np.isfinite(refl_err)]) if tp else math.nan,
            })
    return rows


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    scores: list = field(default_factory=list)

    def extend(self, other: "EvalReport"):
        self.rows += other.rows
        self.scores += other.scores
        return self

    def select(self, **criteria) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in criteria.items())]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([_cell(r.get(c)) for c in REPORT_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for r in rows:
            for k, v in r.items():
                if k not in ("figure", "detector_name", "dataset_variant"):
                    r[k] = float(v) if v != "" else math.nan
        return cls(rows)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def regenerate_report(score_sets, figures) -> EvalReport:
    """Rebuild report rows from persisted scores; ``figures`` aligns with them."""
    rep = EvalReport()
    for ss, fig in zip(score_sets, figures):
        rep.rows += rows_from_scores(ss, fig)
        rep.scores.append(ss)
    return rep


def _calibrated(detector, test, calib, p_fa_levels, name, variant):
    ss = score_detector(detector, test, name, variant)
    neg = calib.values[calib.class_id == 0]
    null = np.asarray(detector.score_windows(neg)[0], dtype=float)
    ss.thresholds = {float(p): calibrate_threshold_for_pfa(null, p) for p in p_fa_levels}
    return ss


def sweep_detection(detector, test: Dataset, calib: Dataset, p_fa_levels=DEFAULT_PFA_LEVELS,
                    name=ML_NAME, variant="mixed") -> EvalReport:
    """P_d and P_FA per SNR bin at thresholds calibrated on ``calib`` negatives."""
    ss = _calibrated(detector, test, calib, p_fa_levels, name, variant)
    return EvalReport(rows_from_scores(ss, "fig4"), [ss])


def sweep_localization(detector, variants: dict, calib: Dataset, p_fa=0.1,
                       name=ML_NAME) -> EvalReport:
    """Position RMSE per SNR bin for each dataset variant."""
    rep = EvalReport()
    for kind, ds in variants.items():
        ss = _calibrated(detector, ds, calib, (p_fa,), name, kind)
        rep.extend(EvalReport(rows_from_scores(ss, "fig5"), [ss]))
    return rep


def sweep_reflectance(model, test: Dataset, calib: Dataset, p_fa=0.1, name=ML_NAME) -> EvalReport:
    ss = _calibrated(model, test, calib, (p_fa,), name, "mixed")
    return EvalReport(rows_from_scores(ss, "fig6"), [ss])


def bound_rows(template, p_fa=0.1, bins=None, n_trials=20000, seed=0) -> list[dict]:
    """Closed-form bound and Monte Carlo matched filter at the bin centres."""
    bins = bins or snr_bins()
    centers = np.array([0.5 * (lo + hi) for lo, hi in bins])
    closed = bound_pd(centers, p_fa)
    mc, se = matched_filter_pd_mc(centers, p_fa, template, n_trials, seed)
    rows = []
    for (lo, hi), c, pb, pm, sm in zip(bins, centers, closed, mc, se):
        for name, pd, s in ((BOUND_NAME, float(pb), math.nan), (MF_NAME, float(pm), float(sm))):
            rows.append({"figure": "fig7", "detector_name": name, "dataset_variant": "analytic",
                         "p_fa_target": float(p_fa), "snr_bin_lo_db": lo, "snr_bin_hi_db": hi,
                         "snr_bin_db": float(c), "p_d": pd, "p_d_se": s})
    return rows


def compare_detectors(ml, glrt, whole: Dataset, calib: Dataset, template, p_fa=0.1,
                      n_trials=20000, seed=0) -> EvalReport:
    """CNN vs GLRT on a whole-pattern-only set, plus both bounds.

    The CNN threshold comes from ``calib`` negatives; the GLRT uses its own
    noise-calibrated ``threshold_`` at ``glrt.p_fa``.
    """
    rep = EvalReport()
    ml_ss = _calibrated(ml, whole, calib, (p_fa,), ML_NAME, "whole")
    g_ss = score_detector(glrt, whole, glrt.name, "whole")
    g_ss.thresholds = {float(p_fa): float(glrt.threshold_)}
    for ss in (ml_ss, g_ss):
        rep.extend(EvalReport(rows_from_scores(ss, "fig7"), [ss]))
    rep.rows += bound_rows(template, p_fa, n_trials=n_trials, seed=seed)
    return rep


def _series(rows, key, group):
    out = {}
    for r in rows:
        out.setdefault(group(r), ([], []))
        out[group(r)][0].append(r["snr_bin_db"])
        out[group(r)][1].append(r[key])
    return out


def write_figures(report: EvalReport, out_dir):
    """Write the SVG figure for every figure tag present in ``report``."""
    out_dir = Path(out_dir)
    figs = {r["figure"] for r in report.rows}
    written = []
    if "fig4" in figs:
        rows = report.select(figure="fig4")
        written.append(out_dir / "fig4_pd_vs_snr.svg")
        write_plot(written[-1], _series(rows, "p_d", lambda r: f"P_FA={r['p_fa_target']:g}"),
                   "Detection probability vs SNR", "SNR (dB)", "P_d", ylim=(0, 1))
    if "fig5" in figs:
        rows = report.select(figure="fig5")
        written.append(out_dir / "fig5_pos_rmse.svg")
        write_plot(written[-1], _series(rows, "rmse_position_m", lambda r: r["dataset_variant"]),
                   "Event position RMSE", "SNR (dB)", "RMSE (m)")
    if "fig6" in figs:
        rows = report.select(figure="fig6")
        written.append(out_dir / "fig6_refl_rmse.svg")
        write_plot(written[-1], _series(rows, "rmse_reflectance_db", lambda r: r["detector_name"]),
                   "Reflectance RMSE", "SNR (dB)", "RMSE (dB)")
    if "fig7" in figs:
        rows = report.select(figure="fig7")
        written.append(out_dir / "fig7_detector_comparison.svg")
        write_plot(written[-1], _series(rows, "p_d", lambda r: r["detector_name"]),
                   "Detection probability, whole patterns", "SNR (dB)", "P_d", ylim=(0, 1))
        det_rows = [r for r in rows if r["dataset_variant"] == "whole"]
        written.append(out_dir / "fig8_position_comparison.svg")
        write_plot(written[-1], _series(det_rows, "rmse_position_m", lambda r: r["detector_name"]),
                   "Peak position RMSE, whole patterns", "SNR (dB)", "RMSE (m)")
    return written


def pooled_rmse(ss: ScoreSet, quantity, snr_lo=-math.inf, snr_hi=math.inf, p_fa=None, pattern=None):
    """RMSE over true positives with ``snr_lo <= snr < snr_hi``."""
    tau = ss.thresholds[p_fa] if p_fa is not None else next(iter(ss.thresholds.values()))
    m = (ss.class_id == 1) & (ss.score >= tau) & (ss.snr_db >= snr_lo) & (ss.snr_db < snr_hi)
    if pattern is not None:
        m &= ss.pattern_kind == PATTERN_CODE[pattern]
    if quantity == "position":
        err = (ss.position_hat[m] - ss.position_idx[m]) * ss.sample_spacing_m
    else:
        err = ss.reflectance_hat[m] - ss.reflectance_db[m]
    return _rmse(err)
