import math

import numpy as np
import pytest

from otdrnet.dataset import Dataset
from otdrnet.evaluation import (
    BOUND_NAME,
    MF_NAME,
    EvalReport,
    ScoreSet,
    bound_rows,
    calibrate_threshold_for_pfa,
    confusion_counts,
    detection_probability,
    false_alarm_probability,
    load_scores,
    pooled_rmse,
    regenerate_report,
    rows_from_scores,
    save_scores,
    snr_bins,
    sweep_detection,
    sweep_localization,
    write_figures,
)
from otdrnet.exceptions import CalibrationError, FormatError, ShapeError
from otdrnet.simulation import SimConfig, build_pulse_template


class Oracle:
    """Scores equal to the labels; regressions equal to the truth plus ``noise``."""

    name = "oracle"

    def __init__(self, ds, noise=0.0):
        self.ds = ds
        self.noise = noise

    def score_windows(self, X):
        idx = [self._lookup[bytes(x.astype(np.float32).tobytes())] for x in X]
        d = self.ds
        return (d.class_id[idx].astype(float), d.position_idx[idx] + self.noise,
                d.reflectance_db[idx] - self.noise)

    @property
    def _lookup(self):
        return {bytes(v.tobytes()): i for i, v in enumerate(self.ds.values)}


def _toy_dataset(n=400, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n, 35)).astype(np.float32)
    cls = np.tile([0, 1], n // 2)
    pos = np.where(cls == 1, rng.uniform(0, 34, n), np.nan)
    refl = np.where(cls == 1, rng.uniform(-45, -5, n), np.nan)
    snr = rng.uniform(0, 30, n)
    kind = np.where(cls == 1, rng.integers(1, 3, n), 0)
    tid = np.arange(n) // 8
    split = np.zeros(n)
    return Dataset(values, cls, pos, refl, snr, kind, tid, split, {"sim_config": {"sample_spacing_m": 1.0}})


def test_confusion_trivial():
    y = np.array([1, 0, 1, 0, 1])
    tp, fp, tn, fn = confusion_counts(y, y)
    assert fp == fn == 0
    assert detection_probability(tp, fn) == 1.0 and false_alarm_probability(fp, tn) == 0.0
    tp, fp, tn, fn = confusion_counts(1 - y, y)
    assert detection_probability(tp, fn) == 0.0 and false_alarm_probability(fp, tn) == 1.0
    assert detection_probability(3, 1) == 0.75
    assert math.isnan(detection_probability(0, 0))
    with pytest.raises(ShapeError):
        confusion_counts([1, 0], [1])


def test_threshold_calibration():
    rng = np.random.default_rng(0)
    s = rng.normal(size=1001)
    assert calibrate_threshold_for_pfa(s, 0.5) == pytest.approx(np.median(s))
    u = rng.uniform(size=100_000)
    assert calibrate_threshold_for_pfa(u, 0.1) == pytest.approx(0.9, abs=0.005)
    n = 2000
    scores = rng.normal(size=n)
    tau = calibrate_threshold_for_pfa(scores, 0.1)
    assert abs(np.mean(scores >= tau) - 0.1) <= 1 / n
    with pytest.raises(CalibrationError):
        calibrate_threshold_for_pfa(np.zeros(9), 0.1)


def test_perfect_detector_report():
    ds = _toy_dataset()
    rep = sweep_detection(Oracle(ds), ds, ds, p_fa_levels=(0.1,), name="oracle")
    rows = [r for r in rep.rows if r["n_pos"]]
    assert len(rep.rows) == 30
    assert all(r["p_d"] == 1.0 and r["p_fa"] == 0.0 for r in rows)
    assert all(r["rmse_position_m"] == 0.0 for r in rows)
    for r in rep.rows:
        if r["n_pos"]:
            assert r["p_d"] == r["tp"] / (r["tp"] + r["fn"])


def test_rmse_and_pooled():
    ds = _toy_dataset()
    ss = sweep_detection(Oracle(ds, noise=2.0), ds, ds, p_fa_levels=(0.1,)).scores[0]
    assert pooled_rmse(ss, "position") == pytest.approx(2.0, rel=1e-6)
    assert pooled_rmse(ss, "reflectance", 10, 20) == pytest.approx(2.0, rel=1e-6)
    assert pooled_rmse(ss, "position", pattern="whole") == pytest.approx(2.0, rel=1e-6)


def test_empty_bins_are_flagged_not_fatal():
    ds = _toy_dataset()
    keep = ds.snr_db < 10
    sub = ds.take(np.flatnonzero(keep))
    rep = sweep_detection(Oracle(sub), sub, sub, p_fa_levels=(0.1,))
    empty = [r for r in rep.rows if r["snr_bin_lo_db"] >= 10]
    assert empty and all(r["n_pos"] == 0 and math.isnan(r["p_d"]) for r in empty)
    assert all(math.isnan(r["rmse_position_m"]) for r in empty)


def test_report_csv_round_trip_and_regeneration(tmp_path):
    ds = _toy_dataset()
    rep = sweep_localization(Oracle(ds, 0.5), {"mixed": ds, "whole": ds}, ds)
    rep.to_csv(tmp_path / "a.csv")
    save_scores(tmp_path / "raw_scores.bin", rep.scores)
    loaded = load_scores(tmp_path / "raw_scores.bin")
    assert [s.dataset_variant for s in loaded] == ["mixed", "whole"]
    regen = regenerate_report(loaded, ["fig5", "fig5"])
    regen.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = EvalReport.from_csv(tmp_path / "a.csv")
    assert len(back.rows) == len(rep.rows)
    assert back.rows[0]["figure"] == "fig5"


def test_load_scores_rejects_garbage(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"nonsense-bytes")
    with pytest.raises(FormatError):
        load_scores(tmp_path / "bad.bin")


def test_bound_rows_and_figures(tmp_path):
    tpl = build_pulse_template(SimConfig())
    rows = bound_rows(tpl, 0.1, bins=snr_bins(0, 4, 1), n_trials=2000)
    names = {r["detector_name"] for r in rows}
    assert names == {BOUND_NAME, MF_NAME}
    assert len(rows) == 8
    ds = _toy_dataset()
    rep = sweep_detection(Oracle(ds), ds, ds)
    rep.rows += [dict(r, figure="fig7") for r in rows]
    paths = write_figures(rep, tmp_path)
    assert {p.name for p in paths} >= {"fig4_pd_vs_snr.svg", "fig7_detector_comparison.svg"}
    assert all(p.read_text().startswith("<svg") for p in paths)


def test_scoreset_records_roundtrip(tmp_path):
    ss = ScoreSet("x", "mixed", np.array([0.2, 0.9]), np.array([1.0, np.nan]), np.array([np.nan, -3.0]),
                  np.array([0, 1]), np.array([np.nan, 4.0]), np.array([np.nan, -10.0]),
                  np.array([1.5, 2.5]), np.array([0, 1]), thresholds={0.1: 0.5})
    save_scores(tmp_path / "s.bin", [ss])
    back = load_scores(tmp_path / "s.bin")[0]
    assert back.thresholds == {0.1: 0.5}
    assert back.score.tobytes() == ss.score.tobytes()
    rows = rows_from_scores(back, "fig4", bins=snr_bins(0, 3, 1))
    assert [r["n_pos"] for r in rows] == [0, 0, 1]
