import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otdrnet.dataset import (
    Dataset,
    WindowScaler,
    build_dataset,
    build_eval_variants,
    denormalize,
    extract_sequences,
    normalize,
    window_label,
)
from otdrnet.exceptions import DataError, ExtractionError, FormatError
from otdrnet.simulation import WINDOW_LEN, SimConfig, build_pulse_template, simulate_one, simulate_trace


@pytest.fixture(scope="module")
def cfg():
    return SimConfig(rng_seed=11)


@pytest.fixture(scope="module")
def small(cfg):
    return build_dataset(cfg, 10)


def test_extract_counts(cfg):
    tr = simulate_one(cfg, 0)
    seqs = extract_sequences(tr, np.random.default_rng(0))
    assert len(seqs) == 8
    assert sum(s.class_id == 0 for s in seqs) == 4
    assert sum(s.class_id == 1 for s in seqs) == 4
    for s in seqs:
        assert s.values.shape == (WINDOW_LEN,)
        if s.class_id == 0:
            assert s.position_idx is None and s.reflectance_db is None and s.pattern_kind == "none"
        else:
            assert 0 <= s.position_idx <= WINDOW_LEN - 1
            assert s.reflectance_db == tr.reflectance_db


def test_negative_windows_miss_event(cfg):
    t = build_pulse_template(cfg)
    tr = simulate_trace(cfg, math.inf, -10.0, 500.0, seed=0)
    for seed in range(20):
        for s in extract_sequences(tr, np.random.default_rng(seed)):
            if s.class_id == 0:
                assert np.all(s.values == 0.0)
            else:
                assert np.any(s.values > 0.0)
    assert t.extent_samples == tr.extent_samples


def test_position_label_arithmetic(cfg):
    tr = simulate_trace(cfg, math.inf, -10.0, 500.0, seed=0)
    assert tr.event_position_idx == 500.0
    assert window_label(tr, 483) == (1, 17.0, "whole")
    assert window_label(tr, tr.event_start - WINDOW_LEN) == (0, None, "none")
    assert window_label(tr, tr.event_stop) == (0, None, "none")
    assert window_label(tr, tr.event_stop - 1)[2] == "partial"


def test_whole_window_argmax_matches_label(cfg):
    tr = simulate_trace(cfg, math.inf, -10.0, 500.0, seed=0)
    for seed in range(50):
        for s in extract_sequences(tr, np.random.default_rng(seed), pattern="whole"):
            if s.class_id == 1:
                assert s.values.argmax() == round(s.position_idx)


def test_partial_labels_clamped(cfg):
    tr = simulate_trace(cfg, math.inf, -10.0, 500.0, seed=0)
    for seed in range(50):
        for s in extract_sequences(tr, np.random.default_rng(seed), pattern="partial"):
            if s.class_id == 1:
                assert s.pattern_kind == "partial"
                assert s.values[0] > 0 or s.values[-1] > 0  # clipped at an edge
                peak_visible = s.values.argmax()
                if 0 < s.position_idx < WINDOW_LEN - 1:
                    assert peak_visible == round(s.position_idx)


def test_extraction_error_short_trace():
    cfg = SimConfig(trace_len_samples=60)
    tr = simulate_trace(cfg, 10.0, -10.0, 30.0, seed=0)
    with pytest.raises(ExtractionError):
        extract_sequences(tr, np.random.default_rng(0))


def test_scaler_basics(cfg):
    sc = WindowScaler.from_config(cfg, kind="asinh")
    np.testing.assert_array_equal(normalize(np.zeros(WINDOW_LEN), sc), np.zeros(WINDOW_LEN))
    w = np.zeros(WINDOW_LEN)
    w[3] = cfg.peak_amplitude_max
    assert normalize(w, sc)[3] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DataError):
        normalize(np.full(WINDOW_LEN, np.nan), sc)
    lin = WindowScaler.from_config(cfg, kind="linear")
    assert normalize(w, lin)[3] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5, allow_nan=False), min_size=WINDOW_LEN, max_size=WINDOW_LEN),
       st.sampled_from(["asinh", "linear"]))
def test_scaler_round_trip(values, kind):
    sc = WindowScaler.from_config(SimConfig(), kind=kind)
    w = np.array(values)
    back = denormalize(normalize(w, sc), sc)
    np.testing.assert_allclose(back, w, rtol=1e-6, atol=1e-15)


def test_scaler_monotone_and_compresses_range(cfg):
    sc = WindowScaler.from_config(cfg, kind="asinh")
    weak = normalize(np.array([sc.peak_ * 1e-4]), sc)[0]
    assert 0.1 < weak < 0.5  # 40 dB weaker peak still well above zero
    x = np.linspace(-1, 1, 101)
    assert np.all(np.diff(normalize(x, sc)) > 0)


def test_build_small(small):
    assert len(small) == 80
    counts = small.manifest["counts"]
    assert [counts[s]["sequences"] for s in ("train", "val", "test")] == [48, 16, 16]
    for s in ("train", "val", "test"):
        assert counts[s]["positive"] == counts[s]["negative"]


def test_split_hygiene(small):
    ids = [set(small.subset(s).source_trace_id.tolist()) for s in ("train", "val", "test")]
    assert not ids[0] & ids[1] and not ids[0] & ids[2] and not ids[1] & ids[2]


def test_per_trace_balance(small):
    for tid in np.unique(small.source_trace_id):
        m = small.source_trace_id == tid
        assert m.sum() == 8
        assert small.class_id[m].sum() == 4


def test_build_needs_five_traces(cfg):
    with pytest.raises(DataError):
        build_dataset(cfg, 4)


def test_build_deterministic(cfg, small):
    again = build_dataset(cfg, 10)
    assert again.checksum() == small.checksum()


def test_save_load_round_trip(small, tmp_path):
    small.save(tmp_path / "ds")
    back = Dataset.load(tmp_path / "ds")
    for name in ("values", "class_id", "position_idx", "reflectance_db", "snr_db", "pattern_kind",
                 "source_trace_id", "split"):
        assert getattr(back, name).tobytes() == getattr(small, name).tobytes()
    assert back.manifest["n_traces"] == 10
    seq = back[0]
    assert seq.values.shape == (WINDOW_LEN,)


def test_load_rejects_unknown_version(small, tmp_path):
    import json
    d = small.save(tmp_path / "ds")
    m = json.loads((d / "manifest.json").read_text())
    m["format_version"] = 99
    (d / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(FormatError):
        Dataset.load(d)


def test_load_rejects_corruption(small, tmp_path):
    d = small.save(tmp_path / "ds")
    raw = bytearray((d / "sequences.bin").read_bytes())
    raw[5] ^= 0xFF
    (d / "sequences.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        Dataset.load(d)


def test_record_layout():
    from otdrnet.dataset import RECORD_DTYPE
    assert RECORD_DTYPE.itemsize == 35 * 4 + 1 + 4 + 4 + 4 + 1 + 8


def test_eval_variants(cfg):
    v = build_eval_variants(cfg, 200)
    pos = v["whole"].class_id == 1
    assert np.all(v["whole"].pattern_kind[pos] == 1)
    pos = v["partial"].class_id == 1
    assert np.all(v["partial"].pattern_kind[pos] == 2)
    mixed = v["mixed"].pattern_kind[v["mixed"].class_id == 1]
    assert (mixed == 1).mean() >= 0.25 and (mixed == 2).mean() >= 0.25
