"""Windowing, labelling, normalization and persistence of training data.

Each trace yields eight 35-sample windows: four that miss the event region
entirely (class 0) and four that overlap it (class 1).  A positive window is
``whole`` when the full pulse template lies inside it and ``partial``
otherwise.  Sequences are stored column-wise in :class:`Dataset`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DataError, ExtractionError, FormatError
from .simulation import (
    WINDOW_LEN,
    SimConfig,
    Trace,
    build_pulse_template,
    reflectance_to_amplitude,
    simulate_one,
)

FORMAT_VERSION = 1
N_NEGATIVE = 4
N_POSITIVE = 4
SPLIT_NAMES = ("train", "val", "test")
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
PATTERN_KINDS = ("none", "whole", "partial")
PATTERN_CODE = {name: i for i, name in enumerate(PATTERN_KINDS)}

RECORD_DTYPE = np.dtype([
    ("values", "<f4", (WINDOW_LEN,)),
    ("class_id", "u1"),
    ("position_idx", "<f4"),
    ("reflectance_db", "<f4"),
    ("snr_db", "<f4"),
    ("pattern_kind", "u1"),
    ("source_trace_id", "<u8"),
])


class WindowScaler(TransformerMixin, BaseEstimator):
    """Global, invertible scaling of raw power windows.

    The baseline 0 maps to 0 and ``peak`` (the largest noise-free event
    amplitude the generator can produce) maps to 1.  The default
    ``kind='linear'`` is plain min-max, ``x / peak``.  ``kind='asinh'`` maps
    ``asinh(x / softness) / asinh(peak / softness)``: linear near the
    baseline and logarithmic above ``softness``, so events spanning several
    decades of reflectance stay within one order of magnitude of each other.
    Noise may push values slightly outside [0, 1]; nothing is clipped, so
    the map stays invertible.
    """

    def __init__(self, peak=1.0, softness=None, kind="linear"):
        self.peak = peak
        self.softness = softness
        self.kind = kind

    @classmethod
    def from_config(cls, cfg: SimConfig, kind="linear") -> "WindowScaler":
        weakest = float(reflectance_to_amplitude(cfg.reflectance_db_range[0]))
        return cls(peak=cfg.peak_amplitude_max, softness=weakest / 10.0, kind=kind).fit()

    def fit(self, X=None, y=None):
        if self.kind not in ("asinh", "linear"):
            raise DataError(f"unknown scaling kind {self.kind!r}")
        if not self.peak > 0:
            raise DataError("peak must be > 0")
        self.softness_ = float(self.softness if self.softness is not None else self.peak * 1e-5)
        self.peak_ = float(self.peak)
        self.denom_ = math.asinh(self.peak_ / self.softness_) if self.kind == "asinh" else self.peak_
        return self

    def transform(self, X):
        X = _check_finite(X)
        if self.kind == "asinh":
            return np.arcsinh(X / self.softness_) / self.denom_
        return X / self.denom_

    def inverse_transform(self, X):
        X = _check_finite(X)
        if self.kind == "asinh":
            return np.sinh(X * self.denom_) * self.softness_
        return X * self.denom_

    def to_dict(self) -> dict:
        return {"kind": self.kind, "peak": self.peak_, "softness": self.softness_}


def _check_finite(X):
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError("window contains NaN or Inf")
    return X


def normalize(values, scaler: WindowScaler):
    return scaler.transform(values)


def denormalize(values, scaler: WindowScaler):
    return scaler.inverse_transform(values)


@dataclass(frozen=True)
class Sequence:
    values: np.ndarray
    class_id: int
    position_idx: float | None
    reflectance_db: float | None
    snr_db: float
    pattern_kind: str
    source_trace_id: int


def _positive_starts(event_start, event_stop, trace_len, pattern):
    lo = max(0, event_start - WINDOW_LEN + 1)
    hi = min(trace_len - WINDOW_LEN, event_stop - 1)
    starts = np.arange(lo, hi + 1)
    whole = (starts <= event_start) & (starts + WINDOW_LEN >= event_stop)
    if pattern == "whole":
        starts = starts[whole]
    elif pattern == "partial":
        starts = starts[~whole]
    elif pattern != "mixed":
        raise ValueError(f"unknown pattern {pattern!r}")
    return starts


def extract_sequences(trace: Trace, rng: np.random.Generator, scaler: WindowScaler | None = None,
                      pattern: str = "mixed") -> list[Sequence]:
    """Four negative and four positive windows from one trace.

    Negative starts are drawn without replacement from all windows disjoint
    from the event region; positive starts from all windows overlapping it
    (restricted to whole or partial ones when ``pattern`` says so).  The
    position label is the peak index relative to the window start, clamped
    to the window when the peak itself lies outside.
    """
    n = trace.samples.size
    all_starts = np.arange(n - WINDOW_LEN + 1)
    disjoint = (all_starts + WINDOW_LEN <= trace.event_start) | (all_starts >= trace.event_stop)
    neg_pool = all_starts[disjoint]
    pos_pool = _positive_starts(trace.event_start, trace.event_stop, n, pattern)
    if neg_pool.size < N_NEGATIVE or pos_pool.size < N_POSITIVE:
        raise ExtractionError(
            f"trace {trace.trace_id}: {neg_pool.size} negative / {pos_pool.size} positive "
            f"window starts available, need {N_NEGATIVE}/{N_POSITIVE}")
    neg = rng.choice(neg_pool, size=N_NEGATIVE, replace=False)
    pos = rng.choice(pos_pool, size=N_POSITIVE, replace=False)

    out = []
    for s in np.concatenate([neg, pos]):
        cls, pos_idx, kind = window_label(trace, int(s))
        out.append(Sequence(_window(trace, s, scaler), cls, pos_idx,
                            trace.reflectance_db if cls else None, trace.snr_db, kind,
                            trace.trace_id))
    return out


def window_label(trace: Trace, start: int):
    """``(class_id, position_idx, pattern_kind)`` of the window at ``start``."""
    stop = start + WINDOW_LEN
    if stop <= trace.event_start or start >= trace.event_stop:
        return 0, None, "none"
    whole = start <= trace.event_start and stop >= trace.event_stop
    pos_idx = min(max(trace.event_position_idx - start, 0.0), WINDOW_LEN - 1.0)
    return 1, float(pos_idx), "whole" if whole else "partial"


def _window(trace, start, scaler):
    w = np.array(trace.samples[start:start + WINDOW_LEN], dtype=np.float64)
    return scaler.transform(w) if scaler is not None else w


class Dataset:
    """Column-wise collection of sequences with split assignment.

    ``values`` is float32 ``(n, 35)``; missing labels are NaN.  ``split``
    holds indices into :data:`SPLIT_NAMES`.
    """

    def __init__(self, values, class_id, position_idx, reflectance_db, snr_db, pattern_kind,
                 source_trace_id, split, manifest=None):
        self.values = np.ascontiguousarray(values, dtype=np.float32)
        self.class_id = np.asarray(class_id, dtype=np.uint8)
        self.position_idx = np.asarray(position_idx, dtype=np.float32)
        self.reflectance_db = np.asarray(reflectance_db, dtype=np.float32)
        self.snr_db = np.asarray(snr_db, dtype=np.float32)
        self.pattern_kind = np.asarray(pattern_kind, dtype=np.uint8)
        self.source_trace_id = np.asarray(source_trace_id, dtype=np.uint64)
        self.split = np.asarray(split, dtype=np.uint8)
        self.manifest = dict(manifest or {})
        n = self.values.shape[0]
        if self.values.ndim != 2 or self.values.shape[1] != WINDOW_LEN:
            raise DataError(f"values must have shape (n, {WINDOW_LEN})")
        for name in ("class_id", "position_idx", "reflectance_db", "snr_db", "pattern_kind",
                     "source_trace_id", "split"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"{name} has shape {getattr(self, name).shape}, expected ({n},)")

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> Sequence:
        positive = bool(self.class_id[i])
        return Sequence(
            values=self.values[i],
            class_id=int(self.class_id[i]),
            position_idx=float(self.position_idx[i]) if positive else None,
            reflectance_db=float(self.reflectance_db[i]) if positive else None,
            snr_db=float(self.snr_db[i]),
            pattern_kind=PATTERN_KINDS[self.pattern_kind[i]],
            source_trace_id=int(self.source_trace_id[i]),
        )

    @property
    def labels(self) -> np.ndarray:
        """``(n, 3)`` float64 array of class, position index and reflectance."""
        return np.column_stack([self.class_id, self.position_idx,
                                self.reflectance_db]).astype(np.float64)

    def take(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return Dataset(self.values[idx], self.class_id[idx], self.position_idx[idx],
                       self.reflectance_db[idx], self.snr_db[idx], self.pattern_kind[idx],
                       self.source_trace_id[idx], self.split[idx], self.manifest)

    def subset(self, split: str) -> "Dataset":
        return self.take(self.split == SPLIT_NAMES.index(split))

    def scaler(self) -> WindowScaler:
        norm = self.manifest["normalization"]
        return WindowScaler(peak=norm["peak"], softness=norm["softness"], kind=norm["kind"]).fit()

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        for name in RECORD_DTYPE.names:
            rec[name] = getattr(self, name)
        return rec

    def checksum(self) -> str:
        return hashlib.sha256(self.to_records().tobytes()).hexdigest()

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rec = self.to_records()
        (directory / "sequences.bin").write_bytes(rec.tobytes())
        with open(directory / "split.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "split"])
            for i, s in enumerate(self.split):
                w.writerow([i, SPLIT_NAMES[s]])
        manifest = dict(self.manifest)
        manifest.update(format_version=FORMAT_VERSION, record_size=RECORD_DTYPE.itemsize,
                        n_sequences=len(self), checksum_sha256=hashlib.sha256(rec.tobytes()).hexdigest())
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.manifest = manifest
        return directory

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text())
            raw = (directory / "sequences.bin").read_bytes()
            with open(directory / "split.csv", newline="") as fh:
                rows = list(csv.reader(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read dataset at {directory}: {exc}") from exc
        if manifest.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"unsupported dataset format version {manifest.get('format_version')!r}")
        if len(raw) % RECORD_DTYPE.itemsize:
            raise FormatError("sequences.bin size is not a whole number of records")
        if hashlib.sha256(raw).hexdigest() != manifest.get("checksum_sha256"):
            raise FormatError("sequences.bin checksum mismatch")
        rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
        if rows[:1] != [["index", "split"]] or len(rows) - 1 != rec.size:
            raise FormatError("split.csv does not match sequences.bin")
        try:
            split = np.array([SPLIT_NAMES.index(r[1]) for r in rows[1:]], dtype=np.uint8)
        except ValueError as exc:
            raise FormatError(f"unknown split name in split.csv: {exc}") from exc
        return cls(split=split, manifest=manifest,
                   **{name: rec[name].copy() for name in RECORD_DTYPE.names})


def split_traces(n_traces: int, rng: np.random.Generator) -> np.ndarray:
    """Split code per trace: 60/20/20 by rounding, order randomized."""
    n_train = int(round(SPLIT_FRACTIONS[0] * n_traces))
    n_val = int(round(SPLIT_FRACTIONS[1] * n_traces))
    codes = np.repeat(np.arange(3, dtype=np.uint8), [n_train, n_val, n_traces - n_train - n_val])
    return codes[rng.permutation(n_traces)]


def build_dataset(cfg: SimConfig, n_traces: int, pattern: str = "mixed",
                  scaling: str = "linear") -> Dataset:
    """Simulate ``n_traces`` traces and window them into ``8 * n_traces`` sequences."""
    if n_traces < 5:
        raise DataError("build_dataset needs at least 5 traces for a 60/20/20 split")
    scaler = WindowScaler.from_config(cfg, kind=scaling)
    trace_split = split_traces(n_traces, np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 3])))
    n = 8 * n_traces
    values = np.empty((n, WINDOW_LEN), dtype=np.float32)
    cols = {k: np.empty(n, dtype=np.float64) for k in ("class_id", "position_idx", "reflectance_db",
                                                        "snr_db", "pattern_kind", "source_trace_id")}
    row = 0
    for i in range(n_traces):
        trace = simulate_one(cfg, i)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, i, 2]))
        for seq in extract_sequences(trace, rng, scaler, pattern):
            values[row] = seq.values
            cols["class_id"][row] = seq.class_id
            cols["position_idx"][row] = np.nan if seq.position_idx is None else seq.position_idx
            cols["reflectance_db"][row] = np.nan if seq.reflectance_db is None else seq.reflectance_db
            cols["snr_db"][row] = seq.snr_db
            cols["pattern_kind"][row] = PATTERN_CODE[seq.pattern_kind]
            cols["source_trace_id"][row] = seq.source_trace_id
            row += 1
    split = np.repeat(trace_split, 8)
    template = build_pulse_template(cfg)
    manifest = {
        "kind": "otdrnet.dataset",
        "sim_config": cfg.to_dict(),
        "n_traces": n_traces,
        "pattern": pattern,
        "normalization": scaler.to_dict(),
        "template_extent_samples": template.extent_samples,
        "window_len": WINDOW_LEN,
    }
    ds = Dataset(values, cols["class_id"], cols["position_idx"], cols["reflectance_db"],
                 cols["snr_db"], cols["pattern_kind"], cols["source_trace_id"].astype(np.uint64),
                 split, manifest)
    ds.manifest["counts"] = dataset_counts(ds)
    return ds


def dataset_counts(ds: Dataset) -> dict:
    out = {}
    for code, name in enumerate(SPLIT_NAMES):
        m = ds.split == code
        out[name] = {
            "sequences": int(m.sum()),
            "positive": int((ds.class_id[m] == 1).sum()),
            "negative": int((ds.class_id[m] == 0).sum()),
            "traces": int(np.unique(ds.source_trace_id[m]).size),
        }
    return out


def build_eval_variants(cfg: SimConfig, n_traces: int, scaling: str = "linear") -> dict[str, Dataset]:
    """Whole-only, partial-only and mixed datasets over the same traces."""
    return {kind: build_dataset(cfg, n_traces, pattern=kind, scaling=scaling)
            for kind in ("whole", "partial", "mixed")}
