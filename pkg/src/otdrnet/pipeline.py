"""End-to-end run: simulate, build datasets, train, evaluate, write report.

Everything is derived from one :class:`SimConfig` seed, so two runs with the
same configuration on the same machine produce byte-identical
``report.csv`` files.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import GLRTDetector
from .dataset import Dataset, build_dataset, build_eval_variants
from .evaluation import (DEFAULT_PFA_LEVELS, EvalReport, compare_detectors, save_scores,
                         sweep_detection, sweep_localization, sweep_reflectance, write_figures)
from .model import ModelConfig, train
from .simulation import SimConfig, build_pulse_template

EVAL_SEED_OFFSET = 1_000_003


@dataclass
class PipelineConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    n_traces: int = 3000
    n_eval_traces: int = 2000
    scaling: str = "linear"
    p_fa: float = 0.1
    p_fa_levels: tuple = DEFAULT_PFA_LEVELS
    n_monte_carlo: int = 20000

    def to_dict(self):
        return {"sim": self.sim.to_dict(), "model": self.model.to_dict(), "n_traces": self.n_traces,
                "n_eval_traces": self.n_eval_traces, "scaling": self.scaling, "p_fa": self.p_fa,
                "p_fa_levels": list(self.p_fa_levels), "n_monte_carlo": self.n_monte_carlo}


def eval_config(sim: SimConfig) -> SimConfig:
    """Configuration for held-out evaluation traces."""
    return replace(sim, rng_seed=sim.rng_seed + EVAL_SEED_OFFSET)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, subcommand, config, inputs=None, outputs=(), started=None):
    """Write ``run_manifest.json`` describing one artifact-producing step."""
    from . import __version__

    out_dir = Path(out_dir)
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs or {},
        "outputs": sorted(str(Path(p).relative_to(out_dir)) if Path(p).is_relative_to(out_dir)
                          else str(p) for p in outputs),
        "tool_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "wall_clock_s": None if started is None else round(time.time() - started, 3),
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def evaluate(model, dataset: Dataset, variants: dict, template, p_fa=0.1,
             p_fa_levels=DEFAULT_PFA_LEVELS, n_monte_carlo=20000, seed=0) -> EvalReport:
    """All figure sweeps for a trained model.

    Thresholds are calibrated on the validation negatives of ``dataset``.
    Every sweep scores the held-out ``variants``: the mixed set for
    detection and reflectance, all three for localization, and the whole
    set for the detector comparison.
    """
    calib = dataset.subset("val")
    test = variants["mixed"]
    glrt = GLRTDetector(template, p_fa=p_fa, n_monte_carlo=n_monte_carlo, random_state=seed,
                        scaler=dataset.scaler()).fit()
    rep = sweep_detection(model, test, calib, p_fa_levels)
    rep.extend(sweep_localization(model, variants, calib, p_fa))
    rep.extend(sweep_reflectance(model, test, calib, p_fa))
    rep.extend(compare_detectors(model, glrt, variants["whole"], calib, template, p_fa,
                                 n_trials=n_monte_carlo, seed=seed))
    return rep


def run_pipeline(cfg: PipelineConfig, out_dir, save_datasets=False, verbose=False):
    """Run every stage and write the artifacts to ``out_dir``.

    Returns ``(report, estimator, history)``.
    """
    started = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = build_dataset(cfg.sim, cfg.n_traces, scaling=cfg.scaling)
    variants = build_eval_variants(eval_config(cfg.sim), cfg.n_eval_traces, scaling=cfg.scaling)
    if save_datasets:
        ds.save(out / "dataset")
        for kind, v in variants.items():
            v.save(out / "variants" / kind)
    est, history = train(ds, cfg.model, verbose=verbose)
    est.save(out / "model.ckpt")
    history.to_csv(out / "history.csv")
    template = build_pulse_template(cfg.sim)
    rep = evaluate(est, ds, variants, template, cfg.p_fa, cfg.p_fa_levels, cfg.n_monte_carlo,
                   seed=cfg.sim.rng_seed)
    rep.to_csv(out / "report.csv")
    save_scores(out / "raw_scores.bin", rep.scores)
    figures = write_figures(rep, out)
    outputs = [out / n for n in ("model.ckpt", "history.csv", "report.csv", "raw_scores.bin")] + figures
    write_manifest(out, "pipeline", cfg.to_dict(),
                   {"dataset_checksum_sha256": ds.checksum()}, outputs, started)
    return rep, est, history
