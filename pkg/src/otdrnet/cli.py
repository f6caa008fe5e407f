"""Command-line entry point: ``otdrnet <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numeric failure.  Failures print one JSON line to stderr.
Configuration precedence is flags, then the ``--config`` file (TOML or
JSON with ``[sim]``, ``[model]`` and ``[pipeline]`` tables), then defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from contextlib import nullcontext
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import GLRTDetector, bound_table, write_bound_csv
from .dataset import Dataset, build_dataset, build_eval_variants
from .evaluation import (compare_detectors, save_scores, sweep_detection,
                         sweep_localization, sweep_reflectance, write_figures)
from .exceptions import (CalibrationError, ConfigError, DataError, DomainError, OTDRError,
                         TrainingError)
from .model import ModelConfig, ReflectiveEventCNN, train
from .pipeline import PipelineConfig, file_sha256, run_pipeline, write_manifest
from .simulation import SimConfig, build_pulse_template, load_config_file, simulate_batch

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _exit_code(exc) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (TrainingError, CalibrationError, DomainError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, OTDRError, OSError, ValueError)):
        return EXIT_DATA
    raise exc


# configuration -------------------------------------------------------------

def _section(args, name):
    return load_config_file(args.config, section=name) if getattr(args, "config", None) else {}


def _sim_config(args) -> SimConfig:
    data = _section(args, "sim")
    if getattr(args, "seed", None) is not None:
        data["rng_seed"] = args.seed
    return SimConfig.from_dict(data)


def _model_config(args) -> ModelConfig:
    data = _section(args, "model")
    flags = {"lr": args.lr, "batch_size": args.batch, "max_epochs": args.epochs,
             "dropout": args.dropout, "patience": args.patience, "random_state": args.seed,
             "loss_weights": args.lam}
    data.update({k: v for k, v in flags.items() if v is not None})
    return ModelConfig.from_dict(data)


def _lambda(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --lambda {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("--lambda needs three comma-separated weights")
    return tuple(vals)


def _snr_range(text):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--snr expects lo:hi:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise argparse.ArgumentTypeError("--snr needs lo <= hi and step > 0")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def _inputs(args):
    out = {}
    if getattr(args, "config", None):
        out["config_sha256"] = file_sha256(args.config)
    return out


# subcommands ---------------------------------------------------------------

def cmd_simulate(args):
    started = time.time()
    cfg = _sim_config(args)
    traces = simulate_batch(cfg, args.traces)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "traces.npz",
             samples=np.stack([t.samples for t in traces]),
             **{k: np.array([getattr(t, k) for t in traces])
                for k in ("event_position_m", "event_position_idx", "reflectance_db", "snr_db",
                          "seed", "event_start", "amplitude", "noise_std")})
    snr = np.array([t.snr_db for t in traces])
    refl = np.array([t.reflectance_db for t in traces])
    summary = {"n_traces": len(traces), "trace_len_samples": cfg.trace_len_samples,
               "template_extent_samples": traces[0].extent_samples,
               "snr_db": {"min": snr.min(), "max": snr.max(), "mean": snr.mean()},
               "reflectance_db": {"min": refl.min(), "max": refl.max(), "mean": refl.mean()}}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "simulate", {"sim": cfg.to_dict(), "traces": args.traces}, _inputs(args),
                   [out / "traces.npz", out / "summary.json"], started)
    print(json.dumps(summary, sort_keys=True))


def cmd_dataset_build(args):
    started = time.time()
    cfg = _sim_config(args)
    ds = build_dataset(cfg, args.traces, scaling=args.scaling)
    out = Path(args.out)
    ds.save(out)
    write_manifest(out, "dataset build", {"sim": cfg.to_dict(), "traces": args.traces,
                                          "scaling": args.scaling}, _inputs(args),
                   [out / n for n in ("manifest.json", "sequences.bin", "split.csv")], started)
    print(json.dumps({"sequences": len(ds), "checksum_sha256": ds.checksum(),
                      "counts": ds.manifest["counts"]}, sort_keys=True))


def cmd_dataset_variants(args):
    started = time.time()
    cfg = _sim_config(args)
    kinds = args.kind or ["whole", "partial", "mixed"]
    out = Path(args.out)
    outputs = []
    built = build_eval_variants(cfg, args.traces, scaling=args.scaling)
    for kind in kinds:
        built[kind].save(out / kind)
        outputs += [out / kind / n for n in ("manifest.json", "sequences.bin", "split.csv")]
    write_manifest(out, "dataset variants", {"sim": cfg.to_dict(), "traces": args.traces,
                                             "kinds": kinds, "scaling": args.scaling},
                   _inputs(args), outputs, started)
    print(json.dumps({k: len(built[k]) for k in kinds}, sort_keys=True))


def cmd_train(args):
    started = time.time()
    cfg = _model_config(args)
    ds = Dataset.load(args.dataset)
    est, history = train(ds, cfg, verbose=args.verbose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est.save(out / "model.ckpt")
    history.to_csv(out / "history.csv")
    best = history.rows[history.best_epoch]
    write_manifest(out, "train", {"model": est.config().to_dict(), "dataset": str(args.dataset)},
                   dict(_inputs(args), dataset_checksum_sha256=ds.checksum()),
                   [out / "model.ckpt", out / "history.csv"], started)
    print(json.dumps({"epochs": len(history.rows), "best_epoch": history.best_epoch,
                      "val_total": best.get("val_total")}, sort_keys=True))


def _dataset_paths(paths):
    """Expand directories holding ``whole``/``partial``/``mixed`` sub-datasets."""
    out = []
    for p in map(Path, paths):
        if (p / "manifest.json").exists() and (p / "sequences.bin").exists():
            out.append(p)
        else:
            subs = [p / k for k in ("whole", "partial", "mixed") if (p / k / "sequences.bin").exists()]
            if not subs:
                raise DataError(f"no dataset found at {p}")
            out += subs
    return out


def cmd_eval(args):
    started = time.time()
    model = ReflectiveEventCNN.load(args.model)
    paths = _dataset_paths(args.dataset)
    datasets = [Dataset.load(p) for p in paths]
    if args.calib:
        calib = Dataset.load(args.calib).subset("val")
        split = args.split or "all"
    else:
        calib = datasets[0].subset("val")
        split = args.split or "test"
    tests = [d if split == "all" else d.subset(split) for d in datasets]
    first = datasets[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "detect":
        rep = sweep_detection(model, tests[0], calib, tuple(args.pfa_levels or [args.pfa]),
                              variant=first.manifest.get("pattern", "mixed"))
    elif args.what == "localize":
        rep = sweep_localization(model, {d.manifest.get("pattern", "mixed"): t
                                         for d, t in zip(datasets, tests)}, calib, args.pfa)
    elif args.what == "reflectance":
        rep = sweep_reflectance(model, tests[0], calib, args.pfa)
    else:
        sim = SimConfig.from_dict(first.manifest["sim_config"])
        template = build_pulse_template(sim)
        glrt = GLRTDetector(template, p_fa=args.pfa, n_monte_carlo=args.trials,
                            random_state=args.seed, scaler=first.scaler()).fit()
        rep = compare_detectors(model, glrt, tests[0], calib, template, args.pfa,
                                n_trials=args.trials, seed=args.seed)
    rep.to_csv(out / "report.csv")
    save_scores(out / "raw_scores.bin", rep.scores)
    figures = write_figures(rep, out)
    write_manifest(out, f"eval {args.what}",
                   {"pfa": args.pfa, "split": split, "trials": args.trials, "seed": args.seed,
                    "datasets": [str(p) for p in paths], "calib": args.calib, "model": args.model},
                   {"model_sha256": file_sha256(args.model),
                    "dataset_checksums_sha256": [d.checksum() for d in datasets]},
                   [out / "report.csv", out / "raw_scores.bin"] + figures, started)
    print(json.dumps({"rows": len(rep.rows), "report": str(out / "report.csv")}))


def cmd_bound(args):
    started = time.time()
    cfg = _sim_config(args)
    rows = bound_table(args.snr, args.pfa, build_pulse_template(cfg), args.trials, cfg.rng_seed)
    out = Path(args.out)
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "bound.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    write_bound_csv(out, rows)
    manifest = write_manifest(out.parent, "bound",
                              {"pfa": args.pfa, "snr_db": [float(s) for s in args.snr],
                               "trials": args.trials, "sim": cfg.to_dict()},
                              _inputs(args), [out], started)
    if out.name != "bound.csv":
        manifest.rename(out.with_name(out.stem + ".manifest.json"))
    print(json.dumps({"rows": len(rows), "out": str(out)}))


def cmd_pipeline(args):
    sim = _sim_config(args)
    model = _model_config(args)
    data = _section(args, "pipeline")
    known = {f.name for f in fields(PipelineConfig)} - {"sim", "model"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown pipeline fields: {sorted(unknown)}")
    cfg = PipelineConfig(sim=sim, model=model, **data)
    if args.traces is not None:
        cfg = replace(cfg, n_traces=args.traces)
    if args.eval_traces is not None:
        cfg = replace(cfg, n_eval_traces=args.eval_traces)
    rep, _, history = run_pipeline(cfg, args.out, save_datasets=args.save_datasets,
                                   verbose=args.verbose)
    print(json.dumps({"rows": len(rep.rows), "epochs": len(history.rows),
                      "report": str(Path(args.out) / "report.csv")}))


# parser --------------------------------------------------------------------

def _add_sim_flags(p, traces=True):
    p.add_argument("--config", help="TOML or JSON config file")
    p.add_argument("--seed", type=int, help="simulation rng_seed")
    if traces:
        p.add_argument("--traces", type=int, required=True)


def _add_model_flags(p):
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--lambda", dest="lam", type=_lambda, help="loss weights l1,l2,l3")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otdrnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"otdrnet {__version__}")
    parser.add_argument("--threads", type=int, help="cap on BLAS threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate traces")
    _add_sim_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="build datasets")
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    b = dsub.add_parser("build", help="windowed dataset with 60/20/20 split")
    _add_sim_flags(b)
    b.add_argument("--out", required=True)
    b.add_argument("--scaling", choices=["linear", "asinh"], default="linear")
    b.set_defaults(func=cmd_dataset_build)
    v = dsub.add_parser("variants", help="whole, partial and mixed evaluation sets")
    _add_sim_flags(v)
    v.add_argument("--out", required=True)
    v.add_argument("--kind", action="append", choices=["whole", "partial", "mixed"])
    v.add_argument("--scaling", choices=["linear", "asinh"], default="linear")
    v.set_defaults(func=cmd_dataset_variants)

    p = sub.add_parser("train", help="train the CNN")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="model random_state")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluation sweeps")
    p.add_argument("what", choices=["detect", "localize", "reflectance", "compare"])
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, action="append")
    p.add_argument("--calib", help="dataset whose val negatives calibrate thresholds")
    p.add_argument("--split", choices=["train", "val", "test", "all"])
    p.add_argument("--pfa", type=float, default=0.1)
    p.add_argument("--pfa-levels", type=float, nargs="+")
    p.add_argument("--trials", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bound", help="closed-form bound and matched-filter oracle")
    p.add_argument("--pfa", type=float, default=0.1)
    p.add_argument("--snr", type=_snr_range, default=_snr_range("0:30:0.5"), help="lo:hi:step in dB")
    p.add_argument("--trials", type=int, default=20000)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="CSV file or directory")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("pipeline", help="simulate, build, train and evaluate in one run")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--traces", type=int)
    p.add_argument("--eval-traces", type=int)
    p.add_argument("--save-datasets", action="store_true")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        limits = nullcontext()
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits
            limits = threadpool_limits(limits=args.threads)
        with limits:
            args.func(args)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = _exit_code(exc)
        print(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}),
              file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
