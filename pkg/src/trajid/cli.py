"""Command-line front end: ``trajid {generate,identify,evaluate,ablate}``.

Every verb takes ``--config`` (INI, see ``config.py``), ``--seed`` (overrides
``[run] seed``), ``--out`` (output directory) and ``--workers``. Each run
writes ``config.resolved.ini`` next to its outputs; feeding that file back
with ``--config`` reproduces the run. Wall-clock times go to ``timing.txt``
only, so every other output file is byte-identical across re-runs.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure
(divergent fit or rollout, unwritable output).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import serialize
from .actuators import TorqueSequenceModel
from .config import MODEL_CHOICES, ConfigError, ExperimentConfig, load_config, to_ini, validate
from .dynamics import RolloutDivergence
from .estimators import (ESTIMATORS, BenchSup, Family, NNES, ParamES, TorqueOracle, TrajIDNN,
                         TrajIDParam, TrajIDResidual)
from .evaluation import (ComparisonReport, eval_mae, run_horizon_ablation,
                         run_stability_study, run_w_sweep)
from .excitation import default_datasets, stand_sweep
from .identification import FitDivergence, bench_mse, oracle_length
from .trajectory import Trajectory, TrajectoryFormatError, derive_rng

log = logging.getLogger("trajid")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

TRAIN_FILE, TEST_FILE, STAND_FILE = "train.csv", "test.csv", "stand.csv"
HIDDEN_FILE, MANIFEST_FILE = "hidden_model.txt", "manifest.txt"
RESOLVED_FILE, TIMING_FILE = "config.resolved.ini", "timing.txt"
ZOO = ("trajid-param", "trajid-nn", "param-es", "torque-oracle", "bench-sup")


class UsageError(Exception):
    """Bad flags, missing inputs or incompatible files (exit code 2)."""


# -- configuration -------------------------------------------------------------------

def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    changes = {}
    if getattr(args, "model", None):
        changes["model"] = {"kind": args.model}
    if getattr(args, "horizon", None) is not None:
        changes["segmentation"] = {"segment_length": args.horizon}
    if getattr(args, "alpha", None) is not None:
        changes["weights"] = {"alpha": args.alpha}
    if getattr(args, "epochs", None) is not None:
        changes["optimizer"] = {"max_epochs": args.epochs}
        changes["es"] = {"max_evaluations": args.epochs}
    ablation = {}
    if getattr(args, "alphas", None):
        ablation["alphas"] = args.alphas
    if getattr(args, "horizons", None):
        ablation["horizons"] = args.horizons
    if getattr(args, "runs", None) is not None:
        ablation["runs"] = args.runs
    if getattr(args, "ablation_epochs", None) is not None:
        ablation["epochs"] = args.ablation_epochs
    if ablation:
        changes["ablation"] = ablation
    try:
        cfg = cfg.replace(**changes)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def estimator_from_config(cfg: ExperimentConfig, kind: str | None = None):
    """The configured estimator for ``kind`` (default ``[model] kind``)."""
    kind = kind or cfg.model.kind
    seg, opt, es = cfg.segmentation, cfg.optimizer, cfg.es
    seg_opts = {"overlap": seg.overlap, "full_batch": seg.full_batch}
    adam_opts = {"beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                 "min_delta": opt.min_delta, "eval_every": opt.eval_every}
    es_opts = {"min_delta": es.min_delta, "eval_every": es.eval_every}
    common = {"seed": cfg.seed, "plant": cfg.plant}
    grad = dict(alpha=cfg.weights.alpha, horizon=seg.segment_length,
                minibatch_size=seg.minibatch_size, learning_rate=opt.learning_rate,
                max_epochs=opt.max_epochs, patience=opt.patience,
                options={**seg_opts, **adam_opts}, **common)
    evo = dict(alpha=cfg.weights.alpha, horizon=seg.segment_length,
               minibatch_size=seg.minibatch_size, sigma0=es.sigma0, population=es.population,
               max_evaluations=es.max_evaluations, patience=es.patience,
               options={**seg_opts, **es_opts}, **common)
    if kind == "trajid-param":
        return TrajIDParam(init=cfg.model.init, **grad)
    if kind == "trajid-nn":
        return TrajIDNN(hidden_sizes=cfg.model.hidden_sizes, **grad)
    if kind == "trajid-residual":
        return TrajIDResidual(hidden_sizes=cfg.model.hidden_sizes, **grad)
    if kind == "param-es":
        return ParamES(init=cfg.model.init, **evo)
    if kind == "nn-es":
        return NNES(hidden_sizes=cfg.model.hidden_sizes, **evo)
    if kind == "torque-oracle":
        return TorqueOracle(horizon=seg.segment_length, alpha=cfg.weights.alpha,
                            learning_rate=opt.learning_rate, max_epochs=opt.max_epochs,
                            patience=opt.patience, options=adam_opts, **common)
    if kind == "bench-sup":
        st = cfg.stand
        return BenchSup(hidden_sizes=cfg.model.bench_hidden_sizes, Kp=st.pwm_kp, Kd=st.pwm_kd,
                        learning_rate=opt.learning_rate, max_epochs=st.epochs,
                        patience=opt.patience, batch_size=st.batch_size,
                        options=adam_opts, **common)
    raise ConfigError(f"unknown model kind {kind!r}; choose from {', '.join(ESTIMATORS)}")


# -- file helpers ------------------------------------------------------------------

def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _write(path: Path, text: str):
    path.write_text(text)
    log.info("wrote %s", path)


def _write_timing(out: Path, **entries):
    _write(out / TIMING_FILE, "".join(f"{k}: {v:.3f}\n" for k, v in entries.items()))


def _read_trajectory(path: Path) -> Trajectory:
    try:
        return Trajectory.from_csv(Path(path))
    except FileNotFoundError:
        raise UsageError(f"dataset file {path} not found") from None
    except TrajectoryFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _read_stand(path: Path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except FileNotFoundError:
        raise UsageError(f"stand file {path} not found") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if data.shape[1] != 3:
        raise UsageError(f"{path}: expected columns u,qdot,tau")
    return data


def _stand_csv(data: np.ndarray) -> str:
    lines = ["u,qdot,tau"] + [",".join(repr(float(v)) for v in row) for row in data]
    return "\n".join(lines) + "\n"


def _load_model(path):
    try:
        return serialize.load_model(path)
    except FileNotFoundError:
        raise UsageError(f"model file {path} not found") from None
    except serialize.ModelFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _manifest(cfg: ExperimentConfig, train, test, stand, test_seed) -> str:
    hidden = cfg.hidden
    lines = ["trajid-manifest 1", f"seed: {cfg.seed}", f"test_seed: {test_seed}",
             f"dt: {cfg.data.dt!r}", f"train_rows: {len(train)}", f"test_rows: {len(test)}",
             f"stand_rows: {len(stand)}"]
    lines += [f"hidden.{k}: {getattr(hidden, k)!r}" if isinstance(getattr(hidden, k), float)
              else f"hidden.{k}: {getattr(hidden, k)}" for k in hidden.__dataclass_fields__]
    return "\n".join(lines) + "\n"


def _stand_data(cfg: ExperimentConfig) -> np.ndarray:
    servo = cfg.hidden.build(cfg.data.dt)
    return stand_sweep(cfg.hidden, duties=np.linspace(-1.0, 1.0, cfg.stand.n_duties),
                       n_speeds=cfg.stand.n_speeds,
                       load_limit=cfg.stand.load_fraction * servo.stall,
                       torque_noise=cfg.stand.torque_noise, seed=cfg.seed)


# -- verbs ------------------------------------------------------------------------------

def cmd_generate(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    train, test = default_datasets(cfg.seed, cfg.hidden, cfg.plant, cfg.data.train_duration,
                                   cfg.data.test_duration, cfg.data.dt,
                                   **cfg.excitation.__dict__)
    test_seed = int(derive_rng(cfg.seed, "test-trajectory").integers(2**31))
    stand = _stand_data(cfg) if cfg.hidden.kind == "servo" else np.zeros((0, 3))
    _write(out / TRAIN_FILE, train.to_csv())
    _write(out / TEST_FILE, test.to_csv())
    _write(out / STAND_FILE, _stand_csv(stand))
    serialize.save_model(cfg.hidden.build(cfg.data.dt), out / HIDDEN_FILE,
                         meta={"role": "hidden reference model"})
    _write(out / MANIFEST_FILE, _manifest(cfg, train, test, stand, test_seed))
    _write(out / RESOLVED_FILE, to_ini(cfg))
    _write_timing(out, generate_seconds=time.perf_counter() - t0)
    return EXIT_OK


def _fit(cfg: ExperimentConfig, kind: str, data: Path, init_model=None):
    """Fit one zoo member on the dataset directory; returns the fitted estimator."""
    est = estimator_from_config(cfg, kind)
    if kind == "torque-oracle":
        X = _read_trajectory(data / TEST_FILE)
        if init_model is not None and (not isinstance(init_model, TorqueSequenceModel)
                                       or len(init_model.tau) != oracle_length(X, est.horizon)):
            raise UsageError("--init-from model does not match the oracle's torque layout")
    elif kind == "bench-sup":
        X = _read_stand(data / STAND_FILE)
        if len(X) == 0:
            raise UsageError("the dataset has no stand data (bench-sup needs a servo hidden model)")
    else:
        X = _read_trajectory(data / TRAIN_FILE)
    est.fit(X, init_model=init_model)
    return est


def _model_names(model):
    return getattr(model, "free", ())


def cmd_identify(args, cfg: ExperimentConfig) -> int:
    data = Path(args.data)
    kind = cfg.model.kind
    init_model = None
    if args.init_from:
        init_model, _ = _load_model(args.init_from)
        expected = {"trajid-param": "pd", "param-es": "pd", "trajid-nn": "mlp", "nn-es": "mlp",
                    "trajid-residual": "residual", "torque-oracle": "torque_sequence",
                    "bench-sup": "bench"}[kind]
        if init_model.kind != expected:
            raise UsageError(f"--init-from holds a {init_model.kind!r} model; "
                             f"{kind} needs {expected!r}")
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    est = _fit(cfg, kind, data, init_model)
    seconds = time.perf_counter() - t0
    meta = {"estimator": kind, "seed": cfg.seed}
    report = est.report_
    if report is not None:
        meta["best_loss"] = report.best_loss
        _write(out / "fit_report.csv", serialize.report_csv(report, _model_names(report.model)))
        _write(out / "summary.txt", serialize.report_summary(
            report, _model_names(report.model), {"estimator": kind, "seed": cfg.seed}))
    else:
        stand = _read_stand(data / STAND_FILE)
        mse = bench_mse(est.model_, stand)
        meta["stand_mse"] = mse
        _write(out / "summary.txt", f"model_kind: {est.model_.kind}\n"
               f"n_params: {est.model_.n_params}\nstand_mse: {mse!r}\n"
               f"estimator: {kind}\nseed: {cfg.seed}\n")
    serialize.save_model(est.model_, out / "model.txt", meta)
    _write(out / RESOLVED_FILE, to_ini(cfg))
    _write_timing(out, fit_seconds=seconds)
    return EXIT_OK


def _check_compatible(name, model, test: Trajectory):
    if isinstance(model, TorqueSequenceModel):
        need = oracle_length(test, model.horizon)
        if len(model.tau) != need:
            raise UsageError(f"{name}: torque sequence of length {len(model.tau)} does not "
                             f"belong to this test trajectory ({need} steps at horizon "
                             f"{model.horizon})")


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    if not args.models and not args.fit_zoo:
        raise UsageError("give model files to evaluate, or --fit-zoo")
    data = Path(args.data) if args.data else None
    test_path = Path(args.test) if args.test else (data / TEST_FILE if data else None)
    if test_path is None:
        raise UsageError("--data or --test is required")
    test = _read_trajectory(test_path)
    out = _out_dir(args.out)
    report = ComparisonReport()
    timing = {}
    entries = []
    for path in args.models or []:
        model, meta = _load_model(path)
        name = meta.get("estimator") or Path(path).stem
        if any(n == name for n, _ in entries):
            name = f"{name}:{Path(path)}"
        _check_compatible(name, model, test)
        entries.append((name, model))
    if args.fit_zoo:
        if data is None:
            raise UsageError("--fit-zoo needs --data")
        models_dir = _out_dir(out / "models")
        for kind in args.zoo:
            t0 = time.perf_counter()
            log.info("fitting %s", kind)
            est = _fit(cfg, kind, data)
            timing[f"{kind}_fit_seconds"] = time.perf_counter() - t0
            serialize.save_model(est.model_, models_dir / f"{kind}.txt",
                                 {"estimator": kind, "seed": cfg.seed})
            entries.append((kind, est.model_))
    for name, model in entries:
        report.add(name, eval_mae(model, test, cfg.plant, cfg.evaluation))
    _write(out / "comparison.csv", report.to_csv())
    _write(out / "comparison_long.csv", report.to_long_csv())
    _write(out / RESOLVED_FILE, to_ini(cfg))
    if timing:
        _write_timing(out, **timing)
    return EXIT_OK


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    data = Path(args.data)
    train = _read_trajectory(data / TRAIN_FILE)
    test = _read_trajectory(data / TEST_FILE)
    out = _out_dir(args.out)
    ab = cfg.ablation
    kinds = args.models or (["trajid-param", "torque-oracle"] if args.kind != "stability"
                            else [cfg.model.kind])
    for kind in kinds:
        if kind == "bench-sup":
            raise UsageError("bench-sup is not fitted on trajectories and cannot be ablated")
    timing = {}
    t0 = time.perf_counter()
    if args.kind in ("w-sweep", "horizon"):
        rows = []
        key = "alpha" if args.kind == "w-sweep" else "horizon"
        for kind in kinds:
            family = Family(estimator_from_config(cfg, kind))
            t1 = time.perf_counter()
            if args.kind == "w-sweep":
                result = run_w_sweep(family, train, test, ab.alphas, cfg.plant, cfg.evaluation,
                                     args.workers)
            else:
                result = run_horizon_ablation(family, train, test, ab.horizons, cfg.plant,
                                              cfg.evaluation, args.workers)
            timing[f"{kind}_seconds"] = time.perf_counter() - t1
            rows += [{"model": kind, key: r[key], "mae": r["mae"], "best_loss": r["best_loss"]}
                     for r in result]
        name = "w_sweep.csv" if args.kind == "w-sweep" else "horizon.csv"
        _write(out / name, serialize.rows_csv(rows, ["model", key, "mae", "best_loss"]))
    else:
        if len(kinds) != 1:
            raise UsageError("stability runs one model at a time")
        family = Family(estimator_from_config(cfg, kinds[0]))
        seeds = [cfg.seed + k for k in range(ab.runs)]
        study = run_stability_study(family, train, test, ab.runs, ab.epochs, seeds,
                                    args.workers)
        rows = study.table()
        for row, seed in zip(rows, seeds):
            row["seed"] = seed
        columns = ["run", "seed", "best_loss", *study.names]
        _write(out / "stability.csv", serialize.rows_csv(rows, columns))
        q = (0.05, 0.25, 0.5, 0.75, 0.95)
        quant = study.trace_quantiles("losses", q)
        qrows = [{"epoch": e + 1, **{f"q{int(p * 100):02d}": float(quant[i, e])
                                     for i, p in enumerate(q)}} for e in range(quant.shape[1])]
        _write(out / "stability_quantiles.csv", serialize.rows_csv(qrows))
        lines = [f"model: {kinds[0]}", f"runs: {ab.runs}", f"epochs: {ab.epochs}",
                 f"loss_relative_dispersion: {float(study.loss_relative_dispersion)!r}"]
        for n, m, s, r in zip(study.names, study.mean, study.std, study.relative_std):
            lines += [f"{n}.mean: {float(m)!r}", f"{n}.std: {float(s)!r}",
                      f"{n}.relative_std: {float(r)!r}"]
        _write(out / "stability_summary.txt", "\n".join(lines) + "\n")
    timing["total_seconds"] = time.perf_counter() - t0
    _write(out / RESOLVED_FILE, to_ini(cfg))
    _write_timing(out, **timing)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _kind_list(text):
    kinds = [v.strip() for v in text.split(",") if v.strip()]
    bad = [k for k in kinds if k not in MODEL_CHOICES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown model kind(s) {', '.join(bad)}; "
                                         f"choose from {', '.join(MODEL_CHOICES)}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config (defaults when omitted)")
    common.add_argument("--seed", type=int, help="global seed (overrides [run] seed)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker processes for sweeps (default: logical cores; "
                             "results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")

    parser = argparse.ArgumentParser(prog="trajid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common],
                   help="synthesize train/test trajectories and stand data")

    p = sub.add_parser("identify", parents=[common], help="fit one model on a dataset")
    p.add_argument("--data", required=True, help="dataset directory written by generate")
    p.add_argument("--model", choices=MODEL_CHOICES, help="overrides [model] kind")
    p.add_argument("--horizon", type=int, help="segment length N (overrides config)")
    p.add_argument("--alpha", type=float, help="W = diag(alpha, 1 - alpha)")
    p.add_argument("--epochs", type=int, help="epoch / evaluation budget")
    p.add_argument("--init-from", help="model file to continue training from")

    p = sub.add_parser("evaluate", parents=[common], help="rank models by held-out MAE")
    p.add_argument("models", nargs="*", help="model files written by identify")
    p.add_argument("--data", help="dataset directory (test.csv, and training data for --fit-zoo)")
    p.add_argument("--test", help="explicit test trajectory CSV")
    p.add_argument("--fit-zoo", action="store_true", help="fit the model zoo first")
    p.add_argument("--zoo", type=_kind_list, default=list(ZOO),
                   help=f"models for --fit-zoo (default {','.join(ZOO)})")
    p.add_argument("--epochs", type=int, help="epoch / evaluation budget for --fit-zoo")

    p = sub.add_parser("ablate", parents=[common], help="W-sweep, horizon or stability study")
    p.add_argument("kind", choices=("w-sweep", "horizon", "stability"))
    p.add_argument("--data", required=True, help="dataset directory written by generate")
    p.add_argument("--models", type=_kind_list,
                   help="model kinds (default trajid-param,torque-oracle; stability: "
                        "[model] kind)")
    p.add_argument("--alphas", type=_float_list, help="e.g. 0,0.25,0.5,0.75,1")
    p.add_argument("--horizons", type=_int_list, help="e.g. 1,2,3,4")
    p.add_argument("--runs", type=int, help="stability runs")
    p.add_argument("--epochs", dest="ablation_epochs", type=int,
                   help="per-fit epoch budget for the study")
    return parser


COMMANDS = {"generate": cmd_generate, "identify": cmd_identify, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)          # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"trajid {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitDivergence, RolloutDivergence, FloatingPointError) as exc:
        print(f"trajid {args.command}: fit failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"trajid {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"trajid {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
