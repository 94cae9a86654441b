"""Held-out rollout error and the ablation studies built on it."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PlantParams, RolloutDivergence, StepConfig, rollout, stack_states
from .trajectory import Trajectory


@dataclass(frozen=True)
class EvalConfig:
    horizon: int | None = None   # steps; None = whole trajectory
    window: int = 500            # steps per dispersion window (1 s at 500 Hz)
    use_truth: bool = True       # score against the noiseless channel when available

    def __post_init__(self):
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class EvalResult:
    mae: float
    window_mae: np.ndarray
    q_sim: np.ndarray | None = None
    divergence_step: int | None = None


def simulate_trajectory(model, traj: Trajectory, plant: PlantParams, horizon=None,
                        cfg: StepConfig | None = None):
    """Open-loop rollout from the measured initial state only."""
    cfg = cfg or StepConfig(traj.dt)
    H = len(traj) - 1 if horizon is None else min(horizon, len(traj) - 1)
    states = rollout(traj.initial_state(), traj.q_des[:H], model, plant, cfg)
    return stack_states(states)


def eval_mae(model, traj: Trajectory, plant: PlantParams = PlantParams(),
             cfg: EvalConfig = EvalConfig()) -> EvalResult:
    """Mean absolute position error of a full open-loop rollout.

    A divergent rollout reports ``mae = inf`` and the offending step. Models
    with a finite ``max_steps`` (torque sequences) are scored over at most
    that many steps.
    """
    H = len(traj) - 1 if cfg.horizon is None else min(cfg.horizon, len(traj) - 1)
    H = min(H, getattr(model, "max_steps", H))
    try:
        q_sim, _ = simulate_trajectory(model, traj, plant, H)
    except RolloutDivergence as exc:
        return EvalResult(math.inf, np.array([math.inf]), None, exc.step_index)
    err = np.abs(q_sim - traj.reference_q(cfg.use_truth)[1:H + 1])
    windows = [err[i:i + cfg.window] for i in range(0, H, cfg.window)]
    return EvalResult(float(err.mean()), np.array([w.mean() for w in windows]), q_sim)


@dataclass
class ComparisonReport:
    """Models ranked by held-out MAE.

    ``fit_seconds`` is kept on the rows but left out of the CSV so that the
    file is reproducible byte for byte.
    """

    rows: list = field(default_factory=list)   # dicts: model, mae, mae_std, fit_seconds
    windows: dict = field(default_factory=dict)

    def add(self, name, result: EvalResult, fit_seconds=math.nan):
        w = result.window_mae
        self.rows.append({"model": name, "mae": result.mae,
                          "mae_std": float(np.std(w)) if np.all(np.isfinite(w)) else math.inf,
                          "fit_seconds": fit_seconds})
        self.windows[name] = w
        self.rows.sort(key=lambda r: (r["mae"], r["model"]))

    @property
    def ranking(self):
        return [r["model"] for r in self.rows]

    def mae(self, name) -> float:
        return next(r["mae"] for r in self.rows if r["model"] == name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "model", "mae", "mae_std"])
        for i, r in enumerate(self.rows, 1):
            w.writerow([i, r["model"], repr(r["mae"]), repr(r["mae_std"])])
        return buf.getvalue()

    def to_long_csv(self) -> str:
        """One row per (model, window, metric); plot-ready."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "window", "metric", "value"])
        for r in self.rows:
            for k, v in enumerate(self.windows[r["model"]]):
                w.writerow([r["model"], k, "mae", repr(float(v))])
        return buf.getvalue()


# -- studies -------------------------------------------------------------------------
#
# A "family" is a callable ``fit(train, test, **overrides) -> (model, FitReport)``;
# see ``estimators.family`` for the stock ones. Jobs are independent, so they can
# be farmed out to worker processes; results are keyed by configuration and
# assembled in a fixed order.

def _run_jobs(fn, jobs, workers=1):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _sweep_job(family, train, test, plant, eval_cfg, key, overrides):
    try:
        model, report = family(train, test, **overrides)
    except Exception as exc:
        raise type(exc)(f"[{key}] {exc}") from exc
    return key, eval_mae(model, test, plant, eval_cfg).mae, report


def run_w_sweep(family, train, test, alphas=(0.0, 0.25, 0.5, 0.75, 1.0),
                plant=PlantParams(), eval_cfg=EvalConfig(), workers=1):
    """Validation MAE of ``family`` refitted at each W = diag(alpha, 1 - alpha)."""
    if any(not 0 <= a <= 1 for a in alphas):
        raise ValueError("alphas must lie in [0, 1]")
    jobs = [(family, train, test, plant, eval_cfg, f"alpha={a}", {"alpha": a}) for a in alphas]
    out = _run_jobs(_sweep_job, jobs, workers)
    return [{"alpha": a, "mae": mae, "best_loss": rep.best_loss, "fit_seconds": rep.wall_clock}
            for a, (_, mae, rep) in zip(alphas, out)]


def run_horizon_ablation(family, train, test, horizons=(1, 2, 3, 4), plant=PlantParams(),
                         eval_cfg=EvalConfig(), workers=1):
    jobs = [(family, train, test, plant, eval_cfg, f"horizon={h}", {"horizon": h})
            for h in horizons]
    out = _run_jobs(_sweep_job, jobs, workers)
    return [{"horizon": h, "mae": mae, "best_loss": rep.best_loss, "fit_seconds": rep.wall_clock}
            for h, (_, mae, rep) in zip(horizons, out)]


@dataclass
class StabilityResult:
    params: np.ndarray          # (runs, P) best parameters
    best_losses: np.ndarray     # (runs,)
    traces: list                # FitReports
    names: tuple = ()

    @property
    def mean(self):
        return self.params.mean(axis=0)

    @property
    def std(self):
        return self.params.std(axis=0, ddof=1)

    @property
    def relative_std(self):
        return self.std / np.abs(self.mean)

    @property
    def loss_relative_dispersion(self):
        return float(np.std(self.best_losses, ddof=1) / abs(np.mean(self.best_losses)))

    def table(self):
        rows = []
        for k, (p, loss) in enumerate(zip(self.params, self.best_losses)):
            row = {"run": k, "best_loss": float(loss)}
            row.update({n: float(v) for n, v in zip(self.names, p)})
            rows.append(row)
        return rows

    def trace_quantiles(self, key="losses", q=(0.05, 0.25, 0.5, 0.75, 0.95)):
        """Per-epoch quantiles across runs of a FitReport trace (ragged runs padded)."""
        traces = [np.asarray(getattr(r, key), dtype=float) for r in self.traces]
        E = max(len(t) for t in traces)
        M = np.full((len(traces), E), np.nan)
        for i, t in enumerate(traces):
            M[i, :len(t)] = t
        with np.errstate(all="ignore"):
            return np.nanquantile(M, q, axis=0)


def _stability_job(family, train, test, seed, overrides):
    model, report = family(train, test, seed=seed, **overrides)
    return report


def run_stability_study(family, train, test=None, n_runs=25, epochs=3000, seeds=None,
                        workers=1, **overrides) -> StabilityResult:
    """Independent fits that vary batch sampling and initialization via the seed."""
    if n_runs < 2:
        raise ValueError("a stability study needs at least two runs")
    seeds = list(range(n_runs)) if seeds is None else list(seeds)[:n_runs]
    jobs = [(family, train, test, s, dict(overrides, epochs=epochs)) for s in seeds]
    reports = _run_jobs(_stability_job, jobs, workers)
    names = getattr(reports[0].model, "free", ())
    return StabilityResult(np.array([r.model.get_vector() for r in reports]),
                           np.array([r.best_loss for r in reports]), reports, tuple(names))


__all__ = [
    "EvalConfig", "EvalResult", "ComparisonReport", "StabilityResult", "eval_mae",
    "simulate_trajectory", "run_w_sweep", "run_horizon_ablation", "run_stability_study",
]

