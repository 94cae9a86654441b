"""Text forms of fitted models and fit reports.

A model file is line oriented::

    trajid-model 1
    kind: pd
    free: kp kv armature
    kp: 3.684
    ...

Floats are written with ``repr`` so a save/load round trip is bit exact.
Lines starting with ``#`` are comments; ``meta.*`` keys carry free-form
provenance (e.g. the recorded training loss) and do not affect the model.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .actuators import (BenchSupModel, Mlp, MlpModel, Normalizer, PdModel, PwmPdParams,
                        ResidualModel, ServoModel, TorqueSequenceModel)

MAGIC = "trajid-model 1"


class ModelFormatError(ValueError):
    pass


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (tuple, list, np.ndarray)):
        return " ".join(_fmt(v) for v in np.ravel(np.asarray(value, dtype=object)))
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, str):
        return value
    return repr(float(value))


def _floats(text: str) -> np.ndarray:
    if not text:
        return np.zeros(0)
    return np.array([float(v) for v in text.split()], dtype=float)


def _opt_float(text: str):
    return None if text == "none" else float(text)


def _mlp_fields(net: Mlp) -> dict:
    if net.normalizer is None:
        raise ModelFormatError("cannot serialize a network without a fitted normalizer")
    return {"sizes": net.sizes, "norm_mean": net.normalizer.mean,
            "norm_scale": net.normalizer.scale, "params": net.get_vector()}


def _mlp_from(fields: dict) -> Mlp:
    sizes = tuple(int(s) for s in fields["sizes"].split())
    norm = Normalizer(_floats(fields["norm_mean"]), _floats(fields["norm_scale"]))
    params = _floats(fields["params"])
    net = Mlp.zeros(sizes, norm)
    if len(params) != net.n_params:
        raise ModelFormatError(f"network {sizes} needs {net.n_params} parameters, "
                               f"file has {len(params)}")
    return net.with_vector(params)


def model_fields(model) -> dict:
    if isinstance(model, PdModel):
        return {"free": model.free, **{f: getattr(model, f) for f in
                                       ("kp", "kv", "armature", "damping", "frictionloss")}}
    if isinstance(model, (MlpModel, ResidualModel)):
        extra = {"kp": model.kp, "kv": model.kv} if isinstance(model, ResidualModel) else {}
        return {**extra, **_mlp_fields(model.net)}
    if isinstance(model, TorqueSequenceModel):
        return {"horizon": model.horizon, "length": len(model.tau), "tau": model.tau}
    if isinstance(model, BenchSupModel):
        return {"Kp": model.pwm.Kp, "Kd": model.pwm.Kd, **_mlp_fields(model.net)}
    if isinstance(model, ServoModel):
        return {k: getattr(model, k) for k in ("Kp", "Kd", "stall", "emf", "armature", "lag", "dt")}
    raise ModelFormatError(f"no text form for {type(model).__name__}")


def model_from_fields(kind: str, f: dict):
    try:
        if kind == "pd":
            return PdModel(float(f["kp"]), float(f["kv"]), float(f["armature"]),
                           _opt_float(f["damping"]), _opt_float(f["frictionloss"]),
                           tuple(f["free"].split()))
        if kind == "mlp":
            return MlpModel(_mlp_from(f))
        if kind == "residual":
            return ResidualModel(_mlp_from(f), float(f["kp"]), float(f["kv"]))
        if kind == "torque_sequence":
            tau = _floats(f["tau"])
            if len(tau) != int(f["length"]):
                raise ModelFormatError("torque sequence length does not match its header")
            return TorqueSequenceModel(tau, int(f["horizon"]))
        if kind == "bench":
            return BenchSupModel(PwmPdParams(float(f["Kp"]), float(f["Kd"])), _mlp_from(f))
        if kind == "servo":
            return ServoModel(**{k: float(f[k]) for k in
                                 ("Kp", "Kd", "stall", "emf", "armature", "lag", "dt")})
    except KeyError as exc:
        raise ModelFormatError(f"model of kind {kind!r} is missing field {exc.args[0]!r}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")


def dumps_model(model, meta: dict | None = None) -> str:
    lines = [MAGIC, f"kind: {model.kind}", f"n_params: {model.n_params}"]
    lines += [f"{k}: {_fmt(v)}" for k, v in model_fields(model).items()]
    lines += [f"meta.{k}: {_fmt(v)}" for k, v in (meta or {}).items()]
    return "\n".join(lines) + "\n"


def parse_model_text(text: str):
    """Return ``(model, meta)`` from the text form."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].strip() != MAGIC:
        raise ModelFormatError(f"not a model file (first line must be {MAGIC!r})")
    fields, meta = {}, {}
    for ln in lines[1:]:
        key, sep, value = ln.partition(":")
        if not sep:
            raise ModelFormatError(f"malformed line {ln[:40]!r}")
        key, value = key.strip(), value.strip()
        (meta if key.startswith("meta.") else fields)[key.removeprefix("meta.")] = value
    kind = fields.pop("kind", None)
    if kind is None:
        raise ModelFormatError("model file has no kind")
    n_params = fields.pop("n_params", None)
    model = model_from_fields(kind, fields)
    if n_params is not None and int(n_params) != model.n_params:
        raise ModelFormatError(f"n_params {n_params} does not match the decoded model "
                               f"({model.n_params})")
    return model, meta


def save_model(model, path, meta=None):
    Path(path).write_text(dumps_model(model, meta))


def load_model(path):
    return parse_model_text(Path(path).read_text())


# -- fit reports --------------------------------------------------------------

def report_csv(report, names=()) -> str:
    """Per-epoch trace: epoch, loss, batch_loss, grad_norm, then one column per parameter.

    Parameter columns are present only when snapshots were kept; they are
    labelled by ``names`` when given, else ``param_0..param_k``.
    """
    n_snap = len(report.params[0]) if report.params else 0
    labels = list(names) if len(names) == n_snap else [f"param_{i}" for i in range(n_snap)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "batch_loss", "grad_norm"] + labels)
    for k, epoch in enumerate(report.epochs):
        row = [epoch, report.losses[k], report.batch_losses[k], report.grad_norms[k]]
        row += list(report.params[k]) if n_snap else []
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def report_summary(report, names=(), extra: dict | None = None) -> str:
    """``key: value`` block; timing lives in a separate file to keep this deterministic."""
    best = report.model.get_vector()
    lines = [f"model_kind: {report.model.kind}",
             f"n_params: {len(best)}",
             f"best_loss: {_fmt(report.best_loss)}",
             f"best_epoch: {report.best_epoch}",
             f"epochs_run: {len(report.epochs)}",
             f"evaluations: {report.evaluations}",
             f"termination: {report.termination}"]
    if len(best) <= 64:
        labels = names if len(names) == len(best) else [f"param_{i}" for i in range(len(best))]
        lines += [f"best.{n}: {_fmt(v)}" for n, v in zip(labels, best)]
    lines += [f"{k}: {_fmt(v)}" for k, v in (extra or {}).items()]
    return "\n".join(lines) + "\n"


def parse_summary(text: str) -> dict:
    out = {}
    for ln in text.splitlines():
        key, sep, value = ln.partition(":")
        if sep:
            out[key.strip()] = value.strip()
    return out


def rows_csv(rows, columns=None) -> str:
    """Plain table writer for sweep/ablation results (list of dicts)."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) if isinstance(r[c], (float, np.floating)) or r[c] is None
                    else r[c] for c in columns])
    return buf.getvalue()



__all__ = ["ModelFormatError", "dumps_model", "parse_model_text", "save_model", "load_model",
           "model_fields", "model_from_fields", "report_csv", "report_summary", "parse_summary",
           "rows_csv"]
