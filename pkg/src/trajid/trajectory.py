"""Logged trajectories and their CSV form."""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import JointState

BASE_COLUMNS = ("t", "q_des", "q", "qdot")
TRUTH_COLUMNS = ("q_true", "qdot_true")


class TrajectoryFormatError(ValueError):
    pass


def derive_rng(seed: int, tag: str) -> np.random.Generator:
    """Independent generator for one component, from the global seed and a tag."""
    return np.random.default_rng([int(seed), zlib.crc32(tag.encode())])


@dataclass
class Trajectory:
    """Time-aligned (t, q_des, q, qdot) log at a fixed step.

    ``q_true``/``qdot_true`` hold the noiseless channel when the data is
    synthetic; they are never used as rollout inputs.
    """

    t: np.ndarray
    q_des: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    q_true: np.ndarray | None = None
    qdot_true: np.ndarray | None = None

    def __post_init__(self):
        for name in ("t", "q_des", "q", "qdot", "q_true", "qdot_true"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, np.asarray(value, dtype=float))
        n = len(self.t)
        lengths = {len(getattr(self, c)) for c in BASE_COLUMNS}
        for c in TRUTH_COLUMNS:
            if getattr(self, c) is not None:
                lengths.add(len(getattr(self, c)))
        if lengths != {n}:
            raise TrajectoryFormatError("trajectory columns have different lengths")

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    @property
    def has_truth(self) -> bool:
        return self.q_true is not None

    def initial_state(self) -> JointState:
        return JointState(float(self.q[0]), float(self.qdot[0]))

    def reference_q(self, use_truth=True) -> np.ndarray:
        return self.q_true if use_truth and self.has_truth else self.q

    def slice(self, start, stop) -> "Trajectory":
        cut = lambda a: None if a is None else a[start:stop]  # noqa: E731
        return Trajectory(cut(self.t), cut(self.q_des), cut(self.q), cut(self.qdot),
                          cut(self.q_true), cut(self.qdot_true))

    def check_uniform(self, tol=1e-9):
        if len(self.t) < 2:
            return
        d = np.diff(self.t)
        if np.any(d <= 0):
            raise TrajectoryFormatError("t must be strictly increasing")
        if np.max(np.abs(d - d[0])) > tol:
            raise TrajectoryFormatError("t must be uniformly spaced")

    # -- CSV -----------------------------------------------------------------

    def to_csv(self, path=None) -> str:
        columns = list(BASE_COLUMNS) + (list(TRUTH_COLUMNS) if self.has_truth else [])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        data = np.column_stack([getattr(self, c) for c in columns])
        for row in data:
            writer.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, tol=1e-9) -> "Trajectory":
        if isinstance(path_or_text, Path) or "\n" not in str(path_or_text):
            text = Path(path_or_text).read_text()
        else:
            text = path_or_text
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise TrajectoryFormatError("empty trajectory file")
        header = [h.strip() for h in rows[0]]
        if tuple(header[:4]) != BASE_COLUMNS or header[4:] not in ([], list(TRUTH_COLUMNS)):
            raise TrajectoryFormatError(
                f"bad header {header}; expected t,q_des,q,qdot[,q_true,qdot_true]")
        body = rows[1:]
        for k, row in enumerate(body):
            if len(row) != len(header):
                raise TrajectoryFormatError(f"row {k + 1} has {len(row)} columns, "
                                            f"expected {len(header)}")
        try:
            data = np.array(body, dtype=float).reshape(len(body), len(header))
        except ValueError as exc:
            raise TrajectoryFormatError(f"non-numeric value: {exc}") from None
        cols = {h: data[:, i] for i, h in enumerate(header)}
        traj = cls(**cols)
        traj.check_uniform(tol)
        return traj
