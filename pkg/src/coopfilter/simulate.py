"""Trajectory generation, delayed observation streams, scenario generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import StreamHorizonError
from .model import SystemModel


def noise_factor(S) -> np.ndarray:
    """F with F F^T = S for a symmetric PSD ``S`` (Cholesky, eigh fallback)."""
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return S.reshape(S.shape[0], S.shape[0])
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class Trajectory:
    """States and both observation channels, time along axis 0.

    Arrays are ``(N, dim)`` for one run or ``(N, B, dim)`` for ``B``
    independent runs simulated together. ``x`` is ``None`` only when the
    states were never known.
    """

    x: np.ndarray | None
    y: np.ndarray
    y_e: np.ndarray
    seed: int | None = None
    model_free_only: bool = False

    def __post_init__(self):
        if len(self.y) != len(self.y_e) or (self.x is not None and len(self.x) != len(self.y)):
            raise ValueError("trajectory arrays must share their length")

    def __len__(self):
        return len(self.y)

    @property
    def y_c(self) -> np.ndarray:
        return np.concatenate([self.y, self.y_e], axis=-1)


def gen_trajectory(model: SystemModel, N: int, seed: int, x0=None, batch: int | None = None
                   ) -> Trajectory:
    """Simulate ``N`` steps of the model from ``x0`` (default zero).

    Standard normals for w, v, v^e are drawn up front from
    ``np.random.default_rng(seed)`` in that order, so a seed fixes the run.
    With ``batch=B`` the arrays gain a run axis: ``(N, B, dim)``.
    """
    if N <= 0:
        raise ValueError(f"trajectory length must be positive, got {N}")
    rng = np.random.default_rng(seed)
    lead = (N,) if batch is None else (N, batch)
    n, m, me = model.n, model.m, model.m_e
    w = rng.standard_normal(lead + (n,)) @ noise_factor(model.Q).T
    v = rng.standard_normal(lead + (m,)) @ noise_factor(model.R).T
    ve = rng.standard_normal(lead + (me,)) @ noise_factor(model.R_e).T

    x = np.empty(lead + (n,))
    x_k = np.zeros(lead[1:] + (n,)) if x0 is None else np.broadcast_to(
        np.asarray(x0, dtype=float), lead[1:] + (n,)).copy()
    AT = model.A.T
    for k in range(N):
        x[k] = x_k
        x_k = x_k @ AT + w[k]
    y = x @ model.C.T + v
    y_e = x @ model.C_e.T + ve
    return Trajectory(x=x, y=y, y_e=y_e, seed=seed)


class ObservationStream:
    """Cursor over a trajectory that hides externals newer than ``k - d``.

    At cursor position ``k`` the local observations ``y_0..y_k`` and the
    externals ``y^e_0..y^e_{k-d}`` are readable. The cursor starts at
    ``k = -1`` (nothing revealed) and moves with :meth:`advance`.
    """

    def __init__(self, trajectory: Trajectory, d: int):
        if d < 0:
            raise ValueError(f"delay must be nonnegative, got {d}")
        self.trajectory = trajectory
        self.d = int(d)
        self.k = -1

    def __len__(self):
        return len(self.trajectory)

    @property
    def exhausted(self) -> bool:
        return self.k >= len(self.trajectory) - 1

    def advance(self, to: int | None = None) -> int:
        target = self.k + 1 if to is None else int(to)
        if target < self.k:
            raise ValueError("stream cursor cannot move backwards")
        if target >= len(self.trajectory):
            raise StreamHorizonError(
                f"stream has {len(self.trajectory)} steps; cannot advance to {target}")
        self.k = target
        return self.k

    def local(self, i: int) -> np.ndarray:
        if i < 0 or i > self.k:
            raise StreamHorizonError(f"local observation {i} not readable at step {self.k}")
        return self.trajectory.y[i]

    def external(self, i: int) -> np.ndarray:
        if i < 0 or i > self.k - self.d:
            raise StreamHorizonError(
                f"external observation {i} not readable at step {self.k} with delay {self.d}")
        return self.trajectory.y_e[i]

    def centralized(self, i: int) -> np.ndarray:
        return np.concatenate([self.local(i), self.external(i)])

    @property
    def readable_local(self) -> np.ndarray:
        return self.trajectory.y[: self.k + 1]

    @property
    def readable_external(self) -> np.ndarray:
        return self.trajectory.y_e[: max(self.k - self.d + 1, 0)]


def stream(trajectory: Trajectory, d: int) -> ObservationStream:
    return ObservationStream(trajectory, d)


def gen_consensus_system(n: int, seed: int, r: float = 0.01) -> SystemModel:
    """Random row-stochastic ``A`` with ``C = e_1``, ``C_e = e_2``.

    Q = S S^T + 1e-3 I with S standard normal, so Q is PD.
    """
    if n < 2:
        raise ValueError("consensus system needs n >= 2")
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, size=(n, n))
    A /= A.sum(axis=1, keepdims=True)
    S = rng.standard_normal((n, n))
    Q = S @ S.T + 1e-3 * np.eye(n)
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    C_e = np.zeros((1, n))
    C_e[0, 1] = 1.0
    return SystemModel(A=A, C=C, C_e=C_e, Q=Q, R=[[r]], R_e=[[r]])


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_trajectory_csv(path, sigma: float, seed: int) -> Trajectory:
    """Read states from CSV and synthesize both sensors as ``x + noise``.

    Each row is one time step, each column a state coordinate. A header
    row is detected by a non-numeric first row. ``sigma`` is the noise
    *variance*: v, v^e ~ N(0, sigma I). The model is unknown, so the result
    is flagged ``model_free_only``.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = len(rows[0])
    data = []
    for lineno, r in enumerate(rows, start=1):
        if len(r) != width:
            raise ValueError(f"{path}: ragged row {lineno} has {len(r)} cells, expected {width}")
        try:
            data.append([float(c) for c in r])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric cell in row {lineno}: {exc}") from exc
    x = np.asarray(data)
    if sigma < 0:
        raise ValueError("noise variance must be nonnegative")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(sigma)
    y = x + scale * rng.standard_normal(x.shape)
    y_e = x + scale * rng.standard_normal(x.shape)
    return Trajectory(x=x, y=y, y_e=y_e, seed=seed, model_free_only=True)
