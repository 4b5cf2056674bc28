"""Linear Gaussian system with an external observation channel.

    x_{k+1} = A x_k + w_k,      w_k ~ N(0, Q)
    y_k     = C x_k + v_k,      v_k ~ N(0, R)
    y^e_k   = C_e x_k + v^e_k,  v^e_k ~ N(0, R_e)

The local sensor sees ``y``; an external source provides ``y^e``, possibly
with a delay. Stacking both channels gives the centralized pair
``(C_bar, R_bar)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import DimensionError

RHO_TOL = 1e-9
PBH_EIG_TOL = 1e-8
PBH_RANK_TOL = 1e-10


def _as_matrix(value, name, rows=None, cols=None):
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a flat list is a single row; the empty list is a 0-row matrix
        arr = arr.reshape(0, cols or 0) if arr.size == 0 else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionError(f"{name} has {arr.shape[0]} rows, expected {rows}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SystemModel:
    """State-space model with local and external observation channels.

    Matrices are converted to read-only float arrays on construction and
    their shapes are checked against each other. ``C_e``/``R_e`` may have
    zero rows, meaning there is no external source.
    """

    A: np.ndarray
    C: np.ndarray
    C_e: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    R_e: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        C = _as_matrix(self.C, "C", cols=n)
        C_e = _as_matrix(self.C_e, "C_e", cols=n)
        Q = _as_matrix(self.Q, "Q", rows=n, cols=n)
        m, me = C.shape[0], C_e.shape[0]
        if m == 0:
            raise DimensionError("C must have at least one row")
        R = _as_matrix(self.R, "R", rows=m, cols=m)
        R_e = _as_matrix(self.R_e, "R_e", rows=me, cols=me)
        for name, val in zip("A C C_e Q R R_e".split(), (A, C, C_e, Q, R, R_e)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def m_e(self) -> int:
        return self.C_e.shape[0]

    @property
    def m_bar(self) -> int:
        return self.m + self.m_e

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("A", "C", "C_e", "Q", "R", "R_e")}

    @classmethod
    def from_dict(cls, data: dict) -> "SystemModel":
        missing = {"A", "C", "Q", "R"} - set(data)
        if missing:
            raise KeyError(f"model is missing keys: {sorted(missing)}")
        n = np.atleast_2d(np.asarray(data["A"], dtype=float)).shape[0]
        C_e = data.get("C_e", np.zeros((0, n)))
        R_e = data.get("R_e", np.zeros((0, 0)))
        if len(np.asarray(C_e, dtype=float).ravel()) == 0:
            C_e, R_e = np.zeros((0, n)), np.zeros((0, 0))
        return cls(data["A"], data["C"], C_e, data["Q"], data["R"], R_e)


@dataclass(frozen=True)
class AugmentedModel:
    C_bar: np.ndarray
    R_bar: np.ndarray
    m_bar: int


@dataclass(frozen=True)
class SpectralProfile:
    rho_A: float
    kappa: int


@dataclass
class ValidationReport:
    """Outcome of :func:`validate`: one boolean per checked invariant."""

    checks: dict = field(default_factory=dict)
    messages: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": dict(self.checks),
            "messages": dict(self.messages),
            "warnings": list(self.warnings),
        }


def load_model(path) -> SystemModel:
    """Read a model file (YAML or JSON) with keys A, C, C_e, Q, R, R_e."""
    with open(Path(path)) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping of matrix names to row lists")
    if "model" in data and isinstance(data["model"], dict):
        data = data["model"]
    return SystemModel.from_dict(data)


def save_model(model: SystemModel, path) -> None:
    with open(Path(path), "w") as fh:
        yaml.safe_dump(model.to_dict(), fh, default_flow_style=None, sort_keys=False)


def augment(model: SystemModel) -> AugmentedModel:
    C_bar = np.vstack([model.C, model.C_e])
    R_bar = np.zeros((model.m_bar, model.m_bar))
    R_bar[: model.m, : model.m] = model.R
    R_bar[model.m :, model.m :] = model.R_e
    return AugmentedModel(C_bar=C_bar, R_bar=R_bar, m_bar=model.m_bar)


def spectral_radius(M) -> float:
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _numerical_rank(M, rel_tol):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def is_detectable(A, C, eig_tol=PBH_EIG_TOL, rank_tol=PBH_RANK_TOL) -> bool:
    """PBH test: every eigenvalue with |lambda| >= 1 - eig_tol is observable."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - eig_tol:
            continue
        stack = np.vstack([lam * np.eye(n) - A, C.astype(complex)])
        if _numerical_rank(stack, rank_tol) < n:
            return False
    return True


def _jordan_index(A, lam, alg_mult, tol):
    # smallest j with rank((A - lam I)^j) = n - alg_mult
    n = A.shape[0]
    N = A - lam * np.eye(n)
    M = np.eye(n, dtype=complex)
    scale = max(1.0, np.linalg.norm(A, 2))
    for j in range(1, n + 1):
        M = M @ N
        s = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(s > tol * scale**j))
        if rank <= n - alg_mult:
            return j
    return alg_mult


def spectral_profile(model_or_A, unit_tol=1e-6) -> SpectralProfile:
    """Spectral radius of A and the largest Jordan block on the unit circle.

    Eigenvalues within ``unit_tol`` of modulus one are clustered; for each
    cluster the Jordan index is read off the rank chain of (A - lam I)^j.
    """
    A = model_or_A.A if isinstance(model_or_A, SystemModel) else np.asarray(model_or_A, float)
    eigs = np.linalg.eigvals(A)
    rho = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    unit = [lam for lam in eigs if abs(abs(lam) - 1.0) <= unit_tol or abs(lam) > 1.0]
    kappa = 0
    used = np.zeros(len(unit), dtype=bool)
    for i, lam in enumerate(unit):
        if used[i]:
            continue
        cluster = [j for j, mu in enumerate(unit) if not used[j] and abs(mu - lam) <= 1e-5]
        used[cluster] = True
        center = np.mean([unit[j] for j in cluster])
        kappa = max(kappa, _jordan_index(A, center, len(cluster), tol=1e-7))
    return SpectralProfile(rho_A=rho, kappa=int(kappa))


def validate(model: SystemModel) -> ValidationReport:
    """Check the standing modelling assumptions on ``model``.

    Failures are reported, not raised. Dimension problems never reach here
    because :class:`SystemModel` refuses to construct.
    """
    rep = ValidationReport()

    def sym(M):
        return np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max(initial=0.0)))

    rep.checks["Q_symmetric_psd"] = sym(model.Q) and (
        model.n == 0 or np.linalg.eigvalsh(model.Q).min() >= -1e-12
    )
    rep.checks["R_symmetric_pd"] = sym(model.R) and np.linalg.eigvalsh(model.R).min() > 0
    rep.checks["R_e_symmetric_pd"] = model.m_e == 0 or (
        sym(model.R_e) and np.linalg.eigvalsh(model.R_e).min() > 0
    )
    rho = spectral_radius(model.A)
    rep.checks["marginally_stable"] = rho <= 1.0 + RHO_TOL
    rep.messages["marginally_stable"] = f"rho(A) = {rho:.12g}"
    rep.checks["detectable_local"] = is_detectable(model.A, model.C)
    rep.checks["detectable_external"] = model.m_e == 0 or is_detectable(model.A, model.C_e)

    if rep.checks["Q_symmetric_psd"]:
        qmin = float(np.linalg.eigvalsh(model.Q).min())
        if qmin <= 0:
            msg = f"lambda_min(Q) = {qmin:.3g} <= 0: decay constants are unavailable"
            rep.warnings.append(msg)
            warnings.warn(msg, stacklevel=2)
    return rep


def example1() -> SystemModel:
    """Two-state system whose local/centralized steady errors are 3.10 / 2.40."""
    return SystemModel(
        A=[[0.2, 0.8], [0.4, 0.6]],
        C=[[1.0, 0.0]],
        C_e=[[0.0, 1.0]],
        Q=np.eye(2),
        R=[[1.0]],
        R_e=[[1.0]],
    )


def example2() -> SystemModel:
    """Decoupled two-state system where the external channel cannot help."""
    return SystemModel(
        A=0.9 * np.eye(2),
        C=[[1.0, 0.0]],
        C_e=[[0.0, 1.0]],
        Q=np.eye(2),
        R=[[1.0]],
        R_e=[[1.0]],
    )
