"""Riccati operator, steady-state DARE, and the delay-parameterized chain.

The delayed chain seeds the *local* Riccati recursion at the centralized
steady solution: ``P^(1) = P_bar``, ``P^(l+1) = Ric(A, C, Q, R, P^(l))``.
Its gains ``L^(l)`` and transition products ``Phi_j`` define the optimal
predictor when external observations arrive ``d`` steps late.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .exceptions import ConvergenceError, FactorizationError, NumericalError
from .model import SystemModel, augment, spectral_radius

DARE_TOL = 1e-11
DARE_MAX_ITER = 200_000
DARE_RESIDUAL_TOL = 1e-8
DIVERGENCE_LIMIT = 1e60


def _spd_factor(S, what):
    try:
        return la.cho_factor(S, lower=True, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise FactorizationError(f"{what} is not positive definite: {exc}") from exc


def _symmetrize(P):
    return 0.5 * (P + P.T)


def kalman_gain(A, C, R, P):
    """L = A P C^T (C P C^T + R)^{-1}, via an SPD solve."""
    C = np.asarray(C, dtype=float)
    if C.shape[0] == 0:
        return np.zeros((A.shape[0], 0))
    S = C @ P @ C.T + R
    fac = _spd_factor(S, "innovation covariance C P C^T + R")
    # L S = A P C^T  <=>  S L^T = C P A^T  (S symmetric)
    return la.cho_solve(fac, C @ P @ A.T).T


def ric_step(A, C, Q, R, P):
    """One Riccati step A P A^T + Q - A P C^T (C P C^T + R)^{-1} C P A^T."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    P = np.asarray(P, dtype=float)
    APA = A @ P @ A.T + Q
    if C.shape[0] == 0:
        return _symmetrize(APA)
    S = C @ P @ C.T + R
    fac = _spd_factor(S, "innovation covariance C P C^T + R")
    CPA = C @ P @ A.T
    return _symmetrize(APA - CPA.T @ la.cho_solve(fac, CPA))


def dare_residual(A, C, Q, R, P) -> float:
    return float(np.linalg.norm(ric_step(A, C, Q, R, P) - P, "fro"))


@dataclass(frozen=True)
class SteadyKalman:
    P: np.ndarray
    L: np.ndarray
    closed_loop: np.ndarray
    rho_cl: float
    iterations: int = 0
    residual: float = 0.0


def solve_dare(A, C, Q, R, tol=DARE_TOL, max_iter=DARE_MAX_ITER) -> SteadyKalman:
    """Steady prediction covariance by fixed-point Riccati iteration from P0 = Q.

    Stops once ``||P_{k+1} - P_k||_F <= tol (1 + ||P_k||_F)``. Undetectable
    pairs show up as a :class:`ConvergenceError` carrying the last residual.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    P = _symmetrize(Q.copy())
    diff = np.inf
    for it in range(1, max_iter + 1):
        P_next = ric_step(A, C, Q, R, P)
        diff = np.linalg.norm(P_next - P, "fro")
        P = P_next
        size = np.linalg.norm(P, "fro")
        # an undetectable mode grows P geometrically; stop long before norms overflow
        if not (np.isfinite(diff) and np.isfinite(size)) or size > DIVERGENCE_LIMIT:
            raise ConvergenceError(f"Riccati iteration diverged (||P|| = {size:.3e})",
                                   residual=diff, iterations=it)
        if diff <= tol * (1.0 + size):
            break
    else:
        raise ConvergenceError(
            f"Riccati iteration did not converge in {max_iter} steps "
            f"(last increment {diff:.3e})",
            residual=diff,
            iterations=max_iter,
        )
    residual = dare_residual(A, C, Q, R, P)
    if residual > DARE_RESIDUAL_TOL * max(1.0, np.linalg.norm(P, "fro")):
        raise ConvergenceError(f"DARE residual {residual:.3e} too large", residual=residual,
                               iterations=it)
    L = kalman_gain(A, C, R, P)
    closed = A - L @ C
    return SteadyKalman(P=P, L=L, closed_loop=closed, rho_cl=spectral_radius(closed),
                        iterations=it, residual=residual)


def solve_local(model: SystemModel) -> SteadyKalman:
    return solve_dare(model.A, model.C, model.Q, model.R)


def solve_centralized(model: SystemModel) -> SteadyKalman:
    aug = augment(model)
    return solve_dare(model.A, aug.C_bar, model.Q, aug.R_bar)


@dataclass(frozen=True)
class DelayChain:
    """Riccati chain, gains and transition products for a delay ``d``.

    ``P_seq[l-1]`` is P^(l) for l = 1..d+1, ``L_seq[l-1]`` is L^(l) for
    l = 1..d, and ``Phi_seq[j]`` is Phi_j = (A - L^(d) C) ... (A - L^(d-j+1) C).
    ``tau``/``rho0`` are ``None`` when lambda_min(Q) <= 0.
    """

    d: int
    P_seq: list
    L_seq: list
    Phi_seq: list
    centralized: SteadyKalman
    tau: float | None = None
    rho0: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def P_bar(self):
        return self.centralized.P

    @property
    def L_bar(self):
        return self.centralized.L

    @property
    def Phi_d(self):
        return self.Phi_seq[self.d]

    @property
    def P_end(self):
        return self.P_seq[self.d]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "P_seq": [P.tolist() for P in self.P_seq],
            "L_seq": [L.tolist() for L in self.L_seq],
            "Phi_seq": [F.tolist() for F in self.Phi_seq],
            "P_bar": self.P_bar.tolist(),
            "L_bar": self.L_bar.tolist(),
            "tau": self.tau,
            "rho0": self.rho0,
        }


def delayed_chain(model: SystemModel, d: int, centralized: SteadyKalman | None = None) -> DelayChain:
    if d < 0:
        raise ValueError(f"delay must be nonnegative, got {d}")
    A, C, Q, R = model.A, model.C, model.Q, model.R
    cen = centralized if centralized is not None else solve_centralized(model)
    P_seq = [cen.P]
    L_seq = []
    for _ in range(d):
        P = P_seq[-1]
        L_seq.append(kalman_gain(A, C, R, P))
        P_seq.append(ric_step(A, C, Q, R, P))
    Phi_seq = [np.eye(model.n)]
    for j in range(1, d + 1):
        # later gains act last, so each new factor multiplies on the right
        Phi_seq.append(Phi_seq[-1] @ (A - L_seq[d - j] @ C))
    chain = DelayChain(d=d, P_seq=P_seq, L_seq=L_seq, Phi_seq=Phi_seq, centralized=cen)
    if np.linalg.eigvalsh(Q).min() > 0:
        tau, rho0 = decay_constants(chain, Q)
        chain = DelayChain(d=d, P_seq=P_seq, L_seq=L_seq, Phi_seq=Phi_seq, centralized=cen,
                           tau=tau, rho0=rho0)
    return chain


def decay_constants(chain: DelayChain, Q) -> tuple[float, float]:
    """(tau, rho0) bounding ||Phi_d||_2^2 <= tau * rho0**d."""
    qmin = float(np.linalg.eigvalsh(np.asarray(Q, dtype=float)).min())
    if qmin <= 0:
        raise NumericalError(f"decay constants need lambda_min(Q) > 0, got {qmin:.3g}")
    lmax_end = float(np.linalg.eigvalsh(chain.P_seq[-1]).max())
    lmin_first = float(np.linalg.eigvalsh(chain.P_seq[0]).min())
    tau = lmax_end / lmin_first
    rho0 = 1.0 - qmin / lmax_end
    if not 0.0 < rho0 < 1.0:
        raise NumericalError(f"rho0 = {rho0} outside (0, 1)")
    return tau, rho0


def decay_margin(chain: DelayChain) -> float:
    """tau * rho0**d - ||Phi_d||_2^2; nonnegative when the bound holds."""
    if chain.tau is None:
        raise NumericalError("decay constants unavailable for this chain")
    phi_sq = np.linalg.norm(chain.Phi_d, 2) ** 2
    return chain.tau * chain.rho0**chain.d - phi_sq


def cross_covariance_residuals(model: SystemModel, chain: DelayChain) -> np.ndarray:
    """Residuals of P_bar = A_bar P_bar (A - L^(i+1) C)^T + Q + L_bar R_tilde L^(i+1)^T.

    ``R_tilde = [R; 0]`` is the covariance between the stacked noise and the
    local noise. One Frobenius residual per i = 0..d-1.
    """
    aug = augment(model)
    Pb, Lb = chain.P_bar, chain.L_bar
    A_bar = model.A - Lb @ aug.C_bar
    R_tilde = np.vstack([model.R, np.zeros((model.m_e, model.m))])
    out = []
    for L in chain.L_seq:
        rhs = A_bar @ Pb @ (model.A - L @ model.C).T + model.Q + Lb @ R_tilde @ L.T
        out.append(np.linalg.norm(Pb - rhs, "fro"))
    return np.array(out)


def coupled_lyapunov_residuals(model: SystemModel, chain: DelayChain) -> np.ndarray:
    """Residuals of P^(i+1) = (A - L^(i) C) P^(i) (A - L^(j) C)^T + Q + L^(i) R L^(j)^T.

    Returned as a d-by-d array; entries with i > j are NaN.
    """
    A, C, Q, R = model.A, model.C, model.Q, model.R
    d = chain.d
    out = np.full((d, d), np.nan)
    for i in range(1, d + 1):
        Li, Pi = chain.L_seq[i - 1], chain.P_seq[i - 1]
        for j in range(i, d + 1):
            Lj = chain.L_seq[j - 1]
            rhs = (A - Li @ C) @ Pi @ (A - Lj @ C).T + Q + Li @ R @ Lj.T
            out[i - 1, j - 1] = np.linalg.norm(chain.P_seq[i] - rhs, "fro")
    return out


def chain_monotonicity(chain: DelayChain) -> np.ndarray:
    """lambda_min(P^(l+1) - P^(l)) for l = 1..d."""
    return np.array([
        np.linalg.eigvalsh(chain.P_seq[l + 1] - chain.P_seq[l]).min()
        for l in range(chain.d)
    ])
