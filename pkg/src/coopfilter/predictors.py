"""Model-based benchmark predictors and the true autoregressive coefficients.

Three steady-state one-step predictors, all started from a zero state
estimate:

* local: Kalman filter on ``y`` only,
* centralized: Kalman filter on ``y^c = [y; y^e]`` with no delay,
* delayed: the optimal predictor when ``y^e`` arrives ``d`` steps late. It
  runs the centralized filter ``d`` steps behind and refines its estimate
  with the ``d`` newest local observations.

Each predictor comes in two forms: a streaming object with a ``step``
method, and a vectorized function over a whole trajectory. The function
form also accepts a run axis, ``(N, B, dim)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .exceptions import ModelFreeOnlyError
from .model import SystemModel, augment
from .riccati import DelayChain, SteadyKalman, delayed_chain, solve_centralized, solve_local
from .simulate import Trajectory


def run_steady_filter(A, C_obs, L, obs, x0=None) -> np.ndarray:
    """State predictions of ``x_{k+1} = A x_k + L (obs_k - C_obs x_k)``.

    Returns ``xhat`` with ``xhat[k]`` predicting ``x_k`` from ``obs_0..obs_{k-1}``;
    the array has one more row than ``obs``.
    """
    obs = np.asarray(obs, dtype=float)
    N = obs.shape[0]
    n = A.shape[0]
    xhat = np.empty((N + 1,) + obs.shape[1:-1] + (n,))
    xhat[0] = 0.0 if x0 is None else x0
    F_T = (A - L @ C_obs).T
    L_T = L.T
    for k in range(N):
        xhat[k + 1] = xhat[k] @ F_T + obs[k] @ L_T
    return xhat


def predict_local(model: SystemModel, y, steady: SteadyKalman | None = None) -> np.ndarray:
    """``yhat[k] = C xhat_k`` from local observations ``y_0..y_{k-1}``."""
    steady = steady or solve_local(model)
    xhat = run_steady_filter(model.A, model.C, steady.L, y)
    return xhat[:-1] @ model.C.T


def centralized_states(model: SystemModel, y, y_e, steady: SteadyKalman | None = None
                       ) -> np.ndarray:
    """``xbar[k]`` from centralized observations ``y^c_0..y^c_{k-1}`` (N+1 rows)."""
    steady = steady or solve_centralized(model)
    y_c = np.concatenate([np.asarray(y, float), np.asarray(y_e, float)], axis=-1)
    return run_steady_filter(model.A, augment(model).C_bar, steady.L, y_c)


def predict_centralized(model: SystemModel, y, y_e, steady: SteadyKalman | None = None
                        ) -> np.ndarray:
    return centralized_states(model, y, y_e, steady)[:-1] @ model.C.T


def delayed_states(model: SystemModel, chain: DelayChain, y, y_e) -> np.ndarray:
    """Delayed-optimal state predictions ``xhat[j]``, j = 0..N.

    For j >= d,
    ``xhat_j = Phi_d xbar_{j-d} + sum_{l=1}^{d} Phi_{d-l} L^(l) y_{j-1-d+l}``.
    For j < d no external observation has arrived; ``xbar_0`` is propagated
    open-loop through A.
    """
    y = np.asarray(y, dtype=float)
    d = chain.d
    xbar = centralized_states(model, y, y_e, chain.centralized)
    if d == 0:
        return xbar
    N = y.shape[0]
    xhat = np.empty_like(xbar)
    xw = xbar[0]
    for j in range(min(d, N + 1)):
        xhat[j] = xw
        xw = xw @ model.A.T
    if N + 1 > d:
        acc = xbar[: N + 1 - d] @ chain.Phi_d.T
        for l in range(1, d + 1):
            M = chain.Phi_seq[d - l] @ chain.L_seq[l - 1]
            # xhat_j uses y_{j-1-d+l}; for j = d..N that is y[l-1 : N-d+l]
            acc = acc + y[l - 1 : N - d + l] @ M.T
        xhat[d:] = acc
    return xhat


def predict_delayed(model: SystemModel, chain: DelayChain, y, y_e) -> np.ndarray:
    return delayed_states(model, chain, y, y_e)[:-1] @ model.C.T


class SteadyPredictor:
    """Streaming steady-state Kalman predictor.

    ``step(obs_k)`` consumes one observation and returns ``C xhat_{k+1}``.
    """

    def __init__(self, A, C_obs, L, C_out, x0=None):
        self.A = np.asarray(A, dtype=float)
        self.C_obs = np.asarray(C_obs, dtype=float)
        self.L = np.asarray(L, dtype=float)
        self.C_out = np.asarray(C_out, dtype=float)
        self.xhat = np.zeros(self.A.shape[0]) if x0 is None else np.array(x0, dtype=float)
        self.k = -1

    @property
    def output(self):
        return self.C_out @ self.xhat

    def step(self, obs):
        obs = np.asarray(obs, dtype=float)
        self.xhat = self.A @ self.xhat + self.L @ (obs - self.C_obs @ self.xhat)
        self.k += 1
        return self.output


def local_predictor(model: SystemModel, steady: SteadyKalman | None = None) -> SteadyPredictor:
    steady = steady or solve_local(model)
    return SteadyPredictor(model.A, model.C, steady.L, model.C)


def centralized_predictor(model: SystemModel, steady: SteadyKalman | None = None
                          ) -> SteadyPredictor:
    steady = steady or solve_centralized(model)
    return SteadyPredictor(model.A, augment(model).C_bar, steady.L, model.C)


class DelayedPredictor:
    """Streaming delayed-optimal predictor.

    ``step(y_k, y_e_{k-d})`` returns ``C xhat_{k+1}``; pass ``None`` for the
    external argument while ``k < d``. A ring buffer holds the ``d + 1``
    newest local observations so each step costs O(d n m + n^2).
    """

    def __init__(self, model: SystemModel, chain: DelayChain):
        self.model = model
        self.chain = chain
        self.d = chain.d
        self.C_bar = augment(model).C_bar
        self.central = SteadyPredictor(model.A, self.C_bar, chain.L_bar, model.C)
        self._weights = [chain.Phi_seq[self.d - l] @ chain.L_seq[l - 1]
                         for l in range(1, self.d + 1)]
        self._buf = deque(maxlen=self.d + 1)
        self.xhat = np.zeros(model.n)
        self.k = -1

    @property
    def xbar(self):
        return self.central.xhat

    def step(self, y_k, y_e_delayed=None):
        y_k = np.asarray(y_k, dtype=float)
        self.k += 1
        k, d = self.k, self.d
        self._buf.append(y_k)
        if k - d >= 0:
            if y_e_delayed is None:
                raise ValueError(f"external observation {k - d} required at step {k}")
            y_old = self._buf[0]
            self.central.step(np.concatenate([y_old, np.asarray(y_e_delayed, dtype=float)]))
        if d == 0:
            self.xhat = self.central.xhat.copy()
        elif k + 1 >= d:
            x = self.chain.Phi_d @ self.central.xhat
            buf = list(self._buf)[-d:]
            for W, y_l in zip(self._weights, buf):
                x = x + W @ y_l
            self.xhat = x
        else:
            self.xhat = self.model.A @ self.xhat
        return self.model.C @ self.xhat


def local_steady_step(state: SteadyPredictor, y_k):
    return state, state.step(y_k)


def centralized_steady_step(state: SteadyPredictor, y_c_k):
    return state, state.step(y_c_k)


def delayed_steady_step(state: DelayedPredictor, y_k, y_e_delayed=None):
    return state, state.step(y_k, y_e_delayed)


@dataclass(frozen=True)
class ARCoefficients:
    """Markov coefficients ``G = [G1 | G2]`` of the asynchronous AR model.

    ``G1`` weights the ``d`` newest local outputs (newest first), ``G2``
    weights the ``p`` newest available centralized outputs.
    """

    G: np.ndarray
    p: int
    d: int
    m: int

    @property
    def G1(self):
        return self.G[:, : self.m * self.d]

    @property
    def G2(self):
        return self.G[:, self.m * self.d :]


def build_ar_coefficients(model: SystemModel, chain: DelayChain, p: int) -> ARCoefficients:
    if p < 1:
        raise ValueError(f"past horizon p must be >= 1, got {p}")
    C, d = model.C, chain.d
    blocks = [C @ chain.Phi_seq[j] @ chain.L_seq[d - 1 - j] for j in range(d)]
    A_bar = model.A - chain.L_bar @ augment(model).C_bar
    M = C @ chain.Phi_d
    for _ in range(p):
        blocks.append(M @ chain.L_bar)
        M = M @ A_bar
    return ARCoefficients(G=np.hstack(blocks), p=p, d=d, m=model.m)


def bias_states(model: SystemModel, chain: DelayChain, p: int, xbar) -> np.ndarray:
    """``b_t = C Phi_d A_bar^p xbar_{t-d-p}`` for every t with t - d - p >= 0."""
    if p < 1:
        raise ValueError("bias term needs p >= 1")
    A_bar = model.A - chain.L_bar @ augment(model).C_bar
    M = model.C @ chain.Phi_d @ np.linalg.matrix_power(A_bar, p)
    return np.asarray(xbar) @ M.T


def innovations(trajectory: Trajectory, model: SystemModel, kind: str, d: int = 0,
                chain: DelayChain | None = None, skip: int | None = None) -> np.ndarray:
    """Prediction errors ``y_k - yhat_k`` of a benchmark predictor.

    The first ``d + 5 n`` steps are dropped unless ``skip`` says otherwise.
    """
    if trajectory.model_free_only:
        raise ModelFreeOnlyError("innovations need a known model")
    y, y_e = trajectory.y, trajectory.y_e
    if kind == "local":
        yhat = predict_local(model, y)
    elif kind == "centralized":
        yhat = predict_centralized(model, y, y_e)
    elif kind == "delayed":
        chain = chain if chain is not None and chain.d == d else delayed_chain(model, d)
        yhat = predict_delayed(model, chain, y, y_e)
    else:
        raise ValueError(f"unknown predictor kind {kind!r}")
    skip = d + 5 * model.n if skip is None else skip
    return (y - yhat)[skip:]
