"""Model-free online cooperative filtering.

The learner regresses ``y_t`` on the stacked past

    Z_t = [y_{t-1}; ...; y_{t-d}; y^c_{t-d-1}; ...; y^c_{t-d-p}]

with ridge-regularized least squares. After a warm-up of ``T_init`` steps
the horizon is split into doubling epochs ``T_l = 2^{l-1} T_init + 1``.
At each epoch start the window ``p = ceil(beta ln T_l)`` is reset and the
coefficients are refit in batch on all history. Within the epoch the
learner predicts, observes, then applies a rank-one recursive update.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DimensionError, InsufficientHistoryError, StreamHorizonError
from .simulate import ObservationStream, Trajectory


def window_length(beta: float, T: int) -> int:
    """Past horizon ``p = max(1, ceil(beta * ln T))``."""
    return max(1, math.ceil(beta * math.log(T)))


def epoch_start(l: int, T_init: int) -> int:
    return 2 ** (l - 1) * T_init + 1


def epoch_steps(l: int, T_init: int) -> range:
    T = epoch_start(l, T_init)
    return range(T, 2 * T - 1)


def required_length(T_init: int, N_E: int) -> int:
    """Number of time steps a stream needs to run ``N_E`` epochs."""
    return 2 * epoch_start(N_E, T_init) - 1


def max_epochs(N: int, T_init: int) -> int:
    l = 0
    while required_length(T_init, l + 1) <= N:
        l += 1
    return l


@dataclass(frozen=True)
class WindowConfig:
    beta: float = 2.0
    d: int = 1
    lam: float = 1.0
    T_init: int = 50
    N_E: int = 7

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.d < 0:
            raise ValueError("delay d must be nonnegative")
        if self.lam <= 0:
            raise ValueError("ridge weight lam must be positive")
        if self.T_init < 1 or self.N_E < 1:
            raise ValueError("T_init and N_E must be positive")

    def p(self, T: int) -> int:
        return window_length(self.beta, T)


def regressor_dim(m: int, m_e: int, p: int, d: int) -> int:
    return m * d + (m + m_e) * p


def regressor_matrix(y, y_e, p: int, d: int, ts) -> np.ndarray:
    """Rows ``Z_t`` for each target index ``t`` in ``ts``.

    ``y`` must hold rows up to ``max(ts) - 1`` and ``y_e`` rows up to
    ``max(ts) - d - 1``; nothing newer is touched.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=int))
    if ts.size and ts.min() < p + d:
        raise InsufficientHistoryError(
            f"target index {ts.min()} needs at least p + d = {p + d} past steps")
    y = np.asarray(y)
    y_e = np.asarray(y_e)
    need_local = ts.max() if ts.size else 0
    need_ext = (ts.max() - d) if ts.size else 0
    if y.shape[0] < need_local or (p > 0 and y_e.shape[0] < need_ext):
        raise InsufficientHistoryError("history shorter than the requested regressors")
    parts = []
    if d:
        lag = ts[:, None] - 1 - np.arange(d)[None, :]
        parts.append(y[lag].reshape(ts.size, -1))
    lag = ts[:, None] - d - 1 - np.arange(p)[None, :]
    yc = np.concatenate([y[lag], y_e[lag]], axis=-1)
    parts.append(yc.reshape(ts.size, -1))
    return np.concatenate(parts, axis=1)


def make_regressor(y, y_e, k: int, p: int, d: int) -> np.ndarray:
    """Regressor ``Z_k`` used to predict ``y_k`` (newest blocks first)."""
    return regressor_matrix(y, y_e, p, d, [k])[0]


class DelayEmbedding(TransformerMixin, BaseEstimator):
    """Turn a centralized series into delayed-window regressors.

    ``X`` holds ``[y_t, y^e_t]`` per row; the first ``n_local`` columns are
    the local channel. ``transform`` returns ``Z_t`` for ``t = p+d .. N-1``
    and :meth:`targets` the matching ``y_t``.
    """

    def __init__(self, p=1, d=0, n_local=1):
        self.p = p
        self.d = d
        self.n_local = n_local

    def fit(self, X, y=None):
        X = check_array(X)
        if not 0 < self.n_local <= X.shape[1]:
            raise DimensionError("n_local must be in 1..n_features")
        self.n_features_in_ = X.shape[1]
        return self

    def _split(self, X):
        X = check_array(X)
        return X[:, : self.n_local], X[:, self.n_local :]

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        y, y_e = self._split(X)
        ts = np.arange(self.p + self.d, y.shape[0])
        return regressor_matrix(y, y_e, self.p, self.d, ts)

    def targets(self, X):
        y, _ = self._split(X)
        return y[self.p + self.d :]


class OnlineRidge(RegressorMixin, BaseEstimator):
    """Ridge regression with exact recursive rank-one updates.

    ``fit`` computes ``G = (sum y z^T) V^{-1}`` with ``V = lam I + sum z z^T``.
    ``partial_fit`` feeds rows one at a time: predict with the current
    coefficients, add ``z z^T`` to ``V``, update ``V^{-1}`` by
    Sherman-Morrison, and correct ``G += (y - G z) z^T V^{-1}``. Both routes
    give the same coefficients. ``V^{-1}`` is recomputed from ``V`` every
    ``refactor_every`` updates.
    """

    def __init__(self, lam=1.0, refactor_every=512):
        self.lam = lam
        self.refactor_every = refactor_every

    def _init_state(self, n_features, n_targets):
        self.V_ = self.lam * np.eye(n_features)
        self.V_inv_ = np.eye(n_features) / self.lam
        self.coef_ = np.zeros((n_targets, n_features))
        self.n_features_in_ = n_features
        self.n_updates_ = 0

    def fit(self, X, y):
        if self.lam <= 0:
            raise ValueError("ridge weight lam must be positive")
        X = check_array(X)
        Y = np.asarray(y, dtype=float)
        self._y_1d = Y.ndim == 1
        Y = Y.reshape(len(Y), -1)
        if Y.shape[0] != X.shape[0]:
            raise DimensionError("X and y have different numbers of rows")
        if X.shape[0] < 1:
            raise InsufficientHistoryError("batch fit needs at least one row")
        self._init_state(X.shape[1], Y.shape[1])
        self.V_ = self.V_ + X.T @ X
        fac = la.cho_factor(self.V_, lower=True)
        self.coef_ = la.cho_solve(fac, X.T @ Y).T
        self.V_inv_ = la.cho_solve(fac, np.eye(X.shape[1]))
        return self

    def refactorize(self):
        fac = la.cho_factor(self.V_, lower=True)
        self.V_inv_ = la.cho_solve(fac, np.eye(self.V_.shape[0]))

    def update(self, z, y, y_pred=None):
        """One recursive step on a single row; ``y_pred`` must be ``coef_ @ z``."""
        z = np.asarray(z, dtype=float)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y_pred is None:
            y_pred = self.coef_ @ z
        self.V_ += np.outer(z, z)
        u = self.V_inv_ @ z
        self.V_inv_ -= np.outer(u, u) / (1.0 + z @ u)
        self.V_inv_ = 0.5 * (self.V_inv_ + self.V_inv_.T)
        self.n_updates_ += 1
        if self.refactor_every and self.n_updates_ % self.refactor_every == 0:
            self.refactorize()
        self.coef_ += np.outer(y - y_pred, self.V_inv_ @ z)
        return self

    def partial_fit(self, X, y):
        X = check_array(X)
        Y = np.asarray(y, dtype=float)
        if not hasattr(self, "coef_"):
            self._y_1d = Y.ndim == 1
            self._init_state(X.shape[1], Y.reshape(len(Y), -1).shape[1])
        Y = Y.reshape(len(Y), -1)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}")
        for z, yy in zip(X, Y):
            self.update(z, yy)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = X @ self.coef_.T
        return out[:, 0] if self._y_1d else out


@dataclass
class PredictionTrace:
    """Per-step record of an online run.

    ``member_sq_err`` is filled by ensemble runs only: one column per
    member, NaN where a member was inactive.
    """

    k: np.ndarray
    epoch: np.ndarray
    p: np.ndarray
    member: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    member_sq_err: np.ndarray | None = None
    gram_min: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def sq_err(self) -> np.ndarray:
        return np.sum((self.y_true - self.y_pred) ** 2, axis=1)

    def __len__(self):
        return len(self.k)

    def epoch_ends(self) -> np.ndarray:
        """Step indices that close an epoch."""
        last = np.r_[self.epoch[1:] != self.epoch[:-1], True]
        return self.k[last]

    def to_csv(self, path, comment: str | None = None) -> None:
        m = self.y_true.shape[1]
        header = ["k", "epoch", "p", "member"]
        header += [f"y_true_{i}" for i in range(m)] + [f"y_pred_{i}" for i in range(m)]
        header += ["sq_err"]
        err = self.sq_err
        with open(path, "w", newline="") as fh:
            if comment:
                for line in comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(self.k)):
                w.writerow([int(self.k[i]), int(self.epoch[i]), int(self.p[i]),
                            int(self.member[i])]
                           + [repr(float(v)) for v in self.y_true[i]]
                           + [repr(float(v)) for v in self.y_pred[i]]
                           + [repr(float(err[i]))])


class _EpochLearner:
    """One co-Filter member: epoch refits plus recursive updates."""

    def __init__(self, cfg: WindowConfig, refactor_every=512):
        self.cfg = cfg
        self.refactor_every = refactor_every
        self.model = None
        self.p = None
        self.epoch = 0

    def start_epoch(self, l, y_hist, ye_hist):
        cfg = self.cfg
        T = epoch_start(l, cfg.T_init)
        p = cfg.p(T)
        lo = p + cfg.d
        if lo > T - 1:
            raise InsufficientHistoryError(
                f"epoch {l}: window p = {p} with d = {cfg.d} needs more than the "
                f"{T} available steps")
        ts = np.arange(lo, T)
        X = regressor_matrix(y_hist, ye_hist, p, cfg.d, ts)
        self.model = OnlineRidge(lam=cfg.lam, refactor_every=self.refactor_every)
        self.model.fit(X, y_hist[ts])
        self.p = p
        self.epoch = l

    def predict(self, k, y_hist, ye_hist):
        z = regressor_matrix(y_hist, ye_hist, self.p, self.cfg.d, [k])[0]
        return z, self.model.coef_ @ z

    def update(self, z, y_k, y_pred):
        self.model.update(z, y_k, y_pred)


def _advance(stream, to, epoch):
    try:
        stream.advance(to=to)
    except StreamHorizonError as exc:
        raise InsufficientHistoryError(
            f"stream exhausted during epoch {epoch} (needed step {to}, "
            f"stream has {len(stream)})") from exc


def run_ensemble(stream: ObservationStream, cfgs, refactor_every=512, gram_every=None
                 ) -> PredictionTrace:
    """Run several members in lockstep and follow the best one so far.

    The prediction for step ``k`` comes from the active member with the
    smallest squared error accumulated over steps before ``k``; ties go to
    the lowest index. A member that cannot start an epoch is dropped and
    a warning recorded.
    """
    cfgs = list(cfgs)
    if not cfgs:
        raise ValueError("ensemble needs at least one member")
    shared = {(c.lam, c.T_init, c.N_E, c.d) for c in cfgs}
    if len(shared) != 1:
        raise ValueError("ensemble members must share lam, T_init, N_E and d")
    cfg0 = cfgs[0]
    if stream.d != cfg0.d:
        raise ValueError(f"stream delay {stream.d} != configured delay {cfg0.d}")
    M = len(cfgs)
    learners = [_EpochLearner(c, refactor_every) for c in cfgs]
    alive = np.ones(M, dtype=bool)
    cum = np.zeros(M)
    notes = []

    total = sum(len(epoch_steps(l, cfg0.T_init)) for l in range(1, cfg0.N_E + 1))
    m = stream.trajectory.y.shape[-1]
    ks = np.empty(total, dtype=int)
    ep = np.empty(total, dtype=int)
    ps = np.empty(total, dtype=int)
    mem = np.empty(total, dtype=int)
    y_true = np.empty((total, m))
    y_pred = np.empty((total, m))
    member_err = np.full((total, M), np.nan)
    gram = []

    _advance(stream, cfg0.T_init, 0)
    row = 0
    for l in range(1, cfg0.N_E + 1):
        T = epoch_start(l, cfg0.T_init)
        _advance(stream, T - 1, l)
        y_hist, ye_hist = stream.readable_local, stream.readable_external
        for i in np.flatnonzero(alive):
            try:
                learners[i].start_epoch(l, y_hist, ye_hist)
            except InsufficientHistoryError as exc:
                alive[i] = False
                msg = f"member {i} (beta={cfgs[i].beta}) dropped: {exc}"
                notes.append(msg)
                warnings.warn(msg, stacklevel=2)
        if not alive.any():
            raise InsufficientHistoryError(f"epoch {l}: no ensemble member could start")
        for k in epoch_steps(l, cfg0.T_init):
            y_hist, ye_hist = stream.readable_local, stream.readable_external
            preds = {i: learners[i].predict(k, y_hist, ye_hist) for i in np.flatnonzero(alive)}
            active = np.flatnonzero(alive)
            sel = int(active[np.argmin(cum[active])])
            _advance(stream, k, l)
            y_k = stream.local(k)
            for i, (z, yp) in preds.items():
                e = float(np.sum((y_k - yp) ** 2))
                cum[i] += e
                member_err[row, i] = e
                learners[i].update(z, y_k, yp)
            ks[row], ep[row], ps[row], mem[row] = k, l, learners[sel].p, sel
            y_true[row] = y_k
            y_pred[row] = preds[sel][1]
            if gram_every and (k % gram_every == 0 or k == 2 * T - 2):
                gram.append((k, float(np.linalg.eigvalsh(learners[sel].model.V_)[0])))
            row += 1
    return PredictionTrace(k=ks, epoch=ep, p=ps, member=mem, y_true=y_true, y_pred=y_pred,
                           member_sq_err=member_err if M > 1 else None, gram_min=gram,
                           warnings=notes)


def run_cofilter(stream: ObservationStream, cfg: WindowConfig, refactor_every=512,
                 gram_every=None) -> PredictionTrace:
    """Run the online cooperative filter over ``stream``.

    Warm-up reveals steps ``0..T_init``. Epoch ``l`` refits on all rows
    ``t in [p + d, T_l - 1]``, then predicts ``y_k`` for ``k = T_l .. 2T_l - 2``
    using the coefficients from before ``y_k`` is seen.
    """
    return run_ensemble(stream, [cfg], refactor_every=refactor_every, gram_every=gram_every)


def _as_stream(y, y_e, d):
    y = np.asarray(y, dtype=float)
    y_e = np.asarray(y_e, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y_e.ndim == 1:
        y_e = y_e[:, None]
    if y.shape[0] != y_e.shape[0]:
        raise DimensionError("local and external series must have the same length")
    return ObservationStream(Trajectory(x=None, y=y, y_e=y_e), d)


class CoFilter(BaseEstimator):
    """Estimator wrapper around the online cooperative filter.

    ``fit(y, y_e)`` replays the series as a live stream with delay ``d`` and
    stores the online prediction trace in ``trace_``. ``predict`` applies
    the final coefficients to new data. A list of ``beta`` values turns on
    ensemble selection.

    Parameters
    ----------
    beta : float or list of float
        Window growth rate; ``p = ceil(beta ln T_l)`` in epoch ``l``.
    d : int
        Delay of the external channel, in steps.
    lam : float
        Ridge weight.
    T_init, N_E : int
        Warm-up length and number of doubling epochs.
    """

    def __init__(self, beta=2.0, d=1, lam=1.0, T_init=50, N_E=7, refactor_every=512,
                 gram_every=None):
        self.beta = beta
        self.d = d
        self.lam = lam
        self.T_init = T_init
        self.N_E = N_E
        self.refactor_every = refactor_every
        self.gram_every = gram_every

    def _configs(self):
        betas = self.beta if np.ndim(self.beta) else [self.beta]
        return [WindowConfig(beta=float(b), d=self.d, lam=self.lam, T_init=self.T_init,
                             N_E=self.N_E) for b in betas]

    def fit(self, y, y_e):
        stream = _as_stream(y, y_e, self.d)
        self.trace_ = run_ensemble(stream, self._configs(), refactor_every=self.refactor_every,
                                   gram_every=self.gram_every)
        # refit the selected member's final window so predict() is self-contained
        last = self.trace_.member[-1]
        cfg = self._configs()[last]
        p = int(self.trace_.p[-1])
        y_arr, ye_arr = stream.trajectory.y, stream.trajectory.y_e
        end = int(self.trace_.k[-1]) + 1
        ts = np.arange(p + self.d, end)
        X = regressor_matrix(y_arr[:end], ye_arr[:end], p, self.d, ts)
        self.learner_ = OnlineRidge(lam=cfg.lam).fit(X, y_arr[ts])
        self.p_ = p
        self.n_features_in_ = y_arr.shape[1] + ye_arr.shape[1]
        return self

    def predict(self, y, y_e):
        """One-step predictions ``yhat_t`` for ``t = p + d .. N`` of the given series.

        Row ``i`` predicts ``y_{p+d+i}``; the last row is a forecast one step
        past the data.
        """
        check_is_fitted(self, "learner_")
        stream = _as_stream(y, y_e, self.d)
        y_arr, ye_arr = stream.trajectory.y, stream.trajectory.y_e
        N = y_arr.shape[0]
        ts = np.arange(self.p_ + self.d, N + 1)
        X = regressor_matrix(y_arr, ye_arr, self.p_, self.d, ts)
        out = X @ self.learner_.coef_.T
        return out
