import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from coopfilter.analysis import batch_recursive_gap
from coopfilter.cofilter import (
    CoFilter,
    DelayEmbedding,
    OnlineRidge,
    WindowConfig,
    epoch_start,
    epoch_steps,
    make_regressor,
    regressor_dim,
    regressor_matrix,
    required_length,
    run_cofilter,
    run_ensemble,
    window_length,
)
from coopfilter.exceptions import InsufficientHistoryError
from coopfilter.model import SystemModel
from coopfilter.simulate import ObservationStream, Trajectory, gen_trajectory


class TestSchedule:
    def test_epoch_starts(self):
        assert [epoch_start(l, 50) for l in (1, 2, 3)] == [51, 101, 201]

    def test_epochs_are_contiguous(self):
        for l in range(1, 6):
            assert epoch_steps(l, 50)[-1] + 1 == epoch_steps(l + 1, 50)[0]

    def test_required_length(self):
        assert required_length(50, 7) == 6401

    def test_window_length(self):
        assert window_length(2.0, 51) == int(np.ceil(2 * np.log(51)))
        assert window_length(1e-6, 2) == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            WindowConfig(beta=0)
        with pytest.raises(ValueError):
            WindowConfig(d=-1)
        with pytest.raises(ValueError):
            WindowConfig(lam=0)


class TestRegressor:
    def test_centralized_only(self):
        y = np.arange(5.0)[:, None]
        ye = 10 * y
        np.testing.assert_array_equal(make_regressor(y, ye, 3, p=1, d=0), [2.0, 20.0])

    def test_newest_first_with_delay(self):
        y = np.array([[1.0], [2.0], [3.0]])
        ye = np.array([[10.0], [20.0], [30.0]])
        np.testing.assert_array_equal(make_regressor(y, ye, 3, p=1, d=2), [3.0, 2.0, 1.0, 10.0])

    def test_dimension(self):
        y = np.ones((30, 2))
        ye = np.ones((30, 3))
        assert make_regressor(y, ye, 20, p=3, d=2).size == regressor_dim(2, 3, 3, 2) == 19

    def test_does_not_read_future(self):
        # only rows < t of y and < t - d of y_e may be touched
        y = np.arange(6.0)[:, None]
        ye = 100 + np.arange(6.0)[:, None]
        z = make_regressor(y[:5], ye[:4], 5, p=2, d=1)
        np.testing.assert_array_equal(z, [4.0, 3.0, 103.0, 2.0, 102.0])

    def test_too_early(self):
        with pytest.raises(InsufficientHistoryError):
            make_regressor(np.ones((5, 1)), np.ones((5, 1)), 2, p=2, d=1)

    def test_embedding_transformer(self):
        X = np.column_stack([np.arange(8.0), 10 * np.arange(8.0)])
        emb = DelayEmbedding(p=2, d=1, n_local=1).fit(X)
        Z = emb.transform(X)
        ts = np.arange(3, 8)
        np.testing.assert_array_equal(Z, regressor_matrix(X[:, :1], X[:, 1:], 2, 1, ts))
        np.testing.assert_array_equal(emb.targets(X)[:, 0], ts)


class TestOnlineRidge:
    def test_single_row_by_hand(self):
        est = OnlineRidge(lam=1.0).fit(np.eye(1, 4), [2.0])
        np.testing.assert_allclose(est.V_, np.diag([2.0, 1, 1, 1]))
        np.testing.assert_allclose(est.coef_, [[1.0, 0, 0, 0]])

    def test_recovers_exact_linear_map(self):
        rng = np.random.default_rng(0)
        G = rng.standard_normal((2, 6))
        Z = rng.standard_normal((200, 6))
        est = OnlineRidge(lam=1e-8).fit(Z, Z @ G.T)
        assert np.linalg.norm(est.coef_ - G) <= 1e-6
        z_new = rng.standard_normal((1, 6))
        assert np.abs(est.predict(z_new) - z_new @ G.T).max() <= 1e-6

    def test_zero_coefficients_predict_zero(self):
        est = OnlineRidge().partial_fit(np.zeros((1, 3)), np.zeros((1, 2)))
        np.testing.assert_array_equal(est.predict(np.ones((2, 3))), 0.0)

    def test_identity_block_copies(self):
        est = OnlineRidge().fit(np.zeros((1, 4)), np.zeros((1, 2)))
        est.coef_ = np.hstack([np.eye(2), np.zeros((2, 2))])
        z = np.array([[3.0, -1.0, 7.0, 8.0]])
        np.testing.assert_array_equal(est.predict(z), [[3.0, -1.0]])

    def test_zero_row_update(self):
        rng = np.random.default_rng(1)
        est = OnlineRidge().fit(rng.standard_normal((10, 3)), rng.standard_normal(10))
        before = (est.V_.copy(), est.V_inv_.copy(), est.coef_.copy())
        est.update(np.zeros(3), [5.0])
        for a, b in zip(before, (est.V_, est.V_inv_, est.coef_)):
            np.testing.assert_array_equal(a, b)
        assert est.n_updates_ == 1

    def test_rank_one_inverse(self):
        rng = np.random.default_rng(2)
        est = OnlineRidge(lam=0.5).fit(rng.standard_normal((5, 4)), rng.standard_normal(5))
        z = rng.standard_normal(4)
        V_inv = est.V_inv_.copy()
        est.update(z, [0.3])
        u = V_inv @ z
        np.testing.assert_allclose(est.V_inv_, V_inv - np.outer(u, u) / (1 + z @ u), atol=1e-13)

    @pytest.mark.parametrize("refit_at", [None, 200])
    def test_recursive_matches_batch(self, refit_at):
        assert batch_recursive_gap(refit_at=refit_at) <= 1e-8

    def test_refactorization_keeps_inverse(self):
        rng = np.random.default_rng(3)
        est = OnlineRidge(refactor_every=7).partial_fit(rng.standard_normal((50, 5)),
                                                         rng.standard_normal(50))
        np.testing.assert_allclose(est.V_inv_ @ est.V_, np.eye(5), atol=1e-10)

    def test_sklearn_params(self):
        est = OnlineRidge(lam=3.0)
        assert clone(est).get_params() == {"lam": 3.0, "refactor_every": 512}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.1, 10.0))
def test_recursive_equals_batch_property(seed, dim, lam):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((40, dim))
    Y = rng.standard_normal((40, 2))
    rec = OnlineRidge(lam=lam).partial_fit(Z, Y)
    batch = OnlineRidge(lam=lam).fit(Z, Y)
    np.testing.assert_allclose(rec.coef_, batch.coef_, atol=1e-8)


def _noiseless_stream(N, d):
    # a rotation neither decays nor blows up, so the data stay informative
    c, s = np.cos(0.3), np.sin(0.3)
    A = np.array([[c, -s], [s, c]])
    model = SystemModel(A, [[1, 0]], [[0, 1]], np.zeros((2, 2)), [[0.0]], [[0.0]])
    x = np.empty((N, 2))
    x[0] = [1.0, 0.5]
    for k in range(1, N):
        x[k] = A @ x[k - 1]
    traj = Trajectory(x=x, y=x[:, :1], y_e=x[:, 1:])
    return model, ObservationStream(traj, d)


class TestRunCofilter:
    def test_trace_shape(self, ex1):
        cfg = WindowConfig(beta=1.0, d=1, T_init=20, N_E=3)
        trace = run_cofilter(ObservationStream(gen_trajectory(ex1, 200, 0), 1), cfg)
        assert trace.k[0] == 21 and trace.k[-1] == required_length(20, 3) - 1
        assert np.all(np.diff(trace.k) == 1)
        assert list(trace.epoch_ends()) == [40, 80, 160]

    def test_learns_exact_dynamics(self):
        cfg = WindowConfig(beta=1.0, d=1, lam=1e-9, T_init=20, N_E=3)
        _, stream = _noiseless_stream(required_length(20, 3), 1)
        trace = run_cofilter(stream, cfg)
        late = trace.sq_err[trace.epoch > 1]
        assert late.max() < 1e-6

    def test_deterministic(self, ex1):
        cfg = WindowConfig(beta=2.0, d=2, T_init=20, N_E=3)
        traj = gen_trajectory(ex1, 200, 7)
        a = run_cofilter(ObservationStream(traj, 2), cfg)
        b = run_cofilter(ObservationStream(traj, 2), cfg)
        np.testing.assert_array_equal(a.y_pred, b.y_pred)

    def test_prediction_uses_pre_update_coefficients(self, ex1):
        cfg = WindowConfig(beta=1.0, d=1, T_init=20, N_E=1)
        traj = gen_trajectory(ex1, 60, 3)
        trace = run_cofilter(ObservationStream(traj, 1), cfg)
        # reproduce epoch 1 by hand: batch fit on t in [p+d, T-1], then predict-observe-update
        T, p = 21, cfg.p(21)
        ts = np.arange(p + 1, T)
        est = OnlineRidge(lam=1.0).fit(regressor_matrix(traj.y, traj.y_e, p, 1, ts), traj.y[ts])
        for row, k in enumerate(range(T, 2 * T - 1)):
            z = make_regressor(traj.y, traj.y_e, k, p, 1)
            yp = est.coef_ @ z
            np.testing.assert_allclose(trace.y_pred[row], yp, atol=1e-12)
            est.update(z, traj.y[k], yp)

    def test_stream_too_short(self, ex1):
        cfg = WindowConfig(beta=1.0, d=1, T_init=20, N_E=3)
        with pytest.raises(InsufficientHistoryError, match="epoch 3"):
            run_cofilter(ObservationStream(gen_trajectory(ex1, 120, 0), 1), cfg)

    def test_delay_mismatch(self, ex1):
        with pytest.raises(ValueError):
            run_cofilter(ObservationStream(gen_trajectory(ex1, 200, 0), 2), WindowConfig(d=1))

    def test_csv_output(self, ex1, tmp_path):
        cfg = WindowConfig(beta=1.0, d=1, T_init=20, N_E=1)
        trace = run_cofilter(ObservationStream(gen_trajectory(ex1, 60, 0), 1), cfg)
        path = tmp_path / "t.csv"
        trace.to_csv(path, comment="seed: 0")
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed: 0"
        assert lines[1].split(",")[:4] == ["k", "epoch", "p", "member"]
        assert len(lines) == 2 + len(trace)


class TestEnsemble:
    def test_single_member_equals_plain_run(self, ex1):
        cfg = WindowConfig(beta=1.5, d=1, T_init=20, N_E=3)
        traj = gen_trajectory(ex1, 200, 1)
        a = run_cofilter(ObservationStream(traj, 1), cfg)
        b = run_ensemble(ObservationStream(traj, 1), [cfg])
        np.testing.assert_array_equal(a.y_pred, b.y_pred)

    def test_selection_follows_past_errors(self, ex1):
        cfgs = [WindowConfig(beta=b, d=1, T_init=20, N_E=3) for b in (0.5, 1.0, 2.0)]
        trace = run_ensemble(ObservationStream(gen_trajectory(ex1, 200, 2), 1), cfgs)
        cum = np.vstack([np.zeros(3), np.cumsum(trace.member_sq_err, axis=0)[:-1]])
        np.testing.assert_array_equal(trace.member, np.argmin(cum, axis=1))
        assert trace.member[0] == 0  # tie at start goes to the lowest index

    def test_degenerate_member_dropped(self, ex1):
        cfgs = [WindowConfig(beta=1.0, d=1, T_init=20, N_E=2),
                WindowConfig(beta=50.0, d=1, T_init=20, N_E=2)]
        with pytest.warns(UserWarning, match="member 1"):
            trace = run_ensemble(ObservationStream(gen_trajectory(ex1, 100, 0), 1), cfgs)
        assert set(trace.member) == {0}
        assert trace.warnings

    def test_members_must_share_schedule(self, ex1):
        cfgs = [WindowConfig(T_init=20), WindowConfig(T_init=30)]
        with pytest.raises(ValueError):
            run_ensemble(ObservationStream(gen_trajectory(ex1, 500, 0), 1), cfgs)


class TestEstimator:
    def test_fit_predict(self, ex1):
        traj = gen_trajectory(ex1, required_length(20, 3), 0)
        est = CoFilter(beta=[1.0, 2.0], d=1, T_init=20, N_E=3).fit(traj.y, traj.y_e)
        assert len(est.trace_) == required_length(20, 3) - 21
        pred = est.predict(traj.y, traj.y_e)
        assert pred.shape == (len(traj) - est.p_ - 1 + 1, 1)

    def test_accepts_1d(self):
        _, stream = _noiseless_stream(required_length(10, 2), 0)
        y, ye = stream.trajectory.y[:, 0], stream.trajectory.y_e[:, 0]
        est = CoFilter(beta=1.0, d=0, lam=1e-9, T_init=10, N_E=2).fit(y, ye)
        pred = est.predict(y, ye)
        np.testing.assert_allclose(pred[:-1, 0], y[est.p_:], atol=1e-4)

    def test_params_round_trip(self):
        est = CoFilter(beta=1.5, d=3)
        assert clone(est).get_params()["d"] == 3
        assert est.set_params(lam=2.0).lam == 2.0
