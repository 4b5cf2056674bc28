import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopfilter.exceptions import StreamHorizonError
from coopfilter.model import SystemModel, spectral_profile
from coopfilter.simulate import (
    ObservationStream,
    gen_consensus_system,
    gen_trajectory,
    load_trajectory_csv,
    noise_factor,
)


def test_zero_noise_is_deterministic_power_sequence():
    A = np.array([[0.5, 0.2], [0.0, 0.9]])
    Z = np.zeros((2, 2))
    model = SystemModel(A, [[1, 0]], [[0, 1]], Z, [[0.0]], [[0.0]])
    x0 = np.array([1.0, -2.0])
    traj = gen_trajectory(model, 6, seed=0, x0=x0)
    for k in range(6):
        np.testing.assert_allclose(traj.x[k], np.linalg.matrix_power(A, k) @ x0)
    np.testing.assert_allclose(traj.y[:, 0], traj.x[:, 0])


def test_measurement_noise_covariance(ex1):
    traj = gen_trajectory(ex1, 10_000, seed=4)
    v = traj.y - traj.x @ ex1.C.T
    assert np.var(v) == pytest.approx(ex1.R[0, 0], rel=0.05)


def test_experiment_noise_level():
    model = gen_consensus_system(10, seed=0)
    traj = gen_trajectory(model, 10_000, seed=5)
    v = traj.y - traj.x @ model.C.T
    assert np.var(v) == pytest.approx(0.01, rel=0.05)


def test_same_seed_bit_identical(ex1):
    a, b = gen_trajectory(ex1, 200, seed=9), gen_trajectory(ex1, 200, seed=9)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.y_e, b.y_e)


def test_different_seeds_differ(ex1):
    assert not np.array_equal(gen_trajectory(ex1, 50, 1).y, gen_trajectory(ex1, 50, 2).y)


def test_batch_axis(ex1):
    traj = gen_trajectory(ex1, 30, seed=0, batch=4)
    assert traj.y.shape == (30, 4, 1) and traj.x.shape == (30, 4, 2)
    assert traj.y_c.shape == (30, 4, 2)


def test_noise_factor_psd_fallback():
    S = np.diag([2.0, 0.0])
    F = noise_factor(S)
    np.testing.assert_allclose(F @ F.T, S, atol=1e-12)


class TestStream:
    def _stream(self, ex1, d, N=10):
        return ObservationStream(gen_trajectory(ex1, N, seed=0), d)

    def test_zero_delay(self, ex1):
        s = self._stream(ex1, 0)
        s.advance(to=3)
        np.testing.assert_array_equal(s.external(3), s.trajectory.y_e[3])

    def test_nothing_external_early(self, ex1):
        s = self._stream(ex1, 3)
        s.advance(to=2)
        assert len(s.readable_external) == 0
        with pytest.raises(StreamHorizonError):
            s.external(0)

    def test_readable_window(self, ex1):
        s = self._stream(ex1, 1)
        s.advance(to=5)
        assert len(s.readable_external) == 5
        assert len(s.readable_local) == 6
        s.external(4)
        with pytest.raises(StreamHorizonError):
            s.external(5)
        with pytest.raises(StreamHorizonError):
            s.local(6)

    def test_cannot_pass_end(self, ex1):
        s = self._stream(ex1, 1, N=5)
        with pytest.raises(StreamHorizonError):
            s.advance(to=5)

    def test_cannot_rewind(self, ex1):
        s = self._stream(ex1, 1)
        s.advance(to=4)
        with pytest.raises(ValueError):
            s.advance(to=2)

    def test_negative_delay(self, ex1):
        with pytest.raises(ValueError):
            self._stream(ex1, -1)


class TestConsensus:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 10_000))
    def test_row_stochastic(self, n, seed):
        model = gen_consensus_system(n, seed)
        np.testing.assert_allclose(model.A.sum(axis=1), 1.0, atol=1e-12)
        prof = spectral_profile(model)
        assert prof.rho_A == pytest.approx(1.0, abs=1e-10)
        assert prof.kappa == 1

    def test_seeds_differ(self):
        assert not np.array_equal(gen_consensus_system(10, 0).A, gen_consensus_system(10, 1).A)


class TestCSV:
    def test_zero_noise(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("1\n2\n3\n")
        traj = load_trajectory_csv(path, sigma=0.0, seed=0)
        np.testing.assert_array_equal(traj.y[:, 0], [1, 2, 3])
        np.testing.assert_array_equal(traj.y_e[:, 0], [1, 2, 3])
        assert traj.model_free_only

    def test_noise_variance(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("value\n" + "\n".join(str(np.sin(i / 10)) for i in range(10_000)))
        traj = load_trajectory_csv(path, sigma=0.1, seed=1)
        assert np.var(traj.y - traj.x) == pytest.approx(0.1, rel=0.1)

    def test_header_only(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("a,b\n")
        with pytest.raises(ValueError, match="no data"):
            load_trajectory_csv(path, 0.1, 0)

    def test_ragged(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("1,2\n3\n")
        with pytest.raises(ValueError, match="ragged"):
            load_trajectory_csv(path, 0.1, 0)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "n.csv"
        path.write_text("1,2\n3,x\n")
        with pytest.raises(ValueError, match="non-numeric"):
            load_trajectory_csv(path, 0.1, 0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_trajectory_csv(tmp_path / "nope.csv", 0.1, 0)
