import numpy as np
import pytest

from pcrlbdesign import pcrlb
from pcrlbdesign.exceptions import (
    BoundDegeneracyError,
    InformationUpdateError,
    SimulationDivergenceError,
)
from pcrlbdesign.models import make_bias_model, sample_prior, stack_states
from pcrlbdesign.pcrlb import (
    STATUS_BOUND_DEGENERATE,
    STATUS_DIVERGED,
    STATUS_OK,
    STATUS_UPDATE_FAILED,
    BoundTables,
    bound_trajectory,
    estimate_h_blocks,
    init_pim,
    lower_bound_theta,
    phi_logdet,
    phi_trace,
    raise_for_status,
    run_bound_batch,
    update_pim,
    write_bound_trajectory_csv,
)
from pcrlbdesign.streams import STREAM_NOISE, substream

from conftest import prbs_inputs


class TestInit:
    def test_initial_information_is_inverse_prior(self, benchmark):
        pim = init_pim(benchmark)
        j = np.linalg.inv(benchmark.prior_cov)
        np.testing.assert_allclose(pim.jx, j[:1, :1], rtol=1e-12)
        np.testing.assert_allclose(pim.jxt, j[:1, 1:], rtol=1e-12)
        np.testing.assert_allclose(pim.jt, j[1:, 1:], rtol=1e-12)

    def test_correlated_prior_partition(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        model = make_bias_model(prior_cov=cov)
        pim = init_pim(model)
        j = np.linalg.inv(cov)
        assert pim.jx[0, 0] == pytest.approx(j[0, 0], rel=1e-12)
        assert pim.jxt[0, 0] == pytest.approx(j[0, 1], rel=1e-12)
        assert pim.jt[0, 0] == pytest.approx(j[1, 1], rel=1e-12)


class TestSchurBound:
    def test_matches_direct_joint_inverse(self):
        rng = np.random.default_rng(5)
        for n, q in ((1, 4), (2, 3), (3, 1)):
            a = rng.normal(size=(n + q, n + q))
            joint = a @ a.T + (n + q) * np.eye(n + q)
            pim = pcrlb.Pim(
                jx=joint[:n, :n].copy(), jxt=joint[:n, n:].copy(), jt=joint[n:, n:].copy()
            )
            expect = np.linalg.inv(joint)[n:, n:]
            np.testing.assert_allclose(lower_bound_theta(pim), expect, rtol=1e-10)


class TestBiasBlocks:
    """All Jacobians of the drift-bias model are 0/1, so every block is exact."""

    def test_closed_forms(self, bias):
        rng = np.random.default_rng(2)
        x_t, theta = stack_states(sample_prior(bias, 16, rng))
        x_next = bias.drift(x_t, theta, np.array([0.1]))
        h = estimate_h_blocks(bias, x_t, theta, x_next, np.array([0.1]), np.array([0.2]))
        assert h.h11[0, 0] == pytest.approx(100.0, rel=1e-12)
        assert h.h12[0, 0] == pytest.approx(100.0, rel=1e-12)
        assert h.h13[0, 0] == pytest.approx(-100.0, rel=1e-12)
        assert h.h22[0, 0] == pytest.approx(100.0, rel=1e-12)
        assert h.h23[0, 0] == pytest.approx(-100.0, rel=1e-12)
        assert h.h33[0, 0] == pytest.approx(200.0, rel=1e-12)

    def test_one_recursion_step_matches_hand_kalman(self, bias):
        # prior I_2, Q = R = 0.01: posterior theta variance after one
        # measurement is 1.02/2.02
        rng = np.random.default_rng(2)
        x_t, theta = stack_states(sample_prior(bias, 8, rng))
        x_next = bias.drift(x_t, theta, np.array([0.1]))
        h = estimate_h_blocks(bias, x_t, theta, x_next, np.array([0.1]), np.array([0.1]))
        pim = update_pim(init_pim(bias), h)
        bound = lower_bound_theta(pim)
        assert bound[0, 0] == pytest.approx(1.02 / 2.02, rel=1e-12)


class TestBoundTrajectory:
    def test_bias_first_step_value(self, bias):
        traj = bound_trajectory(bias, prbs_inputs(4, level=0.5), m_samples=2, seed=0)
        assert traj.ltheta[0, 0, 0] == pytest.approx(0.50495049504950495, rel=1e-12)
        assert traj.phi_values[0] == pytest.approx(traj.ltheta[0, 0, 0], rel=1e-15)

    def test_bound_decreases_monotonically_for_linear_model(self, bias):
        # static parameter, exact recursion: information only accumulates
        traj = bound_trajectory(bias, prbs_inputs(30), m_samples=2, seed=0)
        diffs = np.diff(traj.ltheta[:, 0, 0])
        assert np.all(diffs <= 1e-15)

    def test_seed_reproducibility(self, benchmark):
        a = bound_trajectory(benchmark, prbs_inputs(6), m_samples=32, seed=9)
        b = bound_trajectory(benchmark, prbs_inputs(6), m_samples=32, seed=9)
        np.testing.assert_array_equal(a.ltheta, b.ltheta)

    def test_rejects_single_sample(self, benchmark):
        with pytest.raises(ValueError):
            bound_trajectory(benchmark, prbs_inputs(4), m_samples=1)

    def test_csv_layout(self, bias, tmp_path):
        traj = bound_trajectory(bias, prbs_inputs(3), m_samples=2, seed=0)
        path = tmp_path / "trace.csv"
        write_bound_trajectory_csv(traj, path, meta="seed=0 config=abc")
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=0 config=abc"
        assert lines[1] == "t,phi,l11"
        assert len(lines) == 5
        assert lines[2].startswith("1,")


class TestRunBoundBatch:
    def test_output_shapes_and_status(self, benchmark):
        tables = BoundTables.draw(benchmark, 5, 16, substream(0, STREAM_NOISE))
        u_paths = np.stack([prbs_inputs(5), -prbs_inputs(5)])
        out_l, status = run_bound_batch(benchmark, u_paths, tables)
        assert out_l.shape == (2, 5, 4, 4)
        assert status.shape == (2, 2)
        assert np.all(status[:, 0] == STATUS_OK)
        # bound matrices are symmetric PSD
        np.testing.assert_allclose(out_l, np.swapaxes(out_l, -1, -2), atol=1e-12)
        eigs = np.linalg.eigvalsh(out_l.reshape(-1, 4, 4))
        assert eigs.min() > 0

    def test_phi_trace_and_logdet(self):
        mats = np.array([[[2.0, 0.0], [0.0, 3.0]]])
        assert phi_trace(mats)[0] == pytest.approx(5.0)
        assert phi_logdet(mats)[0] == pytest.approx(np.log(6.0))

    def test_phi_logdet_rejects_indefinite(self):
        mats = np.array([[[1.0, 0.0], [0.0, -1.0]]])
        with pytest.raises(BoundDegeneracyError):
            phi_logdet(mats)


class TestRaiseForStatus:
    def test_silent_on_ok(self):
        raise_for_status(np.zeros((3, 2), dtype=np.int64))

    def test_divergence_reports_first_bad_path(self):
        status = np.zeros((4, 2), dtype=np.int64)
        status[2] = (STATUS_DIVERGED, 7)
        status[3] = (STATUS_UPDATE_FAILED, 1)
        with pytest.raises(SimulationDivergenceError) as err:
            raise_for_status(status, context="unit test")
        assert err.value.path == 2
        assert err.value.time == 7
        assert "unit test" in str(err.value)

    def test_update_failure(self):
        status = np.zeros((1, 2), dtype=np.int64)
        status[0] = (STATUS_UPDATE_FAILED, 3)
        with pytest.raises(InformationUpdateError) as err:
            raise_for_status(status)
        assert err.value.time == 3

    def test_degenerate_bound(self):
        status = np.zeros((1, 2), dtype=np.int64)
        status[0] = (STATUS_BOUND_DEGENERATE, 2)
        with pytest.raises(BoundDegeneracyError):
            raise_for_status(status)


class TestBoundTables:
    def test_shapes_and_determinism(self, benchmark):
        a = BoundTables.draw(benchmark, 6, 10, substream(4, STREAM_NOISE))
        b = BoundTables.draw(benchmark, 6, 10, substream(4, STREAM_NOISE))
        assert a.x0.shape == (10, 1)
        assert a.theta.shape == (10, 4)
        assert a.v_scaled.shape == (6, 10, 1)
        np.testing.assert_array_equal(a.x0, b.x0)
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.v_scaled, b.v_scaled)

    def test_prefix_property(self, benchmark):
        """A longer horizon extends the noise table without reshuffling draws."""
        short = BoundTables.draw(benchmark, 4, 12, substream(4, STREAM_NOISE))
        long = BoundTables.draw(benchmark, 9, 12, substream(4, STREAM_NOISE))
        np.testing.assert_array_equal(short.x0, long.x0)
        np.testing.assert_array_equal(short.theta, long.theta)
