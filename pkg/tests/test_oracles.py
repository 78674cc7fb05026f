import numpy as np
import pytest

from pcrlbdesign.design import DesignConfig, ObjectiveEvaluator
from pcrlbdesign.exceptions import CapacityError, OracleError
from pcrlbdesign.models import GaussianSsm, get_model, sample_prior, stack_states
from pcrlbdesign.oracles import (
    enumerate_objective,
    fd_h_blocks,
    grid_search,
    kalman_extended,
)
from pcrlbdesign.pcrlb import bound_trajectory, estimate_h_blocks
from pcrlbdesign.policy import build_input_space, make_template
from pcrlbdesign.streams import substream

from conftest import make_silent_model


class TestKalman:
    # hand arithmetic for the bias model, one step, u = 0.3:
    #   predicted cov [[2.01, 1], [1, 1]], innovation variance 2.02
    P1 = np.array(
        [
            [2.01 * 0.01 / 2.02, 0.01 / 2.02],
            [0.01 / 2.02, 1.02 / 2.02],
        ]
    )

    def test_first_step_covariance(self, bias):
        result = kalman_extended(bias, [[0.3]])
        np.testing.assert_array_equal(result.cov[0], bias.prior_cov)
        np.testing.assert_allclose(result.cov[1], self.P1, rtol=1e-12)

    def test_first_step_mean(self, bias):
        result = kalman_extended(bias, [[0.3]], y_seq=[[1.0]])
        np.testing.assert_array_equal(result.mean[0], bias.prior_mean)
        # prediction 0.8, innovation 0.2, gain (2.01, 1)/2.02
        np.testing.assert_allclose(
            result.mean[1],
            [0.8 + 0.2 * 2.01 / 2.02, 0.5 + 0.2 / 2.02],
            rtol=1e-12,
        )

    def test_covariance_ignores_data(self, bias, linear_u):
        rng = substream(1, 0)
        y = rng.standard_normal((linear_u.shape[0], 1))
        with_y = kalman_extended(bias, linear_u, y_seq=y)
        without = kalman_extended(bias, linear_u)
        assert without.mean is None
        np.testing.assert_array_equal(with_y.cov, without.cov)

    def test_uninformative_measurements_learn_nothing(self, linear_u):
        flat = get_model("bias", r_var=1e12)
        result = kalman_extended(flat, linear_u)
        np.testing.assert_allclose(result.cov[:, 1, 1], 1.0, rtol=1e-6)

    def test_rejects_nonlinear_model(self, benchmark):
        with pytest.raises(OracleError, match="not linear"):
            kalman_extended(benchmark, [[0.3]])

    def test_rejects_nan_jacobians(self, bias):
        # constant where defined, NaN on the negative half-line: the probe
        # spread is NaN and must be treated as "not linear", not swallowed
        def jfx(x, th, u):
            return (1.0 + 0.0 * np.sqrt(x))[:, :, None]

        broken = GaussianSsm(
            name="half-line",
            n=1,
            q=1,
            p=1,
            m=1,
            drift=lambda x, th, u: x + th + u,
            obs=lambda x, th, u: x,
            jac_drift_x=jfx,
            jac_drift_theta=lambda x, th, u: np.ones((x.shape[0], 1, 1)),
            jac_obs_x=lambda x, th, u: np.ones((x.shape[0], 1, 1)),
            jac_obs_theta=lambda x, th, u: np.zeros((x.shape[0], 1, 1)),
            q_cov=[[0.01]],
            r_cov=[[0.01]],
            prior_mean=[0.0, 0.5],
            prior_cov=np.eye(2),
        )
        with pytest.raises(OracleError, match="not linear"):
            kalman_extended(broken, [[0.3]])


@pytest.fixture(scope="module")
def linear_u():
    return np.where(np.arange(12) % 2 == 0, 0.8, -0.8).reshape(-1, 1)


@pytest.fixture(scope="module")
def bias_ensemble(bias):
    x_t, theta = stack_states(sample_prior(bias, 64, substream(3, 0)))
    x_next = bias.drift(x_t, theta, np.array([0.3]))
    return x_t, theta, x_next


class TestFdBlocks:
    def test_matches_closed_blocks_on_linear_model(self, bias, bias_ensemble):
        """The step density of the linear model is exactly quadratic, so the
        central differences agree with the closed forms to rounding error."""
        x_t, theta, x_next = bias_ensemble
        fd = fd_h_blocks(bias, x_t, theta, x_next, [0.3], [0.3])
        closed = estimate_h_blocks(bias, x_t, theta, x_next, [0.3], [0.3])
        means = fd.means()
        for name in ("h11", "h12", "h13", "h22", "h23", "h33"):
            np.testing.assert_allclose(
                getattr(means, name), getattr(closed, name), atol=1e-5
            )

    def test_per_sample_shapes(self, bias, bias_ensemble):
        x_t, theta, x_next = bias_ensemble
        fd = fd_h_blocks(bias, x_t, theta, x_next, [0.3], [0.3])
        assert fd.h11.shape == (64, 1, 1)
        assert fd.h12.shape == (64, 1, 1)
        assert fd.h22.shape == (64, 1, 1)
        assert fd.means().h33.shape == (1, 1)

    @pytest.mark.parametrize("step", [1e-8, 1e-2])
    def test_step_bounds(self, bias, bias_ensemble, step):
        x_t, theta, x_next = bias_ensemble
        with pytest.raises(OracleError, match="outside"):
            fd_h_blocks(bias, x_t, theta, x_next, [0.3], [0.3], step=step)

    def test_silent_model_observation_terms_vanish(self):
        model = make_silent_model(q_var=0.04)
        x_t, theta = stack_states(sample_prior(model, 32, substream(4, 0)))
        x_next = model.drift(x_t, theta, np.array([0.1]))
        fd = fd_h_blocks(model, x_t, theta, x_next, [0.1], [0.1])
        np.testing.assert_allclose(fd.means().h33, [[25.0]], atol=1e-5)
        closed = estimate_h_blocks(model, x_t, theta, x_next, [0.1], [0.1])
        np.testing.assert_array_equal(closed.h33, model.q_inv)

    def test_unsuitable_step_detected(self):
        """A drift oscillating at wavelength ~ the probe step makes the two
        Richardson passes disagree; that must be reported, not returned."""
        omega = 1e4

        def drift(x, th, u):
            return np.cos(omega * x) + th + u

        def jfx(x, th, u):
            return (-omega * np.sin(omega * x))[:, :, None]

        wobbly = GaussianSsm(
            name="wobbly",
            n=1,
            q=1,
            p=1,
            m=1,
            drift=drift,
            obs=lambda x, th, u: x,
            jac_drift_x=jfx,
            jac_drift_theta=lambda x, th, u: np.ones((x.shape[0], 1, 1)),
            jac_obs_x=lambda x, th, u: np.ones((x.shape[0], 1, 1)),
            jac_obs_theta=lambda x, th, u: np.zeros((x.shape[0], 1, 1)),
            q_cov=[[0.01]],
            r_cov=[[0.01]],
            prior_mean=[0.0, 0.5],
            prior_cov=np.eye(2),
        )
        x_t, theta = stack_states(sample_prior(wobbly, 8, substream(5, 0)))
        x_next = wobbly.drift(x_t, theta, np.array([0.1]))
        with pytest.raises(OracleError, match="disagree"):
            fd_h_blocks(wobbly, x_t, theta, x_next, [0.1], [0.1])


class TestEnumerate:
    def test_uniform_policy_averages_all_sequences(self, benchmark):
        space = build_input_space(-0.8, 0.8, 2, benchmark.p, 0)
        template = make_template("case4", space)
        value = enumerate_objective(
            benchmark, template, (), n_steps=2, m_samples=40, seed=7
        )
        sums = []
        for i in range(2):
            for j in range(2):
                u_seq = space.grid[[i, j]]
                traj = bound_trajectory(benchmark, u_seq, m_samples=40, seed=7)
                sums.append(traj.phi_values.sum())
        assert value == pytest.approx(np.mean(sums), rel=1e-12)

    def test_degenerate_policy_keeps_one_sequence(self, benchmark):
        # stay probabilities of one collapse the chain onto the all-low path
        space = build_input_space(-0.8, 0.8, 2, benchmark.p, 0)
        template = make_template("case2", space)
        value = enumerate_objective(
            benchmark, template, (1.0, 1.0), n_steps=3, m_samples=40, seed=7
        )
        u_low = np.repeat(space.grid[[0]], 3, axis=0)
        traj = bound_trajectory(benchmark, u_low, m_samples=40, seed=7)
        assert value == pytest.approx(traj.phi_values.sum(), rel=1e-12)

    def test_sequence_cap(self, benchmark):
        space = build_input_space(-0.8, 0.8, 2, benchmark.p, 0)
        template = make_template("case4", space)
        with pytest.raises(CapacityError, match="cap"):
            enumerate_objective(benchmark, template, (), n_steps=13, m_samples=10)


class TestGridSearch:
    def _config(self, model, case):
        space = build_input_space(-0.8, 0.8, 2, model.p, 0)
        return DesignConfig(
            model=model,
            template=make_template(case, space),
            n_steps=8,
            m_samples=32,
            m_inputs=8,
            seed=2,
        )

    def test_one_dimensional_sweep(self, benchmark):
        config = self._config(benchmark, "case1")
        result = grid_search(config, points=5)
        assert result.values.shape == (5,)
        assert result.objective == result.values.min()
        node = int(np.argmin(result.values))
        assert result.phi_star[0] == result.grid[node]
        # grid nodes reuse the optimizer's evaluator verbatim
        check = ObjectiveEvaluator(config).evaluate((result.grid[2],)).value
        assert result.values[2] == check

    def test_two_dimensional_sweep(self, benchmark):
        result = grid_search(self._config(benchmark, "case2"), points=4)
        assert result.values.shape == (4, 4)
        assert result.objective == result.values.min()

    def test_zero_parameters_rejected(self, benchmark):
        with pytest.raises(OracleError, match="1 or 2"):
            grid_search(self._config(benchmark, "case4"))
