"""Gaussian state-space models with static unknown parameters.

The joint vector z_t = (x_t, theta) stacks an n-dimensional state with q
static parameters. Dynamics and measurements are additive Gaussian:

    x_{t+1} = drift(x_t, theta, u_t) + v_t,   v_t ~ N(0, Q)
    y_t     = obs(x_t, theta, u) + w_t,       w_t ~ N(0, R)

Model maps are batched over a leading sample axis: states (B, n),
parameters (B, q), one input vector (p,). Jacobians use the standard
orientation, jac[i, j] = d out_i / d in_j, stacked to (B, out, in).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .exceptions import ModelDefinitionError, SimulationDivergenceError

Array = np.ndarray
ModelMap = Callable[[Array, Array, Array], Array]


def _as_spd(name: str, a, dim: int) -> Array:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.shape != (dim, dim):
        raise ModelDefinitionError(f"{name} must be {dim}x{dim}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ModelDefinitionError(f"{name} has non-finite entries")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise ModelDefinitionError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ModelDefinitionError(f"{name} is not positive definite") from None
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianSsm:
    """Additive-Gaussian state-space model with q static parameters."""

    name: str
    n: int
    q: int
    p: int
    m: int
    drift: ModelMap
    obs: ModelMap
    jac_drift_x: ModelMap      # (B, n, n)
    jac_drift_theta: ModelMap  # (B, n, q)
    jac_obs_x: ModelMap        # (B, m, n)
    jac_obs_theta: ModelMap    # (B, m, q)
    q_cov: Array
    r_cov: Array
    prior_mean: Array          # (n + q,)
    prior_cov: Array           # (n + q, n + q)

    def __post_init__(self):
        for dim_name in ("n", "q", "p", "m"):
            if int(getattr(self, dim_name)) < 1:
                raise ModelDefinitionError(f"dimension {dim_name} must be >= 1")
        object.__setattr__(self, "q_cov", _as_spd("q_cov", self.q_cov, self.n))
        object.__setattr__(self, "r_cov", _as_spd("r_cov", self.r_cov, self.m))
        mean = np.asarray(self.prior_mean, dtype=np.float64).reshape(-1)
        if mean.shape != (self.n + self.q,):
            raise ModelDefinitionError(
                f"prior_mean must have length n+q={self.n + self.q}, got {mean.shape}"
            )
        if not np.all(np.isfinite(mean)):
            raise ModelDefinitionError("prior_mean has non-finite entries")
        mean.setflags(write=False)
        object.__setattr__(self, "prior_mean", mean)
        object.__setattr__(
            self, "prior_cov", _as_spd("prior_cov", self.prior_cov, self.n + self.q)
        )

    @property
    def s(self) -> int:
        """Joint dimension n + q."""
        return self.n + self.q

    @cached_property
    def chol_q(self) -> Array:
        return np.linalg.cholesky(self.q_cov)

    @cached_property
    def chol_r(self) -> Array:
        return np.linalg.cholesky(self.r_cov)

    @cached_property
    def chol_prior(self) -> Array:
        return np.linalg.cholesky(self.prior_cov)

    @cached_property
    def q_inv(self) -> Array:
        return np.linalg.inv(self.q_cov)

    @cached_property
    def r_inv(self) -> Array:
        return np.linalg.inv(self.r_cov)


@dataclass(frozen=True)
class ExtendedState:
    """One joint sample (x, theta)."""

    x: Array
    theta: Array

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64).reshape(-1))

    @property
    def z(self) -> Array:
        return np.concatenate([self.x, self.theta])


@dataclass
class SampleEnsemble:
    """M simulated joint paths sharing one input sequence.

    states[j, t] holds x_t for t = 0..N, meas[j, t] holds y_{t+1} for
    t = 0..N-1 (the first measurement is taken after the first transition).
    """

    u_seq: Array    # (N, p)
    theta: Array    # (M, q)
    states: Array   # (M, N + 1, n)
    meas: Array     # (M, N, m)

    @property
    def count(self) -> int:
        return self.theta.shape[0]

    @property
    def horizon(self) -> int:
        return self.u_seq.shape[0]

    def step_arrays(self, t: int) -> tuple[Array, Array, Array]:
        """(x_t, theta, x_{t+1}) slices for the transition at step t."""
        if not 0 <= t < self.horizon:
            raise IndexError(f"step {t} outside horizon {self.horizon}")
        return self.states[:, t, :], self.theta, self.states[:, t + 1, :]


def coerce_inputs(u_seq, p: int) -> Array:
    """Validate an input sequence into shape (N, p) float64."""
    u = np.asarray(u_seq, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != p:
        raise ValueError(f"input sequence must be (N, {p}), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("input sequence has non-finite entries")
    return np.ascontiguousarray(u)


def meas_input(u_seq: Array, t: int) -> Array:
    """Input applied at the measurement taken at time t (1-based).

    The measurement at time t shares the input driving the transition out
    of x_t; at the horizon the last input is reused.
    """
    return u_seq[min(t, u_seq.shape[0] - 1)]


def sample_prior(model: GaussianSsm, count: int, rng: np.random.Generator) -> list[ExtendedState]:
    """Draw joint (x_0, theta) samples from the model prior."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = model.prior_mean + rng.standard_normal((count, model.s)) @ model.chol_prior.T
    return [ExtendedState(x=z[j, : model.n], theta=z[j, model.n :]) for j in range(count)]


def stack_states(initial: Sequence[ExtendedState] | tuple) -> tuple[Array, Array]:
    """Stack initial conditions into (x0 (M, n), theta (M, q)) arrays."""
    if isinstance(initial, tuple) and len(initial) == 2 and not isinstance(initial[0], ExtendedState):
        x0 = np.atleast_2d(np.asarray(initial[0], dtype=np.float64))
        theta = np.atleast_2d(np.asarray(initial[1], dtype=np.float64))
    else:
        x0 = np.stack([st.x for st in initial])
        theta = np.stack([st.theta for st in initial])
    if x0.shape[0] != theta.shape[0]:
        raise ValueError("state and parameter sample counts differ")
    return np.ascontiguousarray(x0), np.ascontiguousarray(theta)


def simulate_paths(
    model: GaussianSsm,
    u_seq,
    initial: Sequence[ExtendedState] | tuple,
    rng: np.random.Generator,
) -> SampleEnsemble:
    """Propagate M joint samples through N steps of one input sequence.

    Parameters are held fixed per path. Noise is drawn as whole
    (step, sample) tables before the loop, so the realized noise at a
    given slot does not depend on the input sequence (common random
    numbers across candidate designs). Raises SimulationDivergenceError
    naming the first offending path and time if a state leaves float
    range.
    """
    u = coerce_inputs(u_seq, model.p)
    n_steps = u.shape[0]
    x0, theta = stack_states(initial)
    m_count = x0.shape[0]
    if x0.shape[1] != model.n or theta.shape[1] != model.q:
        raise ValueError("initial sample dimensions do not match the model")

    v = rng.standard_normal((n_steps, m_count, model.n)) @ model.chol_q.T
    w = rng.standard_normal((n_steps, m_count, model.m)) @ model.chol_r.T

    states = np.empty((m_count, n_steps + 1, model.n))
    meas = np.empty((m_count, n_steps, model.m))
    states[:, 0, :] = x0
    x = x0
    for t in range(n_steps):
        x = model.drift(x, theta, u[t]) + v[t]
        bad = ~np.all(np.isfinite(x), axis=1)
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise SimulationDivergenceError(
                f"state diverged on path {j} at time {t + 1}", path=j, time=t + 1
            )
        states[:, t + 1, :] = x
        meas[:, t, :] = model.obs(x, theta, meas_input(u, t + 1)) + w[t]
    return SampleEnsemble(u_seq=u, theta=theta, states=states, meas=meas)


# --- built-in models ---------------------------------------------------------


def _benchmark_drift(x, th, u):
    xx = x[:, 0]
    return (th[:, 0] * xx + xx / (th[:, 1] + xx * xx) + u[0])[:, None]


def _benchmark_jac_drift_x(x, th, u):
    xx = x[:, 0]
    den = th[:, 1] + xx * xx
    return (th[:, 0] + (th[:, 1] - xx * xx) / (den * den))[:, None, None]


def _benchmark_jac_drift_theta(x, th, u):
    xx = x[:, 0]
    den = th[:, 1] + xx * xx
    out = np.zeros((x.shape[0], 1, 4))
    out[:, 0, 0] = xx
    out[:, 0, 1] = -xx / (den * den)
    return out


def _benchmark_obs(x, th, u):
    xx = x[:, 0]
    return (th[:, 2] * xx + th[:, 3] * xx * xx)[:, None]


def _benchmark_jac_obs_x(x, th, u):
    return (th[:, 2] + 2.0 * th[:, 3] * x[:, 0])[:, None, None]


def _benchmark_jac_obs_theta(x, th, u):
    xx = x[:, 0]
    out = np.zeros((x.shape[0], 1, 4))
    out[:, 0, 2] = xx
    out[:, 0, 3] = xx * xx
    return out


def make_benchmark_model(q_var: float = 0.01, r_var: float = 0.01) -> GaussianSsm:
    """Scalar rational-drift model with quadratic observation, theta = (a, b, c, d).

        x_{t+1} = a x_t + x_t / (b + x_t^2) + u_t + v_t
        y_t     = c x_t + d x_t^2 + w_t
    """
    return GaussianSsm(
        name="benchmark",
        n=1,
        q=4,
        p=1,
        m=1,
        drift=_benchmark_drift,
        obs=_benchmark_obs,
        jac_drift_x=_benchmark_jac_drift_x,
        jac_drift_theta=_benchmark_jac_drift_theta,
        jac_obs_x=_benchmark_jac_obs_x,
        jac_obs_theta=_benchmark_jac_obs_theta,
        q_cov=[[q_var]],
        r_cov=[[r_var]],
        prior_mean=[1.0, 0.7, 0.6, 0.5, 0.4],
        prior_cov=np.diag([0.01] * 5),
    )


def _bias_drift(x, th, u):
    return x + th + u[0]


def _bias_jac_drift_x(x, th, u):
    return np.ones((x.shape[0], 1, 1))


def _bias_jac_drift_theta(x, th, u):
    return np.ones((x.shape[0], 1, 1))


def _bias_obs(x, th, u):
    return x.copy()


def _bias_jac_obs_x(x, th, u):
    return np.ones((x.shape[0], 1, 1))


def _bias_jac_obs_theta(x, th, u):
    return np.zeros((x.shape[0], 1, 1))


def make_bias_model(
    q_var: float = 0.01,
    r_var: float = 0.01,
    prior_mean=(0.0, 0.5),
    prior_cov=None,
) -> GaussianSsm:
    """Random-walk-with-unknown-drift model, fully linear in (x, theta).

        x_{t+1} = x_t + theta + u_t + v_t
        y_t     = x_t + w_t

    Linear-Gaussian throughout, so an extended Kalman information filter
    gives its bound exactly; used as the closed-form cross-check model.
    """
    if prior_cov is None:
        prior_cov = np.diag([1.0, 1.0])
    return GaussianSsm(
        name="bias",
        n=1,
        q=1,
        p=1,
        m=1,
        drift=_bias_drift,
        obs=_bias_obs,
        jac_drift_x=_bias_jac_drift_x,
        jac_drift_theta=_bias_jac_drift_theta,
        jac_obs_x=_bias_jac_obs_x,
        jac_obs_theta=_bias_jac_obs_theta,
        q_cov=[[q_var]],
        r_cov=[[r_var]],
        prior_mean=prior_mean,
        prior_cov=prior_cov,
    )


_FACTORIES: dict[str, Callable[..., GaussianSsm]] = {
    "benchmark": make_benchmark_model,
    "bias": make_bias_model,
}


def register_model(name: str, factory: Callable[..., GaussianSsm]) -> None:
    """Register a model factory under a name usable from configs."""
    _FACTORIES[str(name)] = factory


def available_models() -> tuple[str, ...]:
    return tuple(sorted(_FACTORIES))


def get_model(name: str, **kwargs) -> GaussianSsm:
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ModelDefinitionError(
            f"unknown model {name!r}; registered: {', '.join(available_models())}"
        ) from None
    return factory(**kwargs)
