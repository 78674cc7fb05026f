"""Joint state/parameter particle filter and the MSE validation experiment.

The filter tracks the joint posterior over (state, parameters) with a
kernel-shrinkage move on the parameter particles (artificial dynamics:
shrink toward the weighted mean, then add kernel noise scaled so the
weighted parameter covariance is preserved). Systematic resampling kicks
in when the effective sample size drops below a fraction of the particle
count.

The validation experiment simulates ground truth at a known parameter
vector, filters each run, and averages the squared parameter-estimate
error across runs for comparison with the bound trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import pcrlb
from .exceptions import EstimatorDegeneracyError
from .models import ExtendedState, GaussianSsm, coerce_inputs, meas_input, simulate_paths
from .policy import MarkovInputPolicy, sample_sequence, sequences_from_uniforms
from .streams import STREAM_INPUTS, STREAM_NOISE, STREAM_VALIDATE, BoundTables, substream


@dataclass(frozen=True)
class SmcConfig:
    n_particles: int = 1000
    ess_threshold: float = 0.5
    shrinkage: float = 0.98
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 100:
            raise ValueError("need at least 100 particles")
        if not 0.0 < self.ess_threshold <= 1.0:
            raise ValueError("resampling threshold must lie in (0, 1]")
        if not 0.9 < self.shrinkage < 1.0:
            raise ValueError("kernel shrinkage must lie in (0.9, 1)")


@dataclass(frozen=True)
class SmcResult:
    """Posterior summaries per time step, index 0 being the prior."""

    x_mean: np.ndarray  # (N+1, n)
    theta_mean: np.ndarray  # (N+1, q)
    theta_cov: np.ndarray  # (N+1, q, q)
    ess: np.ndarray  # (N+1,)
    n_resampled: int


def _systematic_resample(weights: np.ndarray, rng) -> np.ndarray:
    count = weights.shape[0]
    positions = (rng.random() + np.arange(count)) / count
    return np.searchsorted(np.cumsum(weights), positions)


def _gaussian_loglik(resid: np.ndarray, chol_r: np.ndarray) -> np.ndarray:
    """Log N(resid; 0, R) for each row, via the Cholesky factor of R.

    Non-finite residuals (overflowed particles, corrupt measurements) get
    log-likelihood -inf instead of tripping the finiteness check inside
    the triangular solve.
    """
    m = resid.shape[1]
    out = np.full(resid.shape[0], -math.inf)
    ok = np.isfinite(resid).all(axis=1)
    if ok.any():
        white = solve_triangular(chol_r, resid[ok].T, lower=True)
        log_norm = m * math.log(2.0 * math.pi) + 2.0 * np.log(np.diag(chol_r)).sum()
        out[ok] = -0.5 * ((white**2).sum(axis=0) + log_norm)
    return out


def smc_joint_estimate(model: GaussianSsm, u_seq, y_seq, config: SmcConfig, rng=None) -> SmcResult:
    """Filter one input/measurement record; returns posterior means per step.

    Raises EstimatorDegeneracyError when every particle weight underflows.
    """
    if rng is None:
        rng = substream(config.seed, STREAM_VALIDATE)
    u_seq = coerce_inputs(u_seq, model.p)
    y_seq = np.asarray(y_seq, dtype=np.float64).reshape(-1, model.m)
    n_steps = u_seq.shape[0]
    if y_seq.shape[0] != n_steps:
        raise ValueError(
            f"got {y_seq.shape[0]} measurements for {n_steps} inputs"
        )

    n, q = model.n, model.q
    np_count = config.n_particles
    eps = rng.standard_normal((np_count, model.s))
    z = model.prior_mean + eps @ model.chol_prior.T
    x = z[:, :n].copy()
    theta = z[:, n:].copy()
    logw = np.full(np_count, -math.log(np_count))

    shrink = config.shrinkage
    kernel_var = 1.0 - shrink * shrink

    x_mean = np.empty((n_steps + 1, n))
    theta_mean = np.empty((n_steps + 1, q))
    theta_cov = np.empty((n_steps + 1, q, q))
    ess_hist = np.empty(n_steps + 1)
    n_resampled = 0

    def _weighted_summary(step: int):
        w = np.exp(logw - logw.max())
        w /= w.sum()
        x_mean[step] = w @ x
        tm = w @ theta
        theta_mean[step] = tm
        centered = theta - tm
        theta_cov[step] = (w[:, None] * centered).T @ centered
        ess_hist[step] = 1.0 / np.square(w).sum()
        return w

    w = _weighted_summary(0)

    for step in range(1, n_steps + 1):
        # kernel-shrinkage move keeps the weighted parameter spread
        tm = theta_mean[step - 1]
        cov = theta_cov[step - 1] + 1e-12 * np.eye(q)
        kern = np.linalg.cholesky(kernel_var * cov)
        theta = shrink * theta + (1.0 - shrink) * tm
        theta += rng.standard_normal((np_count, q)) @ kern.T

        # propagate states under the step's input
        noise = rng.standard_normal((np_count, n)) @ model.chol_q.T
        x = model.drift(x, theta, u_seq[step - 1]) + noise

        # reweight by the new measurement
        u_meas = meas_input(u_seq, step)
        pred = model.obs(x, theta, u_meas)
        resid = y_seq[step - 1] - pred
        ll = _gaussian_loglik(resid, model.chol_r)
        ll[~np.isfinite(ll)] = -math.inf
        logw = logw + ll
        peak = logw.max()
        if not np.isfinite(peak):
            raise EstimatorDegeneracyError(
                f"all particle weights underflowed at time {step}", time=step
            )
        logw = logw - peak
        logw -= math.log(np.exp(logw).sum())

        w = _weighted_summary(step)

        if ess_hist[step] < config.ess_threshold * np_count:
            idx = _systematic_resample(w, rng)
            x = x[idx]
            theta = theta[idx]
            logw = np.full(np_count, -math.log(np_count))
            n_resampled += 1

    return SmcResult(
        x_mean=x_mean,
        theta_mean=theta_mean,
        theta_cov=theta_cov,
        ess=ess_hist,
        n_resampled=n_resampled,
    )


@dataclass(frozen=True)
class ValidationReport:
    case: str
    runs: int  # runs that completed and entered the averages
    degenerate_runs: int
    trace_mse: np.ndarray  # (N,) averaged over runs, t = 1..N
    trace_bound: np.ndarray  # (N,)
    sum_trace_mse: float
    violations: int  # time points where the MSE trace dips below the bound

    @property
    def dominated_fraction(self) -> float:
        return 1.0 - self.violations / len(self.trace_mse)


def policy_bound_trace(
    model: GaussianSsm,
    policy: MarkovInputPolicy,
    n_steps: int,
    m_samples: int,
    m_inputs: int,
    seed: int,
) -> np.ndarray:
    """Mean trace of the parameter bound over policy-sampled input paths."""
    tables = BoundTables.draw(model, n_steps, m_samples, substream(seed, STREAM_NOISE))
    uniforms = substream(seed, STREAM_INPUTS).random((m_inputs, n_steps))
    u_paths = sequences_from_uniforms(policy, uniforms, n_steps)
    out_l, status = pcrlb.run_bound_batch(model, u_paths, tables)
    pcrlb.raise_for_status(status, context="bound trace for validation")
    return pcrlb.phi_trace(out_l).mean(axis=0)


def mse_experiment(
    model: GaussianSsm,
    theta_star,
    policy: MarkovInputPolicy,
    runs: int,
    n_steps: int,
    config: SmcConfig,
    *,
    case: str = "",
    bound_trace: np.ndarray | None = None,
    bound_samples: int = 500,
    bound_inputs: int = 500,
) -> ValidationReport:
    """Average squared parameter-estimate error over simulated truth runs.

    Each run draws its own input path from the policy, simulates ground
    truth at theta_star (initial state from the prior's state marginal),
    filters the record, and accumulates (theta_hat_t - theta_star)^2.
    Degenerate runs are dropped and counted. The bound trace defaults to a
    fresh Monte-Carlo estimate under the same policy.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64).reshape(model.q)
    if runs < 2:
        raise ValueError("need at least two validation runs")
    if bound_trace is None:
        bound_trace = policy_bound_trace(
            model, policy, n_steps, bound_samples, bound_inputs, config.seed
        )
    bound_trace = np.asarray(bound_trace, dtype=np.float64).reshape(n_steps)

    sq_err = np.zeros(n_steps)
    used = 0
    degenerate = 0
    chol_x = np.linalg.cholesky(model.prior_cov[: model.n, : model.n])
    for run in range(runs):
        rng = substream(config.seed, STREAM_VALIDATE, run)
        u_seq = sample_sequence(policy, n_steps, rng)
        x0 = model.prior_mean[: model.n] + chol_x @ rng.standard_normal(model.n)
        truth = simulate_paths(model, u_seq, [ExtendedState(x0, theta_star)], rng)
        try:
            result = smc_joint_estimate(model, u_seq, truth.meas[0], config, rng=rng)
        except EstimatorDegeneracyError:
            degenerate += 1
            continue
        err = result.theta_mean[1:] - theta_star
        sq_err += (err**2).sum(axis=1)
        used += 1

    if used < 2:
        raise EstimatorDegeneracyError(
            f"only {used} of {runs} validation runs survived"
        )
    trace_mse = sq_err / used
    violations = int((trace_mse < bound_trace).sum())
    return ValidationReport(
        case=case,
        runs=used,
        degenerate_runs=degenerate,
        trace_mse=trace_mse,
        trace_bound=bound_trace,
        sum_trace_mse=float(trace_mse.sum()),
        violations=violations,
    )


# --- CSV emission ---------------------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_mse_trace(report: ValidationReport, path, meta: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        fh.write("t,trace_mse,trace_bound\n")
        for t in range(len(report.trace_mse)):
            fh.write(
                f"{t + 1},{_fmt(report.trace_mse[t])},{_fmt(report.trace_bound[t])}\n"
            )


def write_validation_summary(reports, path, meta: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        fh.write("case,sum_trace_mse,violations,runs\n")
        for r in reports:
            fh.write(f"{r.case},{_fmt(r.sum_trace_mse)},{r.violations},{r.runs}\n")
