"""Independent cross-checks: closed-form and brute-force reference computations.

Every oracle here recomputes its target quantity by a different algorithm
than the module it checks (covariance-form Kalman filtering instead of the
information recursion, finite differences instead of closed-form gradients,
exhaustive enumeration instead of Monte-Carlo path sampling), sharing only
the model definitions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import pcrlb
from .design import DesignConfig, ObjectiveEvaluator
from .exceptions import CapacityError, OracleError
from .models import GaussianSsm, coerce_inputs, meas_input
from .policy import PolicyTemplate, policy_from_template, sequence_log_prob
from .streams import STREAM_NOISE, BoundTables, substream

_LIN_PROBE_TOL = 1e-9


@dataclass(frozen=True)
class KalmanResult:
    """Joint-state filter output; index 0 is the prior."""

    mean: np.ndarray | None  # (N+1, n+q), None without measurements
    cov: np.ndarray  # (N+1, n+q, n+q)


def _linear_system(model: GaussianSsm, u_probe: np.ndarray):
    """Extended-system matrices, or OracleError if the model is not linear.

    Probes the Jacobians at scattered points; any variation means the model
    has no single (F, H) representation and the filter would be an EKF, not
    an exact oracle.
    """
    rng = np.random.default_rng(20240917)
    probes = rng.standard_normal((5, model.s)) * 2.0
    probes[0] = 0.0
    x = probes[:, : model.n]
    th = probes[:, model.n :]

    with np.errstate(all="ignore"):
        fx = model.jac_drift_x(x, th, u_probe)
        ft = model.jac_drift_theta(x, th, u_probe)
        gx = model.jac_obs_x(x, th, u_probe)
        gt = model.jac_obs_theta(x, th, u_probe)
    for name, j in (("drift/x", fx), ("drift/theta", ft), ("obs/x", gx), ("obs/theta", gt)):
        spread = np.abs(j - j[0]).max()
        # a NaN spread (Jacobian blew up at a probe point) is also nonlinear
        if not spread <= _LIN_PROBE_TOL:
            raise OracleError(
                f"model {model.name!r} is not linear: {name} Jacobian varies "
                f"by {spread:.2e} across probe points"
            )
    return fx[0], ft[0], gx[0], gt[0]


def kalman_extended(model: GaussianSsm, u_seq, y_seq=None) -> KalmanResult:
    """Exact covariance-form filter on the joint (state, parameters) system.

    Works only for models linear in (x, theta); parameters carry no process
    noise. Posterior covariances never depend on the data, so y_seq is
    optional; passing it also yields posterior means.
    """
    u_seq = coerce_inputs(u_seq, model.p)
    n_steps = u_seq.shape[0]
    n, q, s = model.n, model.q, model.s

    if y_seq is not None:
        y_seq = np.asarray(y_seq, dtype=np.float64).reshape(n_steps, model.m)

    cov = np.empty((n_steps + 1, s, s))
    mean = np.empty((n_steps + 1, s)) if y_seq is not None else None
    p_cur = model.prior_cov.copy()
    m_cur = model.prior_mean.copy()
    cov[0] = p_cur
    if mean is not None:
        mean[0] = m_cur

    noise = np.zeros((s, s))
    noise[:n, :n] = model.q_cov
    zero_x = np.zeros((1, n))
    zero_t = np.zeros((1, q))

    for t in range(n_steps):
        u_t = u_seq[t]
        fx, ft, gx, gt = _linear_system(model, u_t)
        f_mat = np.zeros((s, s))
        f_mat[:n, :n] = fx
        f_mat[:n, n:] = ft
        f_mat[n:, n:] = np.eye(q)

        u_g = meas_input(u_seq, t + 1)
        gx2, gt2 = _linear_system(model, u_g)[2:]
        h_mat = np.hstack([gx2, gt2])

        # predict
        p_pred = f_mat @ p_cur @ f_mat.T + noise
        if mean is not None:
            f_off = model.drift(zero_x, zero_t, u_t)[0]
            m_pred = f_mat @ m_cur
            m_pred[:n] += f_off

        # update (Joseph form keeps the covariance symmetric)
        innov_cov = h_mat @ p_pred @ h_mat.T + model.r_cov
        gain = np.linalg.solve(innov_cov.T, (p_pred @ h_mat.T).T).T
        closed = np.eye(s) - gain @ h_mat
        p_cur = closed @ p_pred @ closed.T + gain @ model.r_cov @ gain.T
        p_cur = 0.5 * (p_cur + p_cur.T)
        if mean is not None:
            g_off = model.obs(zero_x, zero_t, u_g)[0]
            resid = y_seq[t] - (h_mat @ m_pred + g_off)
            m_cur = m_pred + gain @ resid
            mean[t + 1] = m_cur
        cov[t + 1] = p_cur

    return KalmanResult(mean=mean, cov=cov)


# --- finite-difference step-block Hessians ------------------------------------


@dataclass(frozen=True)
class FdBlocks:
    """Per-sample finite-difference estimates of the six step blocks."""

    h11: np.ndarray  # (M, n, n)
    h12: np.ndarray  # (M, n, q)
    h13: np.ndarray  # (M, n, n)
    h22: np.ndarray  # (M, q, q)
    h23: np.ndarray  # (M, q, n)
    h33: np.ndarray  # (M, n, n)

    def means(self) -> pcrlb.HBlocks:
        return pcrlb.HBlocks(
            h11=self.h11.mean(axis=0),
            h12=self.h12.mean(axis=0),
            h13=self.h13.mean(axis=0),
            h22=self.h22.mean(axis=0),
            h23=self.h23.mean(axis=0),
            h33=self.h33.mean(axis=0),
        )


def _neg_log_step_density(model, x_t, theta, x_next, y_next, u_t, u_next):
    """-log p(x_next, y_next | x_t, theta) for each sample row."""
    f = model.drift(x_t, theta, u_t)
    g = model.obs(x_next, theta, u_next)
    rv = x_next - f
    rw = y_next - g
    qi, ri = model.q_inv, model.r_inv
    quad = np.einsum("bi,ij,bj->b", rv, qi, rv) + np.einsum("bi,ij,bj->b", rw, ri, rw)
    return 0.5 * quad  # constants drop out of every Hessian


def fd_h_blocks(
    model: GaussianSsm,
    x_t,
    theta,
    x_next,
    u_t,
    u_next,
    step: float = 1e-4,
    rng=None,
) -> FdBlocks:
    """Step blocks from central-difference Hessians of the step density.

    Differentiates -log p(x_next, y_next | x_t, theta) in the stacked
    coordinates (x_t, theta, x_next), drawing y_next from its conditional
    so expectations match the closed forms. A Richardson half-step pass
    guards against a poorly chosen step.
    """
    if not 1e-7 <= step <= 1e-3:
        raise OracleError(f"finite-difference step {step} outside [1e-7, 1e-3]")
    if rng is None:
        rng = np.random.default_rng(0)
    x_t = np.asarray(x_t, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    x_next = np.asarray(x_next, dtype=np.float64)
    m_count, n = x_t.shape
    q = theta.shape[1]
    u_t = np.asarray(u_t, dtype=np.float64).reshape(model.p)
    u_next = np.asarray(u_next, dtype=np.float64).reshape(model.p)

    y_next = model.obs(x_next, theta, u_next) + rng.standard_normal(
        (m_count, model.m)
    ) @ model.chol_r.T

    d = n + q + n

    def value(shift):
        dx = shift[:n]
        dt = shift[n : n + q]
        dn = shift[n + q :]
        return _neg_log_step_density(
            model, x_t + dx, theta + dt, x_next + dn, y_next, u_t, u_next
        )

    def hessian(h):
        hess = np.empty((m_count, d, d))
        center = value(np.zeros(d))
        if not np.all(np.isfinite(center)):
            raise OracleError("step density is not finite at the samples")
        eye = np.eye(d)
        for i in range(d):
            plus = value(h * eye[i])
            minus = value(-h * eye[i])
            hess[:, i, i] = (plus - 2.0 * center + minus) / (h * h)
        for i in range(d):
            for j in range(i + 1, d):
                pp = value(h * (eye[i] + eye[j]))
                pm = value(h * (eye[i] - eye[j]))
                mp = value(h * (eye[j] - eye[i]))
                mm = value(-h * (eye[i] + eye[j]))
                hess[:, i, j] = hess[:, j, i] = (pp - pm - mp + mm) / (4.0 * h * h)
        if not np.all(np.isfinite(hess)):
            raise OracleError("finite-difference Hessian overflowed")
        return hess

    full = hessian(step)
    half = hessian(0.5 * step)
    scale = np.abs(half).max() + 1.0
    drift = np.abs(full - half).max() / scale
    if drift > 1e-3:
        raise OracleError(
            f"finite-difference Hessians disagree between steps ({drift:.2e}); "
            "step size is unsuitable for this model"
        )

    hx = slice(0, n)
    ht = slice(n, n + q)
    hn = slice(n + q, d)
    return FdBlocks(
        h11=half[:, hx, hx],
        h12=half[:, hx, ht],
        h13=half[:, hx, hn],
        h22=half[:, ht, ht],
        h23=half[:, ht, hn],
        h33=half[:, hn, hn],
    )


# --- exhaustive objective -------------------------------------------------------


def enumerate_objective(
    model: GaussianSsm,
    template: PolicyTemplate,
    phi_params,
    n_steps: int,
    m_samples: int,
    seed: int = 0,
    phi: str = "trace",
    sequence_cap: int = 4096,
) -> float:
    """Exact chain expectation of the bound score over every grid sequence.

    Same frozen noise table as the Monte-Carlo objective for this seed, so
    the two differ only by input-path sampling error.
    """
    policy = policy_from_template(template, phi_params)
    space = template.space
    total_seqs = space.r**n_steps
    if total_seqs > sequence_cap:
        raise CapacityError(
            f"{total_seqs} sequences exceed the enumeration cap {sequence_cap}"
        )
    tables = BoundTables.draw(model, n_steps, m_samples, substream(seed, STREAM_NOISE))

    seqs = []
    weights = []
    for combo in itertools.product(range(space.r), repeat=n_steps):
        u = space.grid[list(combo)]
        lp = sequence_log_prob(policy, u)
        if lp == -math.inf:
            continue
        seqs.append(u)
        weights.append(math.exp(lp))
    weights = np.asarray(weights)
    u_paths = np.stack(seqs)

    out_l, status = pcrlb.run_bound_batch(model, u_paths, tables)
    pcrlb.raise_for_status(status, context="exhaustive enumeration")
    scores = pcrlb.PHI_FUNCTIONS[phi](out_l).sum(axis=1)
    return float(weights @ scores)


# --- grid search ----------------------------------------------------------------


@dataclass(frozen=True)
class GridResult:
    phi_star: np.ndarray
    objective: float
    grid: np.ndarray  # (points,) parameter levels
    values: np.ndarray  # objective at every grid node, shape (points,)*d


def grid_search(config: DesignConfig, points: int = 11) -> GridResult:
    """Dense sweep of the template box; exact same evaluator as the optimizer."""
    d = config.template.dim
    if d == 0 or d > 2:
        raise OracleError(f"grid search supports 1 or 2 free parameters, got {d}")
    evaluator = ObjectiveEvaluator(config)
    levels = np.linspace(0.0, 1.0, points)
    values = np.empty((points,) * d)
    best = (math.inf, None)
    for idx in itertools.product(range(points), repeat=d):
        phi = levels[list(idx)]
        val = evaluator.evaluate(phi).value
        values[idx] = val
        if val < best[0]:
            best = (val, phi)
    return GridResult(
        phi_star=np.asarray(best[1]), objective=best[0], grid=levels, values=values
    )
