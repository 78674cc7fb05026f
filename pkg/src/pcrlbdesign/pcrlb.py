"""Monte-Carlo lower bound on parameter MSE for joint state/parameter models.

The posterior information matrix of the joint vector z_t = (x_t, theta) is
propagated by a block recursion: with step blocks H11..H33 estimated from an
ensemble of prior-driven sample paths,

    A        = J^x_t + H11
    J^x_{t+1}      = H33 - H13' inv(A) H13
    J^xtheta_{t+1} = H23' - H13' inv(A) (J^xtheta_t + H12)
    J^theta_{t+1}  = J^theta_t + H22 - (J^xtheta_t + H12)' inv(A) (J^xtheta_t + H12)

The parameter-MSE bound at time t is the inverse Schur complement

    L_t = inv(J^theta_t - J^xtheta_t' inv(J^x_t) J^xtheta_t),

equal to the lower-right parameter block of the full inverse joint
information matrix. For additive-Gaussian models the H blocks reduce to
expectations of Jacobian products; those expectations are replaced by
ensemble averages over M joint prior samples propagated under the input
sequence being scored.

Index convention: u_seq[t] drives the transition x_t -> x_{t+1} and the
measurement gradients at step t are evaluated at x_{t+1} with
u_seq[min(t+1, N-1)] (the last input is reused at the horizon). J_0 is the
inverse prior covariance; the bound is recorded for t = 1..N.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from ._backend import active_backend
from .exceptions import (
    BoundDegeneracyError,
    InformationUpdateError,
    SimulationDivergenceError,
)
from .models import GaussianSsm, coerce_inputs
from .streams import STREAM_NOISE, BoundTables, substream

Array = np.ndarray

# per-path failure codes shared by both backend drivers
STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_UPDATE_FAILED = 2
STATUS_BOUND_DEGENERATE = 3

SOLVE_JITTER = 1e-9


@dataclass(frozen=True)
class HBlocks:
    """Ensemble-averaged step blocks of the joint information recursion."""

    h11: Array  # (n, n)
    h12: Array  # (n, q)
    h13: Array  # (n, n)
    h22: Array  # (q, q)
    h23: Array  # (q, n)
    h33: Array  # (n, n)


@dataclass(frozen=True)
class Pim:
    """Joint posterior information matrix, partitioned at (n, q)."""

    jx: Array   # (n, n)
    jxt: Array  # (n, q)
    jt: Array   # (q, q)

    @property
    def n(self) -> int:
        return self.jx.shape[0]

    @property
    def q(self) -> int:
        return self.jt.shape[0]

    def assembled(self) -> Array:
        top = np.hstack([self.jx, self.jxt])
        bottom = np.hstack([self.jxt.T, self.jt])
        return np.vstack([top, bottom])


@dataclass(frozen=True)
class BoundTrajectory:
    """Per-time parameter-bound matrices and their scalarized values."""

    ltheta: Array      # (N, q, q), entry t-1 is L_t
    phi_values: Array  # (N,)
    phi: str
    m_samples: int
    seed: int | None = None

    @property
    def horizon(self) -> int:
        return self.ltheta.shape[0]

    def total(self) -> float:
        """Sum of phi over t = 1..N (the design objective of one sequence)."""
        return float(self.phi_values.sum())

    def to_csv(self, path, meta: str | None = None) -> None:
        write_bound_trajectory_csv(self, path, meta=meta)


def phi_trace(l_rows: Array) -> Array:
    """Trace of each (..., q, q) bound matrix."""
    return np.trace(l_rows, axis1=-2, axis2=-1)


def phi_logdet(l_rows: Array) -> Array:
    sign, logdet = np.linalg.slogdet(l_rows)
    if np.any(sign <= 0):
        raise BoundDegeneracyError("log-det requested for a non-PD bound matrix")
    return logdet


PHI_FUNCTIONS = {"trace": phi_trace, "logdet": phi_logdet}


def _symmetrize(a: Array) -> Array:
    return 0.5 * (a + a.T)


def _chol_or_none(a: Array):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None


def init_pim(model: GaussianSsm) -> Pim:
    """Information at t=0: the inverse prior covariance, partitioned.

    The cross block is taken from the full inverse, so a non-block-diagonal
    prior contributes a nonzero J^xtheta_0.
    """
    chol = np.linalg.cholesky(model.prior_cov)
    eye = np.eye(model.s)
    j0 = np.linalg.solve(chol.T, np.linalg.solve(chol, eye))
    j0 = _symmetrize(j0)
    n = model.n
    return Pim(
        jx=np.ascontiguousarray(j0[:n, :n]),
        jxt=np.ascontiguousarray(j0[:n, n:]),
        jt=np.ascontiguousarray(j0[n:, n:]),
    )


def estimate_h_blocks(
    model: GaussianSsm,
    x_t: Array,
    theta: Array,
    x_next: Array,
    u_t,
    u_next,
) -> HBlocks:
    """Average the Gaussian step blocks over an ensemble of (x_t, theta, x_{t+1}).

    Drift gradients are taken at (x_t, theta, u_t), observation gradients at
    (x_{t+1}, theta, u_next). H13 and the drift term of H23 enter negated;
    H33 carries the constant inv(Q) term.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    if not (x_t.shape[0] == theta.shape[0] == x_next.shape[0]):
        raise ValueError("ensemble arrays disagree on sample count")
    m_count = x_t.shape[0]
    u_t = np.asarray(u_t, dtype=np.float64).reshape(-1)
    u_next = np.asarray(u_next, dtype=np.float64).reshape(-1)

    jfx = model.jac_drift_x(x_t, theta, u_t)
    jft = model.jac_drift_theta(x_t, theta, u_t)
    jgx = model.jac_obs_x(x_next, theta, u_next)
    jgt = model.jac_obs_theta(x_next, theta, u_next)
    qi = model.q_inv
    ri = model.r_inv

    h11 = np.einsum("bki,kl,blj->ij", jfx, qi, jfx) / m_count
    h12 = np.einsum("bki,kl,blj->ij", jfx, qi, jft) / m_count
    h13 = -(jfx.mean(axis=0)).T @ qi
    h22 = (
        np.einsum("bki,kl,blj->ij", jft, qi, jft)
        + np.einsum("bki,kl,blj->ij", jgt, ri, jgt)
    ) / m_count
    h23 = -(jft.mean(axis=0)).T @ qi + np.einsum("bki,kl,blj->ij", jgt, ri, jgx) / m_count
    h33 = qi + np.einsum("bki,kl,blj->ij", jgx, ri, jgx) / m_count
    return HBlocks(h11=h11, h12=h12, h13=h13, h22=h22, h23=h23, h33=h33)


def update_pim(pim: Pim, h: HBlocks, jitter: float = SOLVE_JITTER) -> Pim:
    """One step of the block information recursion.

    The inner solve uses a Cholesky factorization of J^x + H11; if that
    fails, jitter*I is added once before giving up. The updated joint
    matrix is symmetrized and verified positive definite.
    """
    a = _symmetrize(pim.jx + h.h11)
    chol = _chol_or_none(a)
    if chol is None:
        chol = _chol_or_none(a + jitter * np.eye(a.shape[0]))
        if chol is None:
            raise InformationUpdateError("state information solve failed even with jitter")
    cx = _chol_solve(chol, h.h13)
    cross = pim.jxt + h.h12
    cy = _chol_solve(chol, cross)

    jx1 = _symmetrize(h.h33 - h.h13.T @ cx)
    jxt1 = h.h23.T - h.h13.T @ cy
    jt1 = _symmetrize(pim.jt + h.h22 - cross.T @ cy)
    updated = Pim(jx=jx1, jxt=jxt1, jt=jt1)
    if _chol_or_none(updated.assembled()) is None:
        raise InformationUpdateError("updated joint information matrix is not positive definite")
    return updated


def _chol_solve(chol: Array, b: Array) -> Array:
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


def lower_bound_theta(pim: Pim) -> Array:
    """Parameter-block bound: inverse Schur complement of the joint information.

    Equals the lower-right q x q block of inv(assembled J). Raises
    BoundDegeneracyError (reporting the offending eigenvalue) if the Schur
    complement is not positive definite.
    """
    chol_x = _chol_or_none(pim.jx)
    if chol_x is None:
        ev = float(np.linalg.eigvalsh(pim.jx).min())
        raise BoundDegeneracyError(
            f"state information block not positive definite (min eigenvalue {ev:.6e})",
            min_eigenvalue=ev,
        )
    schur = _symmetrize(pim.jt - pim.jxt.T @ _chol_solve(chol_x, pim.jxt))
    chol_s = _chol_or_none(schur)
    if chol_s is None:
        ev = float(np.linalg.eigvalsh(schur).min())
        raise BoundDegeneracyError(
            f"parameter information Schur complement not positive definite "
            f"(min eigenvalue {ev:.6e})",
            min_eigenvalue=ev,
        )
    return _symmetrize(_chol_solve(chol_s, np.eye(pim.q)))


# --- trajectory drivers ------------------------------------------------------


def _bound_path_numpy(
    model: GaussianSsm,
    u_path: Array,
    x0: Array,
    theta: Array,
    v_scaled: Array,
    out_l: Array,
) -> tuple[int, int]:
    """Reference driver for one input sequence; returns (status, fail_time)."""
    n_steps = u_path.shape[0]
    pim = init_pim(model)
    x = x0
    for t in range(n_steps):
        x_next = model.drift(x, theta, u_path[t]) + v_scaled[t]
        if not np.all(np.isfinite(x_next)):
            return STATUS_DIVERGED, t + 1
        u_next = u_path[min(t + 1, n_steps - 1)]
        h = estimate_h_blocks(model, x, theta, x_next, u_path[t], u_next)
        try:
            pim = update_pim(pim, h)
            out_l[t] = lower_bound_theta(pim)
        except InformationUpdateError:
            return STATUS_UPDATE_FAILED, t + 1
        except BoundDegeneracyError:
            return STATUS_BOUND_DEGENERATE, t + 1
        x = x_next
    return STATUS_OK, -1


def _bound_batch_numpy(
    model: GaussianSsm,
    u_paths: Array,
    tables: BoundTables,
    out_l: Array,
    out_status: Array,
) -> None:
    for i in range(u_paths.shape[0]):
        code, fail_t = _bound_path_numpy(
            model, u_paths[i], tables.x0, tables.theta, tables.v_scaled, out_l[i]
        )
        out_status[i, 0] = code
        out_status[i, 1] = fail_t


def run_bound_batch(
    model: GaussianSsm,
    u_paths: Array,
    tables: BoundTables,
) -> tuple[Array, Array]:
    """Score a batch of input sequences against shared noise tables.

    Returns (l_rows (P, N, q, q), status (P, 2)); status rows hold a
    failure code and time, with code 0 for success. Dispatches to the
    numba kernels when the active backend and the model support them.
    """
    n_paths, n_steps = u_paths.shape[0], u_paths.shape[1]
    out_l = np.empty((n_paths, n_steps, model.q, model.q))
    out_status = np.zeros((n_paths, 2), dtype=np.int64)
    backend = active_backend()
    if backend == "numba":
        from . import _kernels_numba

        batch = _kernels_numba.get_bound_batch(model)
        if batch is not None:
            pim0 = init_pim(model)
            batch(
                np.ascontiguousarray(u_paths),
                tables.x0,
                tables.theta,
                tables.v_scaled,
                np.ascontiguousarray(model.q_inv),
                np.ascontiguousarray(model.r_inv),
                pim0.jx.copy(),
                pim0.jxt.copy(),
                pim0.jt.copy(),
                SOLVE_JITTER,
                out_l,
                out_status,
            )
            return out_l, out_status
    _bound_batch_numpy(model, u_paths, tables, out_l, out_status)
    return out_l, out_status


def raise_for_status(status: Array, context: str = "") -> None:
    """Convert the first per-path failure code into its typed exception."""
    bad = np.flatnonzero(status[:, 0] != STATUS_OK)
    if bad.size == 0:
        return
    i = int(bad[0])
    code, t = int(status[i, 0]), int(status[i, 1])
    where = f"{context} " if context else ""
    if code == STATUS_DIVERGED:
        raise SimulationDivergenceError(
            f"{where}state diverged on input path {i} at time {t}", path=i, time=t
        )
    if code == STATUS_UPDATE_FAILED:
        raise InformationUpdateError(
            f"{where}information update failed on input path {i} at time {t}", time=t
        )
    raise BoundDegeneracyError(
        f"{where}bound degenerate on input path {i} at time {t}", time=t
    )


def bound_trajectory(
    model: GaussianSsm,
    u_seq,
    m_samples: int,
    phi: str = "trace",
    seed: int = 0,
) -> BoundTrajectory:
    """Monte-Carlo bound trajectory of one fixed input sequence.

    Draws M joint prior samples and process noise from the noise substream
    of `seed` (the same tables the design objective uses), propagates them
    under u_seq, and runs the information recursion. phi is applied to each
    L_t for the scalarized trajectory.
    """
    if m_samples < 2:
        raise ValueError("m_samples must be >= 2")
    if phi not in PHI_FUNCTIONS:
        raise ValueError(f"unknown phi {phi!r}; options: {sorted(PHI_FUNCTIONS)}")
    u = coerce_inputs(u_seq, model.p)
    tables = BoundTables.draw(model, u.shape[0], m_samples, substream(seed, STREAM_NOISE))
    l_rows, status = run_bound_batch(model, u[None, :, :], tables)
    raise_for_status(status)
    phi_values = PHI_FUNCTIONS[phi](l_rows[0])
    return BoundTrajectory(
        ltheta=l_rows[0], phi_values=phi_values, phi=phi, m_samples=m_samples, seed=seed
    )


def write_bound_trajectory_csv(traj: BoundTrajectory, path, meta: str | None = None) -> None:
    """CSV with columns t, phi, then the row-major entries of L_t."""
    q = traj.ltheta.shape[1]
    buf = io.StringIO()
    if meta:
        buf.write(f"# {meta}\n")
    names = ",".join(f"l{i + 1}{j + 1}" for i in range(q) for j in range(q))
    buf.write(f"t,phi,{names}\n")
    for t in range(traj.horizon):
        flat = ",".join(f"{v:.17g}" for v in traj.ltheta[t].ravel())
        buf.write(f"{t + 1},{traj.phi_values[t]:.17g},{flat}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())
