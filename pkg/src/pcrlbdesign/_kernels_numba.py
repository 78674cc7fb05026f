"""Numba kernels: compiled twin of the numpy bound driver.

The driver scores a batch of input sequences in one call, parallelized over
paths. Every prange iteration writes only its own output slots and all
per-path workspaces are allocated inside the loop body, so results are
bitwise identical for any thread count. fastmath stays off for the same
reason.

The built-in models are selected by an integer switch inside the driver so
that every callee is a module global: that keeps the whole call graph
eligible for numba's on-disk cache, and a fresh process loads the compiled
driver instead of repaying the compile. (Passing fill functions as
arguments would defeat the cache - dispatcher-typed overloads cannot be
reloaded.) Models added at runtime therefore run on the numpy backend.
"""

from __future__ import annotations

import numpy as np

from ._backend import HAS_NUMBA

if HAS_NUMBA:
    import numba
    from numba import njit, prange
else:  # pragma: no cover - module is only imported when numba exists
    raise ImportError("numba kernels imported without numba installed")


def set_num_threads(count: int) -> int:
    """Clamp and apply the numba thread count; returns the applied value."""
    applied = max(1, min(int(count), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(applied)
    return applied


# --- small dense helpers -----------------------------------------------------


@njit(cache=True)
def _chol_lower(a, out_l):
    """In-place lower Cholesky of symmetric a into out_l; False if not PD."""
    d = a.shape[0]
    for i in range(d):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= out_l[i, k] * out_l[j, k]
            if i == j:
                if s <= 0.0 or not np.isfinite(s):
                    return False
                out_l[i, i] = np.sqrt(s)
            else:
                out_l[i, j] = s / out_l[j, j]
    return True


@njit(cache=True)
def _chol_solve_mat(l, b, out):
    """Solve (L L') X = B for X, column by column."""
    d = l.shape[0]
    cols = b.shape[1]
    for c in range(cols):
        for i in range(d):
            s = b[i, c]
            for r in range(i):
                s -= l[i, r] * out[r, c]
            out[i, c] = s / l[i, i]
        for i in range(d - 1, -1, -1):
            s = out[i, c]
            for r in range(i + 1, d):
                s -= l[r, i] * out[r, c]
            out[i, c] = s / l[i, i]


# --- bound driver ------------------------------------------------------------


@njit(cache=True)
def _bound_single(
    model_code,
    u_path,
    x0,
    theta,
    v_scaled,
    qinv,
    rinv,
    j0x,
    j0xt,
    j0t,
    jitter,
    out_l,
    out_stat,
):
    m_count = x0.shape[0]
    n = x0.shape[1]
    q = theta.shape[1]
    m_dim = rinv.shape[0]
    n_steps = u_path.shape[0]
    s = n + q

    x_cur = x0.copy()
    x_nxt = np.empty_like(x_cur)
    f = np.empty((m_count, n))
    jfx = np.empty((m_count, n, n))
    jft = np.empty((m_count, n, q))
    jgx = np.empty((m_count, m_dim, n))
    jgt = np.empty((m_count, m_dim, q))

    jx = j0x.copy()
    jxt = j0xt.copy()
    jt = j0t.copy()

    h11 = np.empty((n, n))
    h12 = np.empty((n, q))
    h13 = np.empty((n, n))
    h22 = np.empty((q, q))
    h23 = np.empty((q, n))
    h33 = np.empty((n, n))
    sfx = np.empty((n, n))
    sft = np.empty((n, q))
    ta = np.empty((n, n))
    tb = np.empty((n, q))
    tc = np.empty((m_dim, n))
    td = np.empty((m_dim, q))
    a_ft = np.empty(q)
    a_fxft = np.empty(q)
    a_gtgx = np.empty(q)
    a_ftft = np.empty((q, q))
    a_gtgt = np.empty((q, q))
    a = np.empty((n, n))
    la = np.empty((n, n))
    cx = np.empty((n, n))
    cy = np.empty((n, q))
    cross = np.empty((n, q))
    jxn = np.empty((n, n))
    jxtn = np.empty((n, q))
    jtn = np.empty((q, q))
    js = np.empty((s, s))
    ls = np.empty((s, s))
    schur = np.empty((q, q))
    lq = np.empty((q, q))
    eye_q = np.empty((q, q))
    linv = np.empty((q, q))

    out_stat[0] = 0
    out_stat[1] = -1
    inv_m = 1.0 / m_count

    for t in range(n_steps):
        u_t = u_path[t]
        t_next = t + 1 if t + 1 < n_steps else n_steps - 1
        u_g = u_path[t_next]

        if model_code == 0:
            _benchmark_predict_fill(x_cur, theta, u_t, f, jfx, jft)
        else:
            _bias_predict_fill(x_cur, theta, u_t, f, jfx, jft)

        finite = True
        for b in range(m_count):
            for i in range(n):
                val = f[b, i] + v_scaled[t, b, i]
                x_nxt[b, i] = val
                if not np.isfinite(val):
                    finite = False
        if not finite:
            out_stat[0] = 1
            out_stat[1] = t + 1
            return

        if model_code == 0:
            _benchmark_obs_fill(x_nxt, theta, u_g, jgx, jgt)
        else:
            _bias_obs_fill(x_nxt, theta, u_g, jgx, jgt)

        # ensemble averages of the step blocks
        if n == 1 and m_dim == 1:
            # scalar-state fast path: noise precisions applied after summing
            qi00 = qinv[0, 0]
            ri00 = rinv[0, 0]
            s_fx = 0.0
            s_fx2 = 0.0
            s_gx2 = 0.0
            for i in range(q):
                a_ft[i] = 0.0
                a_fxft[i] = 0.0
                a_gtgx[i] = 0.0
                for j in range(q):
                    a_ftft[i, j] = 0.0
                    a_gtgt[i, j] = 0.0
            for b in range(m_count):
                fx = jfx[b, 0, 0]
                gx = jgx[b, 0, 0]
                s_fx += fx
                s_fx2 += fx * fx
                s_gx2 += gx * gx
                for i in range(q):
                    fti = jft[b, 0, i]
                    gti = jgt[b, 0, i]
                    a_ft[i] += fti
                    a_fxft[i] += fx * fti
                    a_gtgx[i] += gti * gx
                    for j in range(i, q):
                        a_ftft[i, j] += fti * jft[b, 0, j]
                        a_gtgt[i, j] += gti * jgt[b, 0, j]
            h11[0, 0] = qi00 * s_fx2 * inv_m
            h13[0, 0] = -qi00 * s_fx * inv_m
            h33[0, 0] = qinv[0, 0] + ri00 * s_gx2 * inv_m
            for i in range(q):
                h12[0, i] = qi00 * a_fxft[i] * inv_m
                h23[i, 0] = (ri00 * a_gtgx[i] - qi00 * a_ft[i]) * inv_m
                for j in range(i, q):
                    v2 = (qi00 * a_ftft[i, j] + ri00 * a_gtgt[i, j]) * inv_m
                    h22[i, j] = v2
                    h22[j, i] = v2
        else:
            h11[:] = 0.0
            h12[:] = 0.0
            h22[:] = 0.0
            h23[:] = 0.0
            h33[:] = 0.0
            sfx[:] = 0.0
            sft[:] = 0.0
            for b in range(m_count):
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for k in range(n):
                            acc += qinv[i, k] * jfx[b, k, j]
                        ta[i, j] = acc
                    for j in range(q):
                        acc = 0.0
                        for k in range(n):
                            acc += qinv[i, k] * jft[b, k, j]
                        tb[i, j] = acc
                for i in range(m_dim):
                    for j in range(n):
                        acc = 0.0
                        for k in range(m_dim):
                            acc += rinv[i, k] * jgx[b, k, j]
                        tc[i, j] = acc
                    for j in range(q):
                        acc = 0.0
                        for k in range(m_dim):
                            acc += rinv[i, k] * jgt[b, k, j]
                        td[i, j] = acc
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for k in range(n):
                            acc += jfx[b, k, i] * ta[k, j]
                        h11[i, j] += acc
                    for j in range(q):
                        acc = 0.0
                        for k in range(n):
                            acc += jfx[b, k, i] * tb[k, j]
                        h12[i, j] += acc
                    for j in range(n):
                        sfx[i, j] += jfx[b, i, j]
                    for j in range(q):
                        sft[i, j] += jft[b, i, j]
                for i in range(q):
                    for j in range(q):
                        acc = 0.0
                        for k in range(n):
                            acc += jft[b, k, i] * tb[k, j]
                        for k in range(m_dim):
                            acc += jgt[b, k, i] * td[k, j]
                        h22[i, j] += acc
                    for j in range(n):
                        acc = 0.0
                        for k in range(m_dim):
                            acc += jgt[b, k, i] * tc[k, j]
                        h23[i, j] += acc
                for i in range(n):
                    for j in range(n):
                        acc = 0.0
                        for k in range(m_dim):
                            acc += jgx[b, k, i] * tc[k, j]
                        h33[i, j] += acc
            for i in range(n):
                for j in range(n):
                    h11[i, j] *= inv_m
                for j in range(q):
                    h12[i, j] *= inv_m
            for i in range(q):
                for j in range(q):
                    h22[i, j] *= inv_m
                for j in range(n):
                    h23[i, j] *= inv_m
            # h13 = -mean(jfx)' qinv ; drift part of h23 = -mean(jft)' qinv
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += sfx[k, i] * qinv[k, j]
                    h13[i, j] = -acc * inv_m
            for i in range(q):
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += sft[k, i] * qinv[k, j]
                    h23[i, j] -= acc * inv_m
            for i in range(n):
                for j in range(n):
                    h33[i, j] = h33[i, j] * inv_m + qinv[i, j]

        # information update: a = sym(jx + h11)
        for i in range(n):
            for j in range(n):
                a[i, j] = 0.5 * (jx[i, j] + h11[i, j] + jx[j, i] + h11[j, i])
        if not _chol_lower(a, la):
            for i in range(n):
                a[i, i] += jitter
            if not _chol_lower(a, la):
                out_stat[0] = 2
                out_stat[1] = t + 1
                return
        _chol_solve_mat(la, h13, cx)
        for i in range(n):
            for j in range(q):
                cross[i, j] = jxt[i, j] + h12[i, j]
        _chol_solve_mat(la, cross, cy)

        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += h13[k, i] * cx[k, j]
                jxn[i, j] = h33[i, j] - acc
            for j in range(q):
                acc = 0.0
                for k in range(n):
                    acc += h13[k, i] * cy[k, j]
                jxtn[i, j] = h23[j, i] - acc
        for i in range(q):
            for j in range(q):
                acc = 0.0
                for k in range(n):
                    acc += cross[k, i] * cy[k, j]
                jtn[i, j] = jt[i, j] + h22[i, j] - acc
        for i in range(n):
            for j in range(i + 1):
                v2 = 0.5 * (jxn[i, j] + jxn[j, i])
                jxn[i, j] = v2
                jxn[j, i] = v2
        for i in range(q):
            for j in range(i + 1):
                v2 = 0.5 * (jtn[i, j] + jtn[j, i])
                jtn[i, j] = v2
                jtn[j, i] = v2

        # verify the assembled joint information stays PD
        for i in range(n):
            for j in range(n):
                js[i, j] = jxn[i, j]
            for j in range(q):
                js[i, n + j] = jxtn[i, j]
                js[n + j, i] = jxtn[i, j]
        for i in range(q):
            for j in range(q):
                js[n + i, n + j] = jtn[i, j]
        if not _chol_lower(js, ls):
            out_stat[0] = 2
            out_stat[1] = t + 1
            return

        for i in range(n):
            for j in range(n):
                jx[i, j] = jxn[i, j]
            for j in range(q):
                jxt[i, j] = jxtn[i, j]
        for i in range(q):
            for j in range(q):
                jt[i, j] = jtn[i, j]

        # parameter bound: inverse Schur complement
        if not _chol_lower(jx, la):
            out_stat[0] = 3
            out_stat[1] = t + 1
            return
        _chol_solve_mat(la, jxt, cy)
        for i in range(q):
            for j in range(q):
                acc = 0.0
                for k in range(n):
                    acc += jxt[k, i] * cy[k, j]
                schur[i, j] = jt[i, j] - acc
        for i in range(q):
            for j in range(i + 1):
                v2 = 0.5 * (schur[i, j] + schur[j, i])
                schur[i, j] = v2
                schur[j, i] = v2
        if not _chol_lower(schur, lq):
            out_stat[0] = 3
            out_stat[1] = t + 1
            return
        eye_q[:] = 0.0
        for i in range(q):
            eye_q[i, i] = 1.0
        _chol_solve_mat(lq, eye_q, linv)
        for i in range(q):
            for j in range(q):
                out_l[t, i, j] = 0.5 * (linv[i, j] + linv[j, i])

        x_cur, x_nxt = x_nxt, x_cur


@njit(parallel=True, cache=True)
def _bound_batch(
    model_code,
    u_paths,
    x0,
    theta,
    v_scaled,
    qinv,
    rinv,
    j0x,
    j0xt,
    j0t,
    jitter,
    out_l,
    out_stat,
):
    for i in prange(u_paths.shape[0]):
        _bound_single(
            model_code,
            u_paths[i],
            x0,
            theta,
            v_scaled,
            qinv,
            rinv,
            j0x,
            j0xt,
            j0t,
            jitter,
            out_l[i],
            out_stat[i],
        )


# --- built-in model fills ------------------------------------------------------


@njit(cache=True)
def _benchmark_predict_fill(x, th, u, f, jfx, jft):
    for j in range(x.shape[0]):
        xx = x[j, 0]
        den = th[j, 1] + xx * xx
        f[j, 0] = th[j, 0] * xx + xx / den + u[0]
        jfx[j, 0, 0] = th[j, 0] + (th[j, 1] - xx * xx) / (den * den)
        jft[j, 0, 0] = xx
        jft[j, 0, 1] = -xx / (den * den)
        jft[j, 0, 2] = 0.0
        jft[j, 0, 3] = 0.0


@njit(cache=True)
def _benchmark_obs_fill(x, th, u, jgx, jgt):
    for j in range(x.shape[0]):
        xx = x[j, 0]
        jgx[j, 0, 0] = th[j, 2] + 2.0 * th[j, 3] * xx
        jgt[j, 0, 0] = 0.0
        jgt[j, 0, 1] = 0.0
        jgt[j, 0, 2] = xx
        jgt[j, 0, 3] = xx * xx


@njit(cache=True)
def _bias_predict_fill(x, th, u, f, jfx, jft):
    for j in range(x.shape[0]):
        f[j, 0] = x[j, 0] + th[j, 0] + u[0]
        jfx[j, 0, 0] = 1.0
        jft[j, 0, 0] = 1.0


@njit(cache=True)
def _bias_obs_fill(x, th, u, jgx, jgt):
    for j in range(x.shape[0]):
        jgx[j, 0, 0] = 1.0
        jgt[j, 0, 0] = 0.0


_MODEL_CODES = {"benchmark": 0, "bias": 1}


def get_bound_batch(model):
    """Batch driver for a built-in model, or None (numpy fallback) otherwise."""
    code = _MODEL_CODES.get(model.name)
    if code is None:
        return None

    def run(u_paths, x0, theta, v_scaled, qinv, rinv, j0x, j0xt, j0t, jitter, out_l, out_stat):
        _bound_batch(
            code,
            u_paths,
            x0,
            theta,
            v_scaled,
            qinv,
            rinv,
            j0x,
            j0xt,
            j0t,
            jitter,
            out_l,
            out_stat,
        )

    return run
