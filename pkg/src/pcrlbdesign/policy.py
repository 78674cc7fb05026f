"""Discretized input grids and Markov-chain input policies.

Inputs live on a finite grid (the Cartesian product of ``b`` equispaced
levels per dimension, endpoints included). A policy is a Markov chain on
windows of ``k+1`` consecutive grid points: an initial distribution over
windows plus a row-stochastic transition matrix. Windows are enumerated
lexicographically with the oldest input most significant, so for a two-level
scalar grid with k=1 the order is (s1,s1), (s1,s2), (s2,s1), (s2,s2).

For k >= 1 a transition is only meaningful when source and target windows
overlap in their shared k inputs; inconsistent entries are structurally zero.
Dense matrices supplied by the caller are projected onto that support (with a
warning) so that sampling stays well defined.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import CapacityError, EncodingError, PolicyError

DEFAULT_STATE_CAP = 4096

_ROW_SUM_SLACK = 1e-9  # accepted on input; rows are then renormalized
_ROW_SUM_TOL = 1e-12  # invariant after construction
_GRID_MATCH_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class InputSpace:
    """Finite input grid plus the window alphabet of a k-th order chain."""

    p: int
    b: int
    k: int
    u_min: np.ndarray
    u_max: np.ndarray
    levels: np.ndarray  # (b, p) per-dimension level values
    grid: np.ndarray  # (r, p) lexicographic grid points

    @property
    def r(self) -> int:
        return self.grid.shape[0]

    @property
    def n_windows(self) -> int:
        return self.r ** (self.k + 1)

    def window_indices(self, code: int) -> tuple[int, ...]:
        """Grid indices (oldest first) of the window with this code."""
        digits = []
        for _ in range(self.k + 1):
            digits.append(code % self.r)
            code //= self.r
        return tuple(reversed(digits))

    def window_code(self, indices: Sequence[int]) -> int:
        code = 0
        for idx in indices:
            code = code * self.r + int(idx)
        return code

    def encode_input(self, u: np.ndarray) -> int:
        """Grid index of an on-grid input point."""
        u = np.asarray(u, dtype=np.float64).reshape(self.p)
        scale = np.maximum(np.abs(self.u_max - self.u_min), 1.0)
        code = 0
        for d in range(self.p):
            err = np.abs(self.levels[:, d] - u[d]) / scale[d]
            j = int(np.argmin(err))
            if err[j] > _GRID_MATCH_TOL:
                raise EncodingError(
                    f"input component {u[d]!r} in dimension {d} is not a grid level"
                )
            code = code * self.b + j
        return code


def build_input_space(u_min, u_max, b, p, k, state_cap=DEFAULT_STATE_CAP):
    """Construct the grid of b^p points and its window alphabet.

    Raises CapacityError when the window count r^(k+1) exceeds ``state_cap``.
    """
    b = int(b)
    p = int(p)
    k = int(k)
    if b < 2:
        raise PolicyError(f"need at least two levels per dimension, got b={b}")
    if p < 1 or k < 0:
        raise PolicyError(f"invalid dimensions p={p}, k={k}")
    u_min = np.broadcast_to(np.asarray(u_min, dtype=np.float64), (p,)).copy()
    u_max = np.broadcast_to(np.asarray(u_max, dtype=np.float64), (p,)).copy()
    if not np.all(u_min < u_max):
        raise PolicyError("u_min must be strictly below u_max in every dimension")

    r = b**p
    n_windows = r ** (k + 1)
    if n_windows > state_cap:
        raise CapacityError(
            f"window alphabet has {n_windows} states, above the cap {state_cap}"
        )

    levels = np.linspace(u_min, u_max, b)  # (b, p)
    # lexicographic product, dimension 0 most significant
    mesh = np.meshgrid(*(levels[:, d] for d in range(p)), indexing="ij")
    grid = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return InputSpace(
        p=p,
        b=b,
        k=k,
        u_min=_readonly(u_min),
        u_max=_readonly(u_max),
        levels=_readonly(levels),
        grid=_readonly(grid),
    )


def _window_support(space: InputSpace) -> np.ndarray:
    """Boolean (S, S) mask of overlap-consistent window transitions."""
    s_count = space.n_windows
    if space.k == 0:
        return np.ones((s_count, s_count), dtype=bool)
    mask = np.zeros((s_count, s_count), dtype=bool)
    r = space.r
    shift = r**space.k
    for src in range(s_count):
        # dropping the oldest input fixes all but the newest target digit
        base = (src % shift) * r
        mask[src, base : base + r] = True
    return mask


@dataclass(frozen=True)
class MarkovInputPolicy:
    """Immutable window chain: initial distribution + transition matrix."""

    space: InputSpace
    p_gamma: np.ndarray  # (S,)
    p_pi: np.ndarray  # (S, S)

    def __post_init__(self):
        s_count = self.space.n_windows
        gamma = np.asarray(self.p_gamma, dtype=np.float64)
        pi = np.asarray(self.p_pi, dtype=np.float64)
        if gamma.shape != (s_count,) or pi.shape != (s_count, s_count):
            raise PolicyError(
                f"expected shapes ({s_count},) and ({s_count}, {s_count}), "
                f"got {gamma.shape} and {pi.shape}"
            )
        if np.any(gamma < -_ROW_SUM_SLACK) or np.any(pi < -_ROW_SUM_SLACK):
            raise PolicyError("negative probabilities")
        gamma = np.clip(gamma, 0.0, None)
        pi = np.clip(pi, 0.0, None)
        self._check_row_sums(gamma[None, :], "initial distribution")
        self._check_row_sums(pi, "transition row")

        support = _window_support(self.space)
        lost = pi[~support]
        if lost.size and np.any(lost > 0.0):
            warnings.warn(
                "transition matrix has weight on overlap-inconsistent windows; "
                "projecting onto the consistent support",
                stacklevel=2,
            )
            pi = np.where(support, pi, 0.0)

        gamma = self._normalized(gamma[None, :], "initial distribution")[0]
        pi = self._normalized(pi, "transition row")

        object.__setattr__(self, "p_gamma", _readonly(gamma))
        object.__setattr__(self, "p_pi", _readonly(pi))

    @staticmethod
    def _check_row_sums(rows: np.ndarray, what: str) -> None:
        sums = rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _ROW_SUM_SLACK):
            worst = float(np.abs(sums - 1.0).max())
            raise PolicyError(f"{what} sums off by {worst:.3e}, above {_ROW_SUM_SLACK}")

    @staticmethod
    def _normalized(rows: np.ndarray, what: str) -> np.ndarray:
        """Exact per-row renormalization (support projection may have cut mass)."""
        sums = rows.sum(axis=1)
        if np.any(sums <= 0.0):
            raise PolicyError(f"{what} has zero total probability")
        # renormalize only when needed so text round-trips stay bit-exact
        off = np.abs(sums - 1.0) > 1e-15
        if np.any(off):
            rows = rows.copy()
            rows[off] /= sums[off, None]
        assert np.all(np.abs(rows.sum(axis=1) - 1.0) <= _ROW_SUM_TOL)
        return rows


# --- case templates ----------------------------------------------------------


@dataclass(frozen=True)
class PolicyTemplate:
    """Tying map from a free parameter vector in [0,1]^d to a policy."""

    name: str
    space: InputSpace
    dim: int
    param_names: tuple[str, ...]
    _build: Callable[[InputSpace, np.ndarray], tuple[np.ndarray, np.ndarray]] = field(
        repr=False
    )


def _require_two_level_memoryless(space: InputSpace, name: str) -> None:
    if space.r != 2 or space.k != 0:
        raise PolicyError(
            f"template {name!r} is defined for a two-point memoryless grid "
            f"(r=2, k=0); got r={space.r}, k={space.k}"
        )


def _build_case1(space, phi):
    a = phi[0]
    gamma = np.array([a, 1.0 - a])
    pi = np.array([[a, 1.0 - a], [1.0 - a, a]])
    return gamma, pi


def _build_case2(space, phi):
    a, c = phi
    gamma = np.array([a, 1.0 - a])
    pi = np.array([[a, 1.0 - a], [1.0 - c, c]])
    return gamma, pi


def _build_case3(space, phi):
    g, a, c = phi
    gamma = np.array([g, 1.0 - g])
    pi = np.array([[a, 1.0 - a], [1.0 - c, c]])
    return gamma, pi


def _build_case4(space, phi):
    s_count = space.n_windows
    support = _window_support(space)
    gamma = np.full(s_count, 1.0 / s_count)
    pi = support / support.sum(axis=1, keepdims=True)
    return gamma, pi


def _build_free(space, phi):
    s_count = space.n_windows
    w = phi.reshape(1 + s_count, s_count)
    support = _window_support(space)
    gamma_w = w[0]
    pi_w = np.where(support, w[1:], 0.0)
    gsum = gamma_w.sum()
    psum = pi_w.sum(axis=1)
    if gsum <= 0.0 or np.any(psum <= 0.0):
        raise PolicyError("free-form weights give a zero-probability row")
    return gamma_w / gsum, pi_w / psum[:, None]


def make_template(name: str, space: InputSpace) -> PolicyTemplate:
    """Template by case name: case1..case4 or free."""
    key = str(name).strip().lower()
    if key in ("case1", "case2", "case3"):
        _require_two_level_memoryless(space, key)
    if key == "case1":
        return PolicyTemplate(key, space, 1, ("stay",), _build_case1)
    if key == "case2":
        return PolicyTemplate(key, space, 2, ("stay_low", "stay_high"), _build_case2)
    if key == "case3":
        return PolicyTemplate(
            key, space, 3, ("init_low", "stay_low", "stay_high"), _build_case3
        )
    if key == "case4":
        return PolicyTemplate(key, space, 0, (), _build_case4)
    if key == "free":
        s_count = space.n_windows
        names = tuple(f"w{i}" for i in range(s_count * (1 + s_count)))
        return PolicyTemplate(key, space, len(names), names, _build_free)
    raise PolicyError(f"unknown template {name!r}")


TEMPLATE_NAMES = ("case1", "case2", "case3", "case4", "free")


def policy_from_template(template: PolicyTemplate, phi=()) -> MarkovInputPolicy:
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    if phi.shape != (template.dim,):
        raise PolicyError(
            f"template {template.name!r} takes {template.dim} parameters, "
            f"got {phi.shape[0]}"
        )
    if template.dim and (np.any(phi < 0.0) or np.any(phi > 1.0)):
        raise PolicyError("template parameters must lie in [0, 1]")
    gamma, pi = template._build(template.space, phi)
    return MarkovInputPolicy(template.space, gamma, pi)


# --- sampling and probabilities ----------------------------------------------


def _decode_windows(policy: MarkovInputPolicy, uniforms: np.ndarray) -> np.ndarray:
    """Window-state paths from a (n_paths, n_cols) uniform table.

    Column 0 draws the initial window through the inverse CDF of the initial
    distribution; each later column draws one transition. Monotone in the
    uniforms, so freezing the table makes paths vary continuously with the
    policy parameters wherever possible.
    """
    n_paths, n_cols = uniforms.shape
    s_count = policy.space.n_windows
    cum_pi = np.cumsum(policy.p_pi, axis=1)
    cum_gamma = np.cumsum(policy.p_gamma)

    states = np.empty((n_paths, n_cols), dtype=np.int64)
    w = np.searchsorted(cum_gamma, uniforms[:, 0], side="right")
    states[:, 0] = np.minimum(w, s_count - 1)
    for col in range(1, n_cols):
        rows = cum_pi[states[:, col - 1]]
        w = (rows <= uniforms[:, col, None]).sum(axis=1)
        states[:, col] = np.minimum(w, s_count - 1)
    return states


def _windows_to_inputs(policy: MarkovInputPolicy, states: np.ndarray, n_steps: int):
    space = policy.space
    n_paths = states.shape[0]
    out = np.empty((n_paths, n_steps, space.p))
    first = states[:, 0]
    r = space.r
    # initial window spells out the first k+1 inputs, oldest first
    for pos in range(space.k, -1, -1):
        out[:, pos] = space.grid[first % r]
        first = first // r
    for col in range(1, states.shape[1]):
        out[:, space.k + col] = space.grid[states[:, col] % r]
    return out


def sequences_from_uniforms(policy: MarkovInputPolicy, uniforms, n_steps: int):
    """Decode (n_paths, >= n_steps - k) uniforms into input paths (n_paths, N, p)."""
    uniforms = np.asarray(uniforms, dtype=np.float64)
    k = policy.space.k
    n_cols = n_steps - k
    if n_steps < k + 1:
        raise PolicyError(f"horizon {n_steps} shorter than window length {k + 1}")
    if uniforms.ndim != 2 or uniforms.shape[1] < n_cols:
        raise PolicyError(
            f"need a uniform table with at least {n_cols} columns, got {uniforms.shape}"
        )
    states = _decode_windows(policy, uniforms[:, :n_cols])
    return _windows_to_inputs(policy, states, n_steps)


def sample_sequence(policy: MarkovInputPolicy, n_steps: int, rng) -> np.ndarray:
    """One input sequence of length ``n_steps`` drawn from the chain."""
    k = policy.space.k
    if n_steps < k + 1:
        raise PolicyError(f"horizon {n_steps} shorter than window length {k + 1}")
    uniforms = rng.random((1, n_steps - k))
    return sequences_from_uniforms(policy, uniforms, n_steps)[0]


def sequence_log_prob(policy: MarkovInputPolicy, u_seq) -> float:
    """Log probability of an on-grid input sequence under the chain."""
    space = policy.space
    u_seq = np.asarray(u_seq, dtype=np.float64)
    if u_seq.ndim == 1:
        u_seq = u_seq[:, None]
    n_steps = u_seq.shape[0]
    if n_steps < space.k + 1:
        raise PolicyError(
            f"sequence of length {n_steps} cannot fill a window of {space.k + 1}"
        )
    idx = [space.encode_input(u_seq[t]) for t in range(n_steps)]
    codes = [
        space.window_code(idx[t : t + space.k + 1])
        for t in range(n_steps - space.k)
    ]
    total = 0.0
    prob = policy.p_gamma[codes[0]]
    if prob == 0.0:
        return -math.inf
    total += math.log(prob)
    for a, b in zip(codes[:-1], codes[1:]):
        prob = policy.p_pi[a, b]
        if prob == 0.0:
            return -math.inf
        total += math.log(prob)
    return total


# --- plain-text serialization --------------------------------------------------


def write_policy(policy: MarkovInputPolicy, path) -> None:
    space = policy.space
    fmt = lambda v: format(float(v), ".17g")
    with open(path, "w") as fh:
        fh.write("# markov input policy\n")
        fh.write(f"b = {space.b}\n")
        fh.write(f"p = {space.p}\n")
        fh.write(f"k = {space.k}\n")
        fh.write(f"u_min = {' '.join(fmt(v) for v in space.u_min)}\n")
        fh.write(f"u_max = {' '.join(fmt(v) for v in space.u_max)}\n")
        fh.write(f"gamma = {' '.join(fmt(v) for v in policy.p_gamma)}\n")
        for row in policy.p_pi:
            fh.write(f"pi = {' '.join(fmt(v) for v in row)}\n")


def read_policy(path) -> MarkovInputPolicy:
    scalars: dict[str, str] = {}
    gamma = None
    pi_rows: list[np.ndarray] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise PolicyError(f"unparseable policy line: {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "gamma":
                gamma = np.fromstring(value, sep=" ")
            elif key == "pi":
                pi_rows.append(np.fromstring(value, sep=" "))
            else:
                scalars[key] = value
    try:
        space = build_input_space(
            u_min=np.fromstring(scalars["u_min"], sep=" "),
            u_max=np.fromstring(scalars["u_max"], sep=" "),
            b=int(scalars["b"]),
            p=int(scalars["p"]),
            k=int(scalars["k"]),
        )
    except KeyError as exc:
        raise PolicyError(f"policy file is missing field {exc.args[0]!r}") from None
    if gamma is None or not pi_rows:
        raise PolicyError("policy file has no gamma/pi rows")
    return MarkovInputPolicy(space, gamma, np.vstack(pi_rows))


def policy_to_text(policy: MarkovInputPolicy) -> str:
    buf = io.StringIO()
    space = policy.space
    fmt = lambda v: format(float(v), ".17g")
    buf.write(f"b={space.b} p={space.p} k={space.k}\n")
    buf.write(f"gamma: {' '.join(fmt(v) for v in policy.p_gamma)}\n")
    for row in policy.p_pi:
        buf.write(f"pi:    {' '.join(fmt(v) for v in row)}\n")
    return buf.getvalue()
