"""Input design: Monte-Carlo objective over policy parameters and its optimizer.

The objective scores a policy by sampling input paths from its chain,
running the parameter-bound recursion along every path against one frozen
noise table, and averaging the scalarized bound over paths:

    (1/M_u) sum_i sum_t phi(L_t(path_i))

Common random numbers throughout: the noise table and the uniforms behind
the input paths derive from the master seed only, never from the policy
parameters, so the objective is a deterministic function of phi and varies
smoothly wherever no decode threshold is crossed.

The search runs Nelder-Mead on logit-transformed parameters (the unit box
maps to all of R^d, so the simplex never needs projection), restarted from
a small set of interior points, with a patience rule on the relative
improvement of the running best.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from . import pcrlb
from .models import GaussianSsm
from .policy import MarkovInputPolicy, PolicyTemplate, policy_from_template, sequences_from_uniforms
from .streams import STREAM_INPUTS, STREAM_NOISE, BoundTables, substream

_LOGIT_CLIP = 1e-6
_SIMPLEX_STEP = 0.6  # in logit coordinates


@dataclass(frozen=True)
class DesignConfig:
    """Everything one design run needs besides the template's own space."""

    model: GaussianSsm
    template: PolicyTemplate
    n_steps: int
    m_samples: int  # sample paths behind each bound evaluation
    m_inputs: int  # input paths behind each objective evaluation
    phi: str = "trace"
    seed: int = 0
    max_iter: int = 200
    patience: int = 5
    rel_tol: float = 1e-3
    restarts: tuple[float, ...] = (0.5, 0.25, 0.75)

    def __post_init__(self):
        if self.n_steps < self.template.space.k + 1:
            raise ValueError(
                f"horizon {self.n_steps} shorter than the policy window "
                f"{self.template.space.k + 1}"
            )
        if self.m_samples < 2:
            raise ValueError("need at least two bound sample paths")
        if self.m_inputs < 1:
            raise ValueError("need at least one input path")
        if self.phi not in pcrlb.PHI_FUNCTIONS:
            raise ValueError(f"unknown scalarization {self.phi!r}")


@dataclass(frozen=True)
class EvalResult:
    value: float
    per_path: np.ndarray  # (M_u,) scalarized bound sum of each input path
    per_time: np.ndarray  # (N,) mean over paths of phi(L_t)


@dataclass
class HistoryRow:
    evaluation: int
    restart: int
    phi: np.ndarray
    value: float
    best: float


@dataclass
class DesignResult:
    case: str
    phi_star: np.ndarray
    policy: MarkovInputPolicy
    objective: float
    per_time: np.ndarray
    history: list[HistoryRow]
    n_evaluations: int
    wall_time: float
    converged: bool


class ObjectiveEvaluator:
    """Frozen-table objective: deterministic in phi for a fixed seed."""

    def __init__(self, config: DesignConfig):
        noise_rng = substream(config.seed, STREAM_NOISE)
        input_rng = substream(config.seed, STREAM_INPUTS)
        self._init(config, noise_rng, input_rng)

    @classmethod
    def with_streams(cls, config: DesignConfig, noise_rng, input_rng):
        """Build with explicit streams (seed-sweep experiments)."""
        self = cls.__new__(cls)
        self._init(config, noise_rng, input_rng)
        return self

    def _init(self, config, noise_rng, input_rng):
        self.config = config
        self.tables = BoundTables.draw(
            config.model, config.n_steps, config.m_samples, noise_rng
        )
        self.uniforms = input_rng.random((config.m_inputs, config.n_steps))
        self.n_evaluations = 0

    def evaluate_policy(self, policy: MarkovInputPolicy) -> EvalResult:
        cfg = self.config
        u_paths = sequences_from_uniforms(policy, self.uniforms, cfg.n_steps)
        out_l, status = pcrlb.run_bound_batch(cfg.model, u_paths, self.tables)
        pcrlb.raise_for_status(status, context=f"objective evaluation (seed {cfg.seed})")
        phi_fn = pcrlb.PHI_FUNCTIONS[cfg.phi]
        per_path_time = phi_fn(out_l)  # (M_u, N)
        self.n_evaluations += 1
        per_path = per_path_time.sum(axis=1)
        return EvalResult(
            value=float(per_path.mean()),
            per_path=per_path,
            per_time=per_path_time.mean(axis=0),
        )

    def evaluate(self, phi_params) -> EvalResult:
        policy = policy_from_template(self.config.template, phi_params)
        return self.evaluate_policy(policy)


def evaluate_objective(config: DesignConfig, phi_params) -> float:
    return ObjectiveEvaluator(config).evaluate(phi_params).value


class _Converged(Exception):
    pass


def _run_simplex(evaluator, start, restart_idx, history, eval_offset):
    """One Nelder-Mead start in logit space; returns (best_phi, best_value, converged)."""
    cfg = evaluator.config
    d = cfg.template.dim
    z0 = logit(np.clip(start, _LOGIT_CLIP, 1.0 - _LOGIT_CLIP))
    simplex = np.vstack([z0] + [z0 + _SIMPLEX_STEP * np.eye(d)[i] for i in range(d)])

    state = {"best": math.inf, "best_phi": None, "stale": 0, "evals": 0}

    def objective(z):
        phi = expit(z)
        value = evaluator.evaluate(phi).value
        state["evals"] += 1
        if value < state["best"]:
            state["best"] = value
            state["best_phi"] = phi.copy()
        history.append(
            HistoryRow(
                evaluation=eval_offset + state["evals"],
                restart=restart_idx,
                phi=phi.copy(),
                value=value,
                best=state["best"],
            )
        )
        return value

    best_at_mark = math.inf

    def callback(_):
        nonlocal best_at_mark
        improved = best_at_mark - state["best"] > cfg.rel_tol * max(
            abs(state["best"]), 1e-30
        )
        state["stale"] = 0 if improved else state["stale"] + 1
        best_at_mark = state["best"]
        if state["stale"] >= cfg.patience:
            raise _Converged

    converged = False
    try:
        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            callback=callback,
            options={
                "maxiter": cfg.max_iter,
                "initial_simplex": simplex,
                "xatol": 0.0,
                "fatol": 0.0,
            },
        )
        converged = bool(res.nit < cfg.max_iter)
    except _Converged:
        converged = True
    return state["best_phi"], state["best"], converged, state["evals"]


def optimize(config: DesignConfig) -> DesignResult:
    """Derivative-free search over the template's box; deterministic per seed."""
    t0 = time.perf_counter()
    evaluator = ObjectiveEvaluator(config)
    template = config.template
    history: list[HistoryRow] = []

    if template.dim == 0:
        result = evaluator.evaluate(())
        history.append(HistoryRow(1, 0, np.empty(0), result.value, result.value))
        return DesignResult(
            case=template.name,
            phi_star=np.empty(0),
            policy=policy_from_template(template, ()),
            objective=result.value,
            per_time=result.per_time,
            history=history,
            n_evaluations=evaluator.n_evaluations,
            wall_time=time.perf_counter() - t0,
            converged=True,
        )

    best_phi = None
    best_value = math.inf
    best_converged = False
    evals = 0
    for restart_idx, corner in enumerate(config.restarts):
        start = np.full(template.dim, corner)
        phi, value, converged, used = _run_simplex(
            evaluator, start, restart_idx, history, evals
        )
        evals += used
        # switch incumbents only on a clear win; ties keep the earlier start
        if value < best_value - config.rel_tol * max(abs(best_value), 1e-30):
            best_phi, best_value, best_converged = phi, value, converged
        elif best_phi is None:
            best_phi, best_value, best_converged = phi, value, converged

    final = evaluator.evaluate(best_phi)
    history.append(
        HistoryRow(
            evaluation=evals + 1,
            restart=-1,  # final re-evaluation at the incumbent
            phi=best_phi.copy(),
            value=final.value,
            best=min(best_value, final.value),
        )
    )
    # the best column tracks the run-wide incumbent, not the per-restart one
    running = math.inf
    for row in history:
        running = min(running, row.value)
        row.best = running
    return DesignResult(
        case=template.name,
        phi_star=best_phi,
        policy=policy_from_template(template, best_phi),
        objective=final.value,
        per_time=final.per_time,
        history=history,
        n_evaluations=evaluator.n_evaluations,
        wall_time=time.perf_counter() - t0,
        converged=best_converged,
    )


def rank_cases(configs: Sequence[DesignConfig]) -> list[DesignResult]:
    """Optimize each template (shared scale/seed) and sort by objective."""
    base = configs[0]
    for cfg in configs[1:]:
        same = (
            cfg.model is base.model
            and cfg.n_steps == base.n_steps
            and cfg.m_samples == base.m_samples
            and cfg.m_inputs == base.m_inputs
            and cfg.seed == base.seed
            and cfg.phi == base.phi
        )
        if not same:
            raise ValueError("case ranking requires a shared model, scale, and seed")
    results = [optimize(cfg) for cfg in configs]
    return sorted(results, key=lambda r: r.objective)


# --- CSV emission --------------------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_case_report(results: Sequence[DesignResult], path, meta: str = "") -> None:
    width = max((len(r.phi_star) for r in results), default=0)
    cols = ["case"] + [f"phi{i + 1}" for i in range(width)] + ["objective"]
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        fh.write(",".join(cols) + "\n")
        for r in results:
            cells = [r.case]
            cells += [_fmt(v) for v in r.phi_star]
            cells += [""] * (width - len(r.phi_star))
            cells.append(_fmt(r.objective))
            fh.write(",".join(cells) + "\n")


def write_design_history(result: DesignResult, path, meta: str = "") -> None:
    width = max(1, len(result.phi_star))
    cols = ["iteration"] + [f"phi{i + 1}" for i in range(width)] + ["objective"]
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        fh.write(",".join(cols) + "\n")
        for row in result.history:
            cells = [str(row.evaluation)]
            cells += [_fmt(v) for v in row.phi]
            cells += [""] * (width - len(row.phi))
            cells.append(_fmt(row.value))
            fh.write(",".join(cells) + "\n")


def write_bound_trace(per_time: np.ndarray, path, meta: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        fh.write("t,phi\n")
        for t, value in enumerate(per_time, start=1):
            fh.write(f"{t},{_fmt(value)}\n")
