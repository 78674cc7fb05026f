"""Command-line front end: design / bound / validate / oracle.

Orchestration only — all numerics live in the library modules. Every CSV
artifact starts with a ``# seed=... config=...`` metadata line and is
byte-reproducible from (config, seed), independent of thread count.
Exit codes: 0 success, 1 configuration error, 2 numerical failure (with a
diagnostics file in the output directory).
"""

from __future__ import annotations

import argparse
import itertools
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import design as design_lib
from . import oracles, pcrlb, smc
from ._backend import active_backend
from .config import (
    PRESETS,
    TRUE_THETA,
    RunConfig,
    config_digest,
    parse_config,
    validate_config,
    with_preset,
)
from .exceptions import ConfigError, PcrlbDesignError
from .models import get_model, make_bias_model, sample_prior, stack_states
from .policy import (
    build_input_space,
    make_template,
    policy_from_template,
    read_policy,
    sequence_log_prob,
    write_policy,
)
from .streams import STREAM_ORACLE, substream


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None, help="key = value config file")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--output-dir", metavar="PATH", default=None, help="artifact directory")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None, help="scale preset")
    common.add_argument("--threads", type=int, default=None, help="kernel thread count")

    parser = argparse.ArgumentParser(
        prog="pcrlbdesign",
        description="Design input sequences that sharpen Bayesian parameter "
        "estimation in stochastic nonlinear state-space models.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("design", parents=[common], help="optimize policies and rank the cases")
    sub.add_parser("bound", parents=[common], help="bound trace for one fixed policy")
    sub.add_parser("validate", parents=[common], help="particle-filter MSE against the bound")
    sub.add_parser("oracle", parents=[common], help="fast numerical cross-check report")
    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = parse_config(args.config) if args.config is not None else RunConfig()
    if args.preset is not None:
        config = with_preset(config, args.preset)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {args.seed}")
        config = replace(config, seed=args.seed)
    if args.output_dir is not None:
        config = replace(config, output_dir=str(args.output_dir))
    if args.threads is not None:
        if args.threads < 0:
            raise ConfigError(f"--threads must be non-negative, got {args.threads}")
        config = replace(config, threads=args.threads)
    return validate_config(config)


def _meta(config: RunConfig) -> str:
    return f"seed={config.seed} config={config_digest(config)}"


def _apply_threads(config: RunConfig) -> None:
    if config.threads > 0 and active_backend() == "numba":
        from . import _kernels_numba

        _kernels_numba.set_num_threads(config.threads)


def _input_space(config: RunConfig, p: int, k: int | None = None):
    return build_input_space(
        config.u_min, config.u_max, config.n_levels, p, config.memory if k is None else k
    )


# --- subcommands -----------------------------------------------------------------


def cmd_design(config: RunConfig, out_dir: Path) -> int:
    model = get_model(config.model)
    space = _input_space(config, model.p)
    meta = _meta(config)
    results = []
    for case in config.cases:
        design_config = design_lib.DesignConfig(
            model=model,
            template=make_template(case, space),
            n_steps=config.n_steps,
            m_samples=config.m_samples,
            m_inputs=config.m_inputs,
            phi=config.phi,
            seed=config.seed,
        )
        result = design_lib.optimize(design_config)
        results.append(result)
        values = ", ".join(f"{v:.4f}" for v in result.phi_star) or "-"
        print(
            f"[design] {case}: objective {result.objective:.6f} at ({values}) "
            f"after {result.n_evaluations} evaluations ({result.wall_time:.1f} s)"
        )
        design_lib.write_design_history(result, out_dir / f"design_history_{case}.csv", meta)
        design_lib.write_bound_trace(result.per_time, out_dir / f"bound_trace_{case}.csv", meta)
        write_policy(result.policy, out_dir / f"policy_{case}.txt")
    design_lib.write_case_report(results, out_dir / "case_report.csv", meta)
    print(f"[design] wrote {out_dir / 'case_report.csv'}")
    return 0


def cmd_bound(config: RunConfig, out_dir: Path) -> int:
    model = get_model(config.model)
    if config.bound_policy_file is not None:
        policy = read_policy(config.bound_policy_file)
        if policy.space.p != model.p:
            raise ConfigError(
                f"bound.policy_file: policy drives {policy.space.p} input channels, "
                f"model {model.name!r} expects {model.p}"
            )
        label = Path(config.bound_policy_file).stem
    else:
        case = config.bound_case or "case4"
        policy = policy_from_template(make_template(case, _input_space(config, model.p)), config.bound_params)
        label = case
    # the template slot is unused when evaluating a fixed policy; case4 fits any space
    design_config = design_lib.DesignConfig(
        model=model,
        template=make_template("case4", policy.space),
        n_steps=config.n_steps,
        m_samples=config.m_samples,
        m_inputs=config.m_inputs,
        phi=config.phi,
        seed=config.seed,
    )
    result = design_lib.ObjectiveEvaluator(design_config).evaluate_policy(policy)
    path = out_dir / "bound_trace.csv"
    design_lib.write_bound_trace(result.per_time, path, _meta(config))
    print(f"[bound] {label}: objective {result.value:.6f}, wrote {path}")
    return 0


def cmd_validate(config: RunConfig, out_dir: Path) -> int:
    model = get_model(config.model)
    theta_star = config.theta_star or TRUE_THETA.get(config.model)
    if theta_star is None:
        raise ConfigError(f"validate.theta_star is required for model {config.model!r}")
    if len(theta_star) != model.q:
        raise ConfigError(
            f"validate.theta_star needs {model.q} values for model {config.model!r}, "
            f"got {len(theta_star)}"
        )
    meta = _meta(config)
    smc_config = smc.SmcConfig(n_particles=config.particles, seed=config.seed)
    reports = []
    for case in config.cases:
        policy_path = out_dir / f"policy_{case}.txt"
        if not policy_path.exists():
            raise ConfigError(f"missing {policy_path}; run the design subcommand first")
        policy = read_policy(policy_path)
        bound_trace = smc.policy_bound_trace(
            model, policy, config.n_steps, config.m_samples, config.m_inputs, config.seed
        )
        report = smc.mse_experiment(
            model,
            theta_star,
            policy,
            config.runs,
            config.n_steps,
            smc_config,
            case=case,
            bound_trace=bound_trace,
        )
        reports.append(report)
        smc.write_mse_trace(report, out_dir / f"mse_trace_{case}.csv", meta)
        dropped = f", {report.degenerate_runs} degenerate" if report.degenerate_runs else ""
        print(
            f"[validate] {case}: sum trace MSE {report.sum_trace_mse:.4f} over "
            f"{report.runs} runs{dropped}; bound respected at "
            f"{100.0 * report.dominated_fraction:.1f}% of steps"
        )
    smc.write_validation_summary(reports, out_dir / "validation_summary.csv", meta)
    print(f"[validate] wrote {out_dir / 'validation_summary.csv'}")
    return 0


# --- oracle report ---------------------------------------------------------------


def _oracle_rows(config: RunConfig) -> list[tuple[str, str, float, float, str]]:
    """Each row: (check, detail, value, threshold, status)."""
    rows = []

    def add(check, detail, threshold, compute):
        try:
            value = float(compute())
        except PcrlbDesignError as exc:
            rows.append((check, f"{detail}: {exc}", float("nan"), threshold, "skipped"))
            return
        status = "ok" if value <= threshold else "fail"
        rows.append((check, detail, value, threshold, status))

    model = get_model(config.model)
    bias = make_bias_model()
    rng = substream(config.seed, STREAM_ORACLE)

    def kalman_check():
        n_steps = 50
        u_seq = np.where(np.arange(n_steps) % 2 == 0, 0.8, -0.8)[:, None]
        kal = oracles.kalman_extended(bias, u_seq)
        traj = pcrlb.bound_trajectory(bias, u_seq, m_samples=2, seed=config.seed)
        kal_tt = kal.cov[1:, 1, 1]
        return np.max(np.abs(kal_tt - traj.ltheta[:, 0, 0]) / kal_tt)

    add(
        "kalman_identity",
        "linear model: information recursion vs extended Kalman, max rel err",
        1e-8,
        kalman_check,
    )

    def fd_exact_check():
        x_t, theta = stack_states(sample_prior(bias, 64, rng))
        u_t, u_next = np.array([0.3]), np.array([-0.3])
        x_next = bias.drift(x_t, theta, u_t) + rng.standard_normal((64, 1)) @ bias.chol_q.T
        closed = pcrlb.estimate_h_blocks(bias, x_t, theta, x_next, u_t, u_next)
        fd = oracles.fd_h_blocks(bias, x_t, theta, x_next, u_t, u_next, rng=rng).means()
        return max(
            np.abs(getattr(fd, name) - getattr(closed, name)).max()
            for name in ("h11", "h12", "h13", "h22", "h23", "h33")
        )

    add(
        "fd_blocks_exact",
        "linear model: finite-difference step-information blocks, max abs err",
        1e-5,
        fd_exact_check,
    )

    def fd_model_check():
        count = min(config.m_samples, 2000)
        x_t, theta = stack_states(sample_prior(model, count, rng))
        u_t = np.full(model.p, config.u_max)
        u_next = np.full(model.p, config.u_min)
        x_next = model.drift(x_t, theta, u_t) + rng.standard_normal(
            (count, model.n)
        ) @ model.chol_q.T
        closed = pcrlb.estimate_h_blocks(model, x_t, theta, x_next, u_t, u_next)
        fd = oracles.fd_h_blocks(model, x_t, theta, x_next, u_t, u_next, rng=rng)
        worst = 0.0
        for name in ("h11", "h12", "h13", "h22", "h23", "h33"):
            samples = getattr(fd, name)
            se = samples.std(axis=0, ddof=1) / np.sqrt(count)
            diff = np.abs(samples.mean(axis=0) - getattr(closed, name))
            ratio = np.where(diff == 0.0, 0.0, diff / np.where(se > 0.0, se, np.inf))
            worst = max(worst, float(ratio.max()))
        return worst

    add(
        f"fd_blocks_{config.model}",
        "closed-form step-information blocks vs sampled Hessians, max |err|/SE",
        5.0,
        fd_model_check,
    )

    def enumeration_check():
        count = min(config.m_samples, 500)
        template = make_template("case4", _input_space(config, model.p, k=0))
        exact = oracles.enumerate_objective(
            model, template, (), n_steps=2, m_samples=count, seed=config.seed, phi=config.phi
        )
        design_config = design_lib.DesignConfig(
            model=model,
            template=template,
            n_steps=2,
            m_samples=count,
            m_inputs=20000,
            phi=config.phi,
            seed=config.seed,
        )
        result = design_lib.ObjectiveEvaluator(design_config).evaluate(())
        se = result.per_path.std(ddof=1) / np.sqrt(result.per_path.shape[0])
        return abs(exact - result.value) / se

    add(
        "enumeration",
        "two-step objective: exact expectation vs Monte Carlo, |err|/SE",
        5.0,
        enumeration_check,
    )

    def normalization(policy, n_steps):
        space = policy.space
        total = 0.0
        for combo in itertools.product(range(space.r), repeat=n_steps):
            u_seq = space.grid[list(combo)]
            total += np.exp(sequence_log_prob(policy, u_seq))
        return abs(total - 1.0)

    def chain_norm_memoryless():
        space = build_input_space(config.u_min, config.u_max, 2, model.p, 0)
        policy = policy_from_template(make_template("case1", space), (0.7,))
        return normalization(policy, 6)

    add(
        "chain_normalization",
        "persistence policy: probabilities of all 6-step sequences sum to 1",
        1e-10,
        chain_norm_memoryless,
    )

    def chain_norm_memory():
        space = build_input_space(config.u_min, config.u_max, 2, model.p, 1)
        template = make_template("free", space)
        weights = 0.1 + 0.8 * substream(config.seed, STREAM_ORACLE, 1).random(template.dim)
        policy = policy_from_template(template, weights)
        return normalization(policy, 6)

    add(
        "chain_normalization_memory",
        "one-step-memory policy: probabilities of all 6-step sequences sum to 1",
        1e-10,
        chain_norm_memory,
    )

    return rows


def cmd_oracle(config: RunConfig, out_dir: Path) -> int:
    rows = _oracle_rows(config)
    path = out_dir / "oracle_report.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_meta(config)}\n")
        fh.write("check,detail,value,threshold,status\n")
        for check, detail, value, threshold, status in rows:
            fh.write(f"{check},{detail},{value:.17g},{threshold:.17g},{status}\n")
    for check, _, value, threshold, status in rows:
        print(f"[oracle] {check}: {status} (value {value:.3g}, threshold {threshold:.3g})")
    print(f"[oracle] wrote {path}")
    failures = [row for row in rows if row[4] == "fail"]
    if failures:
        detail = "; ".join(f"{row[0]} value {row[2]:.3g} > {row[3]:.3g}" for row in failures)
        _write_diagnostics(out_dir, config, "oracle", f"cross-checks failed: {detail}")
        print(f"error: {len(failures)} oracle check(s) failed", file=sys.stderr)
        return 2
    return 0


# --- entry point -----------------------------------------------------------------


def _write_diagnostics(out_dir: Path, config: RunConfig, subcommand: str, detail: str) -> Path:
    path = out_dir / "diagnostics.txt"
    with open(path, "w") as fh:
        fh.write(f"subcommand: {subcommand}\n")
        fh.write(f"seed: {config.seed}\n")
        fh.write(f"config: {config_digest(config)}\n")
        fh.write(f"backend: {active_backend()}\n")
        fh.write(f"failure: {detail}\n")
    return path


COMMANDS = {
    "design": cmd_design,
    "bound": cmd_bound,
    "validate": cmd_validate,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(config.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return 1

    _apply_threads(config)
    try:
        return COMMANDS[args.subcommand](config, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PcrlbDesignError as exc:
        detail = f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
        path = _write_diagnostics(out_dir, config, args.subcommand, detail)
        print(f"error: {type(exc).__name__}: {exc} (diagnostics in {path})", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
