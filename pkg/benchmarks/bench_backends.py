"""Time the numba kernels against the pure-numpy reference path.

Both backends are exercised on the same two workloads: a single
fixed-input bound trajectory and a full design-objective evaluation
(M_u sampled input paths). Agreement is checked to float tolerance
before any timing is reported, so a broken backend can't win.

Usage:
    python3 benchmarks/bench_backends.py              # desk scale
    python3 benchmarks/bench_backends.py --full        # N=100, M=M_u=2000
    python3 benchmarks/bench_backends.py --repeats 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pcrlbdesign import (
    DesignConfig,
    ObjectiveEvaluator,
    bound_trajectory,
    build_input_space,
    make_benchmark_model,
    make_template,
    set_backend,
)
from pcrlbdesign._backend import HAS_NUMBA


def time_workload(fn, repeats: int) -> tuple[float, float]:
    """Median wall time and the result of the last call."""
    times = []
    value = None
    for _ in range(repeats):
        start = time.perf_counter()
        value = fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times)), value


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--full", action="store_true",
                        help="full scale (N=100, M=M_u=2000) instead of desk scale")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    n_steps, m, m_u = (100, 2000, 2000) if args.full else (50, 500, 500)
    model = make_benchmark_model()
    space = build_input_space(-0.8, 0.8, 2, model.p, 0)
    config = DesignConfig(model=model, template=make_template("case2", space),
                          n_steps=n_steps, m_samples=m, m_inputs=m_u, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    u_fixed = rng.choice([-0.8, 0.8], size=(n_steps, model.p))

    workloads = {
        f"bound trajectory (N={n_steps}, M={m})":
            lambda: bound_trajectory(model, u_fixed, m, seed=args.seed).phi_values.sum(),
        f"objective evaluation (N={n_steps}, M={m}, M_u={m_u})":
            lambda: ObjectiveEvaluator(config).evaluate((0.6, 0.9)).value,
    }

    backends = ["numpy"] + (["numba"] if HAS_NUMBA else [])
    if not HAS_NUMBA:
        print("numba not importable; timing the numpy path only")

    results: dict[str, dict[str, tuple[float, float]]] = {}
    for backend in backends:
        set_backend(backend)
        if backend == "numba":
            # compile outside the timed region
            bound_trajectory(model, u_fixed[:2], 4, seed=0)
        results[backend] = {
            name: time_workload(fn, args.repeats) for name, fn in workloads.items()
        }

    width = max(len(name) for name in workloads)
    print(f"{'workload':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name in workloads:
        t_np, v_np = results["numpy"][name]
        if "numba" in results:
            t_nb, v_nb = results["numba"][name]
            if not np.isclose(v_np, v_nb, rtol=1e-10, atol=0.0):
                raise SystemExit(
                    f"backend mismatch on {name!r}: numpy={v_np!r} numba={v_nb!r}")
            print(f"{name:<{width}}  {t_np:>9.3f}s  {t_nb:>9.3f}s  {t_np / t_nb:>7.1f}x")
        else:
            print(f"{name:<{width}}  {t_np:>9.3f}s  {'-':>10}  {'-':>8}")


if __name__ == "__main__":
    main()
