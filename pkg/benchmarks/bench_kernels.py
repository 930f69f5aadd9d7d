"""Compiled vs pure-numpy kernels and the size-based dispatch, plus one end-to-end solver run per backend.

    python benchmarks/bench_kernels.py [--repeat N] [--skip-solver]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from starris import _kernels_py, kernels

try:
    from starris import _ckernels
except ImportError:
    _ckernels = None

# (stack, coefficients, matrix dim): covariance LMIs and P-step surrogate
# stacks of L=2 cells with 2x2 antennas and K=2 or K=4 users
LOGDET_SHAPES = [(6, 10, 4), (10, 10, 4), (8, 60, 4), (16, 100, 4)]
# (coefficients, rows, cols): RIS-step Gram matrices for N_RIS=4 and 20
GRAM_SHAPES = [(33, 4, 4), (161, 4, 4)]

SOLVER_SNIPPET = """
import time
from starris import kernels
from starris.channel import IQIParams, Network, ScenarioConfig, generate_scenario
from starris.optimizer import Problem, SolverSettings, ao_loop, initial_ris, initial_state
from starris.rates import EEParams
cfg = ScenarioConfig(L=2, K=2, M=2, N_RIS=4, transmit_fraction=0.5, direct_extra_loss_db=20.0)
_, ch = generate_scenario(0, cfg)
problem = Problem(Network(ch, IQIParams.from_config(cfg)), EEParams())
state = initial_state(problem, initial_ris(2, 4, "T_I", rng=1))
t0 = time.perf_counter()
final, _ = ao_loop(problem, state, SolverSettings(max_outer=3, ccp_inner_iters=3))
print(kernels.BACKEND, time.perf_counter() - t0, repr(final.objective))
"""


def _time(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for s, na, d in LOGDET_SHAPES:
        xinv = rng.normal(size=(s, d, d))
        xinv = xinv @ xinv.transpose(0, 2, 1)
        coef = rng.normal(size=(s, na, d, d))
        rows.append((f"logdet_derivs_batch s={s} na={na} d={d}",
                     _time(lambda: _kernels_py.logdet_derivs_batch(xinv, coef), repeat),
                     _time(lambda: _ckernels.logdet_derivs_batch(xinv, coef), repeat) if _ckernels else None,
                     _time(lambda: kernels.logdet_derivs_batch(xinv, coef), repeat)))
    for na, d, n in GRAM_SHAPES:
        coef = rng.normal(size=(na, d, n))
        q = rng.normal(size=(d, d))
        p = rng.normal(size=(n, n))
        q, p = q @ q.T, p @ p.T
        rows.append((f"quad_gram na={na} d={d} n={n}",
                     _time(lambda: _kernels_py.quad_gram(coef, q, p), repeat),
                     _time(lambda: _ckernels.quad_gram(coef, q, p), repeat) if _ckernels else None,
                     _time(lambda: kernels.quad_gram(coef, q, p), repeat)))
    return rows


def bench_solver():
    out = {}
    for pure in ("0", "1"):
        env = dict(os.environ, STARRIS_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", SOLVER_SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, secs, obj = res.stdout.split()
        out[backend] = (float(secs), obj)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-solver", action="store_true")
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the numpy kernels are timed")
    print(f"dispatch sends calls above {kernels.COMPILED_MAX_WORK} multiply-adds to numpy")
    print(f"{'kernel':40s} {'numpy [us]':>11s} {'compiled [us]':>14s} {'dispatch [us]':>14s} {'speedup':>8s}")
    for name, t_py, t_c, t_d in bench_kernels(args.repeat):
        c = f"{t_c * 1e6:14.1f}" if t_c else f"{'-':>14s}"
        print(f"{name:40s} {t_py * 1e6:11.1f} {c} {t_d * 1e6:14.1f} {t_py / t_d:7.1f}x")
    if not args.skip_solver:
        print("\nend-to-end: 3 outer iterations, L=K=2, N_RIS=4, T_I")
        for backend, (secs, obj) in bench_solver().items():
            print(f"  {backend:8s} {secs:7.2f} s   objective {obj}")


if __name__ == "__main__":
    main()
