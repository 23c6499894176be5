"""Compare the numba and numpy backends of the latent-relation sweeps.

Times one binary and one ranked-nomination sweep per backend at several network
sizes, then a short end-to-end chain with numba disabled through the environment
variable (run in a subprocess so the flag is read at import).

    python3 benchmarks/bench_kernels.py [--sizes 50,100,200] [--repeats 20]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from netattr import _kernels, links
from netattr.ame import build_data, init_state
from netattr.relational_data import RelationalMatrix

CHAIN_SNIPPET = """
import time, numpy as np
from netattr.ame import Schedule, run_chain
from netattr.relational_data import RelationalMatrix
r = np.random.default_rng(0)
n = {n}
Y = (r.standard_normal((n, n)) + np.add.outer(r.standard_normal(n), r.standard_normal(n)) > 0.5).astype(float)
np.fill_diagonal(Y, np.nan)
Y = RelationalMatrix(Y, kind="binary")
run_chain(Y, k=1, schedule=Schedule(5, 1, 1, seed=0))
t = time.perf_counter()
run_chain(Y, k=1, schedule=Schedule({iters}, 10, 1, seed=0))
print(time.perf_counter() - t)
"""


def _binary_problem(n, rng):
    Y = (rng.random((n, n)) < 0.3).astype(float)
    np.fill_diagonal(Y, np.nan)
    data = build_data(RelationalMatrix(Y, kind="binary"), k=1)
    st = init_state(data)
    return data, st


def _rank_problem(n, rng, cap=5):
    R = np.zeros((n, n))
    for i in range(n):
        others = np.delete(np.arange(n), i)
        m = int(rng.integers(0, cap + 1))
        R[i, rng.choice(others, m, replace=False)] = rng.permutation(np.arange(1, m + 1))
    np.fill_diagonal(R, np.nan)
    data = build_data(RelationalMatrix(R, kind="rank", max_nominations=cap), k=1)
    return data, init_state(data)


def _time(func, repeats):
    func()  # warm-up (compiles the numba kernels)
    t = time.perf_counter()
    for _ in range(repeats):
        func()
    return (time.perf_counter() - t) / repeats


def bench_sweeps(sizes, repeats):
    rows = []
    for n in sizes:
        rng = np.random.default_rng(n)
        data, st = _binary_problem(n, rng)
        EZ = np.zeros((n, n))
        rdata, rst = _rank_problem(n, rng)
        for backend in _kernels.BACKENDS:
            Zb = st.Z.copy()
            Zr = rst.Z.copy()
            g = np.random.default_rng(0)
            tb = _time(lambda: _kernels.sweep_fixed(Zb, EZ, data.lo, data.hi, data.z_update, 0.3, 0.9, g,
                                                    backend=backend), repeats)
            tr = _time(lambda: _kernels.sweep_rank(Zr, EZ, rdata.ranks, rdata.y_obs, rdata.listed, rdata.capped,
                                                   0.3, 0.9, g, backend=backend), repeats)
            ok = all(links.frn_feasible(np.where(rdata.y_obs[i], rdata.ranks[i], np.nan), Zr[i], rdata.cap)
                     for i in range(n))
            rows.append((n, backend, tb, tr, ok))
    return rows


def bench_chain(n, iters):
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, NETATTR_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", CHAIN_SNIPPET.format(n=n, iters=iters)], env=env,
                             capture_output=True, text=True, check=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="50,100,200")
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--chain-n", type=int, default=100)
    ap.add_argument("--chain-iterations", type=int, default=200)
    args = ap.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"{'n':>5} {'backend':>8} {'binary sweep (ms)':>18} {'rank sweep (ms)':>16} {'feasible':>9}")
    for n, backend, tb, tr, ok in bench_sweeps(sizes, args.repeats):
        print(f"{n:>5} {backend:>8} {1e3 * tb:>18.3f} {1e3 * tr:>16.3f} {str(ok):>9}")

    times = bench_chain(args.chain_n, args.chain_iterations)
    print(f"\nbinary chain, n={args.chain_n}, {args.chain_iterations} iterations:")
    for label, t in times.items():
        print(f"  {label:>6}: {t:.2f} s ({1e3 * t / args.chain_iterations:.1f} ms/iteration)")
    print(f"  speedup: {times['numpy'] / times['numba']:.2f}x")


if __name__ == "__main__":
    main()
