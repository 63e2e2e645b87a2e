"""Compare the compiled and numpy backends of the candidate-scoring kernel.

Usage: python3 benchmarks/bench_kernels.py [--points 3000] [--repeat 5]

Each case scores a batch of (theta, phi) candidates against a residual with
0 or 3 projected-out sources on the four-source scenario array and reports the
best-of-``repeat`` wall time per backend plus the largest relative deviation.
"""

import argparse
import time

import numpy as np

from ppsdoa import kernels
from ppsdoa.bench import four_source_scenario


def _case(points: int, J: int, seed: int = 0):
    sc = four_source_scenario()
    cfg = sc.array
    rng = np.random.default_rng(seed)
    K = sc.K
    phis = np.array([s.phi for s in sc.sources]) + rng.normal(scale=[5.0, 2.0, 1.0, 0.5][:K], size=(sc.L, K))
    owner = rng.integers(0, sc.L, size=points).astype(np.intp)
    thetas = rng.uniform(-np.pi / 3, np.pi / 3, size=points)
    r = rng.standard_normal(cfg.size) + 1j * rng.standard_normal(cfg.size)
    q, _ = np.linalg.qr(rng.standard_normal((cfg.size, J)) + 1j * rng.standard_normal((cfg.size, J)))
    basis_t = np.ascontiguousarray(q.T)
    return (thetas, owner, phis, r, basis_t, cfg.delta, cfg.d / cfg.c, cfg.omega_c, cfg.M, cfg.N)


def _time(args, backend, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = kernels.correlate_points(*args, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=3000)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the numpy backend only")
    print(f"{'case':<22}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'max rel dev':>14}")
    for J in (0, 3):
        args = _case(a.points, J)
        res = {b: _time(args, b, a.repeat) for b in backends}
        line = f"{f'{a.points} pts, J={J}':<22}" + "".join(f"{res[b][0] * 1e3:>10.1f}ms" for b in backends)
        if len(backends) == 2:
            (c2p, dp), (c2c, dc) = res["python"][1], res["cython"][1]
            dev = max(np.max(np.abs(c2p - c2c) / np.maximum(np.abs(c2p), 1e-300)),
                      np.max(np.abs(dp - dc) / np.maximum(np.abs(dp), 1e-300)))
            line += f"{res['python'][0] / res['cython'][0]:>9.1f}x{dev:>14.2e}"
        print(line)


if __name__ == "__main__":
    main()
