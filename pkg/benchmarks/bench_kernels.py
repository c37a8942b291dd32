"""Wall-clock comparison of the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--threads 1]

Each kernel is called once per backend before timing so numba compilation
(and its on-disk cache) is excluded.  The numba loops are timed at every
size, including above ``_kernels.NUMBA_MAX_M`` where the package itself
dispatches to the numpy twin.  The best of ``--repeat`` runs is
reported together with the largest difference between the two backends.
"""
import argparse
import time

import numpy as np

from movns import _kernels
from movns.basis import BasisSnapshot, TimeGrid, gram_matrix, raw_table
from movns.geometry import dilation_map, metric_at
from movns.quadrature import gauss_legendre_square, recommended_order


def best_of(fn, repeat):
    out, best = None, np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def em_case(m, P, N, rng):
    a_lin = np.tile(np.eye(m) * 5.0, (N, 1, 1)) + 0.01 * rng.standard_normal((N, m, m))
    a_tri = 0.01 * rng.standard_normal((N, m, m, m))
    f = 0.1 * rng.standard_normal((N, m))
    sig = 0.1 * rng.standard_normal((N, m))
    dW = rng.standard_normal((P, N)) * np.sqrt(1e-3)
    g0 = rng.standard_normal((P, m))
    thr = np.full(P, 1e12)
    return lambda: _kernels.em_integrate(g0, a_lin, a_tri, f, sig, dW, 1e-3, thr)[0]


def tri_case(m):
    quad = gauss_legendre_square(recommended_order(m))
    dmap = dilation_map()
    table = raw_table(m, quad)
    metric = metric_at(dmap, quad.nodes, 0.5)
    R = _kernels.mgs(gram_matrix(table, metric, quad))[0]
    snap = BasisSnapshot(0.5, R, table)
    W = snap.values
    cov = snap.covariant_grads(metric)
    h = np.broadcast_to(metric.h_down, (quad.size, 2, 2))
    Wh = np.einsum("q,qij,aqj->aqi", quad.weights * metric.J, h, W)
    return lambda: _kernels.tri_contract(Wh, W, cov)


def mgs_case(m):
    quad = gauss_legendre_square(recommended_order(m))
    G = gram_matrix(raw_table(m, quad), metric_at(dilation_map(), quad.nodes, 0.5), quad)
    return lambda: _kernels.mgs(G)[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    if _kernels.HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    # time the numba loops at every size, not only below the dispatch crossover
    _kernels.NUMBA_MAX_M = 10 ** 9
    rng = np.random.default_rng(0)
    cases = [(f"em_integrate m={m} P={P} N={N}", em_case(m, P, N, rng))
             for m, P, N in ((4, 200, 2000), (16, 200, 1000), (32, 200, 1000))]
    cases += [(f"tri_contract m={m}", tri_case(m)) for m in (8, 16, 32)]
    cases += [(f"mgs m={m}", mgs_case(m)) for m in (16, 32)]
    print(f"{'kernel':34s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases:
        times, outs = {}, {}
        for backend in ("numpy", "numba"):
            _kernels.set_backend(backend)
            fn()  # warm up / compile
            times[backend], outs[backend] = best_of(fn, args.repeat)
        diff = float(np.max(np.abs(outs["numpy"] - outs["numba"])))
        print(f"{name:34s} {times['numpy']:10.4f} {times['numba']:10.4f} "
              f"{times['numpy'] / times['numba']:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
