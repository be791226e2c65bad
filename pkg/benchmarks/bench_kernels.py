"""Time the compiled and numpy stepping kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--modes 32] [--pairs 400] [--repeat 5]
"""
import argparse
import time

import numpy as np

from rdcontrol import _kernels_py, kernels
from rdcontrol.cascade import make_transform, nonlinear_weights
from rdcontrol.reaction import ReactionNetwork
from rdcontrol.spectral import SpectralDomain, linear_operator, pair_grid, pair_kinds


def inputs(modes, pairs, seed=0):
    net = ReactionNetwork(4, 2, (1, 0, 1, 0), (0, 1, 0, 1), (1, 2, 3, 4))
    tr = make_transform(net, np.ones(4))
    dom = SpectralDomain.for_degree(1.0, modes, (0.3, 0.7), net.gamma)
    op = linear_operator(dom, tr)
    times = pair_grid(0.0, 0.1, pairs)
    kinds, lengths = pair_kinds(times)
    rng = np.random.default_rng(seed)
    x0 = 1e-2 * rng.standard_normal((4, dom.n_modes)) / (1.0 + np.arange(dom.n_modes)) ** 2
    g = 1e-3 * rng.standard_normal((len(times), 4, dom.n_modes))
    lin = (x0, kinds, lengths, *op.stacks(lengths), g)
    nonlin = (x0, kinds, lengths, *op.stacks(lengths, nonlinear=True), g, dom.synth, dom.anal,
              np.ascontiguousarray(tr.P_inv), tr.u_star, nonlinear_weights(net), np.ascontiguousarray(tr.A_J),
              np.asarray(net.alpha, np.intp), np.asarray(net.beta, np.intp), 1e6)
    return lin, nonlin


def best_of(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--modes", type=int, default=32)
    ap.add_argument("--pairs", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    lin, nonlin = inputs(args.modes, args.pairs)
    if not kernels.HAS_COMPILED:
        print("compiled kernels unavailable; only the numpy backend is timed")
    print(f"modes={args.modes} pairs={args.pairs} (best of {args.repeat})")
    for name, arg in (("integrate_linear", lin), ("integrate_nonlinear", nonlin)):
        t_py, ref = best_of(getattr(_kernels_py, name), arg, args.repeat)
        line = f"{name:22s} numpy {t_py * 1e3:9.2f} ms"
        if kernels.HAS_COMPILED:
            t_cy, out = best_of(getattr(kernels._compiled, name), arg, args.repeat)
            diff = np.max(np.abs(out - ref)) / max(np.max(np.abs(ref)), 1e-300)
            line += f"   cython {t_cy * 1e3:9.2f} ms   speedup {t_py / t_cy:6.1f}x   max rel diff {diff:.1e}"
        print(line)


if __name__ == "__main__":
    main()
