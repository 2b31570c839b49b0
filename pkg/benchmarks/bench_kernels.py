"""Time the numba and pure-numpy sparse kernels side by side.

    python benchmarks/bench_kernels.py [--repeats 20]

Also times one full training epoch through each path (the env flag is
read at import time, so the epoch timing runs in a subprocess).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cpt import _kernels as K
from cpt.data import SbmSpec, generate_sbm

SIZES = [("sbm-600", SbmSpec(12, 50, 0.2, 0.01, seed=0)),
         ("sbm-4000", SbmSpec(20, 200, 0.05, 0.002, seed=0)),
         ("sbm-20000", SbmSpec(40, 500, 0.02, 0.0002, seed=0))]

EPOCH_SNIPPET = """
import time
from cpt.data import SbmSpec, generate_sbm, split_classes
from cpt.rng import stream
from cpt.trainer import TrainConfig, train
g = generate_sbm(SbmSpec(12, 50, 0.2, 0.01, seed=0))
split = split_classes(g, [5, 2, 5], stream(0, "split"))
cfg = TrainConfig(epochs_per_stage=20, val_tasks=0)
train(g, split, cfg)  # warm-up / jit
cfg = TrainConfig(epochs_per_stage=250, val_tasks=0)
t = time.perf_counter(); train(g, split, cfg); print((time.perf_counter() - t) / 500)
"""


def best_of(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def epoch_time(disable_numba):
    env = dict(os.environ, CPT_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--width", type=int, default=32)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    print(f"{'graph':<10} {'kernel':<9} {'numpy ms':>9} {'numba ms':>9} {'speedup':>8}  parity")
    for name, spec in SIZES:
        g = generate_sbm(spec)
        n, edges = g.num_nodes, np.asarray(g.edges)
        a = K.norm_adj_numpy(n, edges)
        b = K.norm_adj_numba(n, edges)  # also compiles
        exact = all(np.array_equal(x, y) for x, y in zip(a, b))
        t_np = best_of(lambda: K.norm_adj_numpy(n, edges), args.repeats)
        t_nb = best_of(lambda: K.norm_adj_numba(n, edges), args.repeats)
        print(f"{name:<10} {'norm_adj':<9} {1e3 * t_np:9.3f} {1e3 * t_nb:9.3f} {t_np / t_nb:8.2f}  "
              f"{'bit-exact' if exact else 'MISMATCH'}")

        dense = np.random.default_rng(0).standard_normal((n, args.width))
        ya = K.spmm_numpy(*a, dense)
        yb = K.spmm_numba(*a, dense)
        err = float(np.max(np.abs(ya - yb)))
        t_np = best_of(lambda: K.spmm_numpy(*a, dense), args.repeats)
        t_nb = best_of(lambda: K.spmm_numba(*a, dense), args.repeats)
        print(f"{name:<10} {'spmm':<9} {1e3 * t_np:9.3f} {1e3 * t_nb:9.3f} {t_np / t_nb:8.2f}  "
              f"max|diff|={err:.1e}")

    t_np, t_nb = epoch_time(True), epoch_time(False)
    print(f"\ntraining epoch on sbm-600: numpy {1e3 * t_np:.3f} ms, numba {1e3 * t_nb:.3f} ms, "
          f"speedup {t_np / t_nb:.2f}")


if __name__ == "__main__":
    main()
