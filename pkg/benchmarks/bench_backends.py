"""Compare the numba and pure-numpy kernel backends on the main stepper.

Run:  python3 benchmarks/bench_backends.py [N] [steps]

Both backends are imported directly (bypassing the env-flag selection) so
one process can time them side by side.  The first numba call includes JIT
compilation and is reported separately.
"""

import sys
import time

import numpy as np

from chainlab.dynamics import SimConfig, sample_equilibrium
from chainlab.kernels import _numba, _numpy
from chainlab.potential import PotentialSpec


def bench(backend, label, p, r, steps, h, cfg):
    p, r = p.copy(), r.copy()
    t0 = time.perf_counter()
    backend.advance(p, r, steps, h, cfg.gamma, cfg.tau, cfg.spec.kind_code,
                    cfg.spec.a, cfg.periodic, cfg.use_em, cfg.seed, 0, 0)
    dt = time.perf_counter() - t0
    print(f"  {label:<22s} {dt:8.3f} s   "
          f"({1e6 * dt / steps:8.2f} us/step)")
    return dt


def main():
    n_sites = int(sys.argv[1]) if len(sys.argv) > 1 else 128
    steps = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
    for kind, a in (("harmonic", 0.0), ("softened-quadratic", 0.2)):
        spec = PotentialSpec(kind, a)
        cfg = SimConfig(spec, n_sites, beta=1.0, tau=0.3, gamma=1.0, seed=7)
        rng = np.random.default_rng(0)
        p, r = sample_equilibrium(spec, cfg.beta, cfg.tau, n_sites, rng)
        print(f"{kind} (N={n_sites}, {steps} steps, h={cfg.h_micro:.2e}):")
        bench(_numba, "numba (incl. JIT)", p, r, min(steps, 10),
              cfg.h_micro, cfg)
        t_nb = bench(_numba, "numba", p, r, steps, cfg.h_micro, cfg)
        t_np = bench(_numpy, "numpy", p, r, steps, cfg.h_micro, cfg)
        print(f"  speedup (numba/numpy): {t_np / t_nb:.1f}x\n")


if __name__ == "__main__":
    main()
