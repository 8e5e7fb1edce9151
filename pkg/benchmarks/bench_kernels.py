"""Compiled kernels against the numpy fallback on design-sized problems.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both implementations are called directly, so the result does not depend on
``SPMEDOE_PURE_PYTHON``. Outputs are compared before timing.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from spmedoe import _fallback
from spmedoe.config import load_preset
from spmedoe.simulate import transition

try:
    from spmedoe import _kernels
except ImportError:
    _kernels = None


def _cases(n_samples, n_sets, n_inputs):
    cfg = load_preset("paper")
    ref = cfg.phi_true.as_array()
    rng = np.random.default_rng(0)
    # nominal set plus one forward-perturbed set per parameter
    scales = np.vstack([np.ones(ref.size), 1.0 + 1e-3 * np.eye(ref.size)])[:n_sets]
    maps = [transition(cfg.phi_true.from_array(ref * s), cfg.cell, 5.0) for s in scales]
    phis = np.stack([m[0] for m in maps])
    gammas = np.stack([m[1] for m in maps])
    x0 = cfg.x0.as_array()
    x0s = np.repeat(x0[None], n_sets, axis=0)
    u = rng.uniform(-30, 30, n_samples)
    U = rng.uniform(-30, 30, (n_inputs, n_samples))
    r = rng.standard_normal((n_sets, n_samples, phis.shape[1]))
    return {
        "propagate": (phis[0], gammas[0], x0, u),
        "propagate_batch": (phis, gammas, x0s, u),
        "propagate_grid": (phis, gammas, x0s, U),
        "markov": (phis[0], gammas[0], n_samples),
        "adjoint_batch": (phis, r),
    }


_DESIGN = """
import time, numpy as np
from spmedoe import BACKEND
from spmedoe.config import load_preset
from spmedoe.design import DesignConstraints, design_suboptimal
from spmedoe.sensitivity import SpmeOutputModel
cfg = load_preset("paper")
d = cfg.design
cons = DesignConstraints(d.i_max_c * cfg.cell.one_c_current, d.v_min, d.v_max, 200.0, 5.0, 4)
model = SpmeOutputModel(cfg.cell, cfg.phi_true, 5.0)
phi = cfg.phi_init.as_array() / cfg.phi_true.as_array()
design_suboptimal(model, phi, cfg.x0.as_array(), cons, 0.09e-6, options=d)
t = time.perf_counter()
res = design_suboptimal(model, phi, cfg.x0.as_array(), cons, 0.09e-6, options=d)
print(BACKEND, time.perf_counter() - t, res.predicted_trace)
"""


def end_to_end():
    """Time one 200 s, 4-block design under each backend."""
    for flag in ("1", "0"):
        env = dict(os.environ, SPMEDOE_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", _DESIGN], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"design 200 s, M=4  backend {out[0]:9s} {float(out[1]):7.3f} s  trace {float(out[2]):.6g}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--samples", type=int, default=50, help="samples per block (250 s at 5 s)")
    ap.add_argument("--inputs", type=int, default=51, help="inputs per grid call (FD gradient)")
    ap.add_argument("--no-design", action="store_true", help="skip the end-to-end design timing")
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")
        return
    cases = _cases(args.samples, 8, args.inputs)
    print(f"{'kernel':18s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, call_args in cases.items():
        f_py, f_c = getattr(_fallback, name), getattr(_kernels, name)
        a, b = np.asarray(f_py(*call_args)), np.asarray(f_c(*call_args))
        diff = float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a))))
        n = max(1, int(0.2 / max(1e-6, timeit.timeit(lambda: f_py(*call_args), number=1))))
        t_py = min(timeit.repeat(lambda: f_py(*call_args), number=n, repeat=args.repeat)) / n
        t_c = min(timeit.repeat(lambda: f_c(*call_args), number=n, repeat=args.repeat)) / n
        print(f"{name:18s} {t_py * 1e3:12.4f} {t_c * 1e3:14.4f} {t_py / t_c:8.1f} {diff:11.2e}")
    if not args.no_design:
        end_to_end()


if __name__ == "__main__":
    main()
