"""Grid refinement of the semi-Lagrangian solver on the LQR problem.

Prints the sup error against u = |x|^2 / (2 (1 + T - t)), the observed order
and the wall time per level.

    python scripts/lqr_convergence.py --levels 26 51 101 201
"""

import argparse
import math
import time
import warnings

import numpy as np

from grushin_mfg.hjb import solve_hjb
from grushin_mfg.scenarios import lqr_value, resolution


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[26, 51, 101, 201])
    args = ap.parse_args()

    print(f"{'n':>5} {'steps':>5} {'sup_err':>10} {'rel_err':>10} {'order':>6} {'time_s':>7}")
    prev = None
    for n in args.levels:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            spec = resolution("lqr", n).spec
        t0 = time.perf_counter()
        vf = solve_hjb(spec)
        wall = time.perf_counter() - t0
        X1, X2 = vf.grid.mesh()
        exact = np.stack([lqr_value(X1, X2, t) for t in vf.time_grid.times])
        err = float(np.abs(vf.u - exact).max())
        order = math.log2(prev[1] / err) / math.log2((n - 1) / (prev[0] - 1)) if prev else float("nan")
        print(f"{n:5d} {spec.time_grid.n_steps:5d} {err:10.4g} {err / np.abs(exact).max():10.4g} "
              f"{order:6.2f} {wall:7.1f}")
        prev = (n, err)


if __name__ == "__main__":
    main()
