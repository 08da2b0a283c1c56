"""Min-formula gaps, reachable G-gradients and the feedback identity on
computed value functions under grid refinement.

    python scripts/gdiff_refinement.py --scenario sine
"""

import argparse
import time
import warnings

import numpy as np

from grushin_mfg.gdiff import GDiffProbe, SliceStats, feedback_gradient_consistency, min_formula_check
from grushin_mfg.hjb import solve_hjb
from grushin_mfg.oc import default_guesses, shoot_multistart
from grushin_mfg.scenarios import resolution

POINTS = np.array([[0.9, 0.1], [0.4, -0.5], [-0.6, 0.7], [1.3, 0.9], [0.0, 0.3], [0.0, -0.8]])
LEVELS = {"sine": [(43, 20), (85, 40), (169, 80)], "lqr": [(51, 50), (101, 100), (201, 200)]}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="sine", choices=sorted(LEVELS))
    args = ap.parse_args()

    for n, steps in LEVELS[args.scenario]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            spec = resolution(args.scenario, n, steps).spec
        t0 = time.perf_counter()
        vf = solve_hjb(spec)
        fld = vf.slice(0)
        stats = SliceStats.of(fld)
        reps = [min_formula_check(GDiffProbe(x, fld, spec.h, 8 * spec.grid.h1, stats=stats)) for x in POINTS]
        x0 = POINTS[0]
        tr = shoot_multistart(spec, None, x0, 0.0, default_guesses(spec, x0, 0.0, vf)).trajectory
        fb = feedback_gradient_consistency(spec, vf, tr)
        gaps = ", ".join(f"{r.max_gap:.3g}" for r in reps)
        clusters = [r.n_clusters for r in reps]
        print(f"n={n} max_gap={max(r.max_gap for r in reps):.4g} feedback={fb:.4g} "
              f"clusters={clusters} gaps=[{gaps}] ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
