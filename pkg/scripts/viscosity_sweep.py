"""Vanishing viscosity sweep: sigma-uniform estimates and convergence of u^sigma.

    python scripts/viscosity_sweep.py --scenario lqr --n 81
"""

import argparse
import warnings

from grushin_mfg.scenarios import lqr_value, resolution
from grushin_mfg.viscous import interior_mask, sigma_sweep

COLUMNS = ["sigma", "u_inf", "du_inf", "semiconcavity", "m_inf", "holder_quotient", "mass_error",
           "m_min", "dist_to_prev_sigma"]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="lqr", choices=["lqr", "sine"])
    ap.add_argument("--n", type=int, default=81)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.32, 0.16, 0.08, 0.04, 0.02, 0.01])
    args = ap.parse_args()

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spec = resolution(args.scenario, args.n, args.n - 1 if args.scenario == "lqr" else (args.n - 1) // 2).spec
        kw = {}
        if args.scenario == "lqr":
            kw = dict(reference=lambda X1, X2, t: lqr_value(X1, X2, t), reference_mask=interior_mask(spec, spec.grid))
        res = sigma_sweep(spec, None, sorted(args.sigmas, reverse=True), **kw)

    print(" ".join(f"{c:>14}" for c in COLUMNS) + ("  dist_to_first_order" if kw else ""))
    for i, row in enumerate(res.rows()):
        line = " ".join(f"{row[c]:14.5g}" for c in COLUMNS)
        if kw:
            line += f"  {res.dist_to_reference[i]:.5g}"
        print(line)
    for key in ("u_inf", "du_inf", "semiconcavity"):
        print(f"spread {key}: {res.spread(key):.3g}")


if __name__ == "__main__":
    main()
