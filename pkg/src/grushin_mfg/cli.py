"""Command line front end: one subcommand per solver, every run writes CSV
outputs, the canonical config and a manifest.json into its output directory.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from grushin_mfg import __version__
from grushin_mfg.config import Config, parse_config
from grushin_mfg.errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 2, 3, 4
OUT_ENV = "GRUSHIN_MFG_OUT"
MANIFEST = "manifest.json"


@dataclass
class Invariant:
    name: str
    value: float
    tol: float
    passed: bool
    relation: str = "<="

    @classmethod
    def upper(cls, name: str, value: float, tol: float) -> Invariant:
        value = float(value)
        return cls(name, value, float(tol), bool(math.isfinite(value) and value <= tol))

    @classmethod
    def lower(cls, name: str, value: float, tol: float) -> Invariant:
        value = float(value)
        return cls(name, value, float(tol), bool(math.isfinite(value) and value >= tol), ">=")

    @classmethod
    def flag(cls, name: str, ok: bool) -> Invariant:
        return cls(name, float(bool(ok)), 1.0, bool(ok), "==")


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str | None
    code_version: str
    seed: int | None
    wall_time: float = 0.0
    outputs: list[str] = field(default_factory=list)
    invariants: list[Invariant] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(i.passed for i in self.invariants)

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serialisable: {type(v)}")


class Run:
    """Output directory bookkeeping: every file goes through ``path`` so the
    manifest lists exactly what was written."""

    def __init__(self, out: Path, manifest: RunManifest):
        self.out = out
        self.manifest = manifest
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        if name not in self.manifest.outputs:
            self.manifest.outputs.append(name)
        return self.out / name

    def write_rows(self, name: str, rows: list[dict], columns: list[str] | None = None) -> None:
        columns = columns or (list(rows[0]) if rows else [])
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in columns])

    def check(self, inv: Invariant) -> None:
        self.manifest.invariants.append(inv)

    def finish(self, t0: float) -> int:
        self.manifest.wall_time = time.perf_counter() - t0
        self.manifest.outputs = sorted(self.manifest.outputs)
        (self.out / MANIFEST).write_text(self.manifest.to_json())
        for inv in self.manifest.invariants:
            status = "pass" if inv.passed else "FAIL"
            print(f"[{status}] {inv.name}: {inv.value:.6g} {inv.relation} {inv.tol:.6g}")
        print(f"wrote {len(self.manifest.outputs)} files to {self.out}")
        return EXIT_OK if self.manifest.passed else EXIT_INVARIANT


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _floats(text: str, n: int | None = None, name: str = "value") -> list[float]:
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--{name}: cannot parse {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"--{name}: expected {n} numbers, got {len(vals)}")
    return vals


# ---------------------------------------------------------------------------
# shared steps


def _m0_cloud(cfg: Config):
    from grushin_mfg.transport import sample_m0

    st = cfg.spec.settings
    return sample_m0(cfg.spec, st.n_particles, cfg.seed)


def _frozen_path(cfg: Config):
    """Measure path used for coupled problems outside the fixed point: m0
    frozen in time. None for decoupled problems."""
    from grushin_mfg.fixpoint import initial_path

    spec = cfg.spec
    if spec.F.decoupled and spec.G.decoupled:
        return None
    return initial_path(spec, _m0_cloud(cfg))


def _write_value_function(run: Run, vf, every: int = 1, feedback: bool = True) -> None:
    n = len(vf.u)
    for k in range(0, n, every):
        vf.slice(k).to_csv(run.path(f"u_t{k}.csv"))
    if (n - 1) % every:
        vf.slice(n - 1).to_csv(run.path(f"u_t{n - 1}.csv"))
    if feedback:
        for k in range(0, len(vf.feedback), every):
            fb = vf.feedback[k]
            data = np.column_stack([vf.grid.nodes(), fb[..., 0].ravel(), fb[..., 1].ravel()])
            np.savetxt(run.path(f"alpha_t{k}.csv"), data, fmt="%.17g", delimiter=",",
                       header="x1,x2,alpha1,alpha2", comments="")


def _hjb_rows(vf) -> list[dict]:
    from grushin_mfg.hjb import semiconcavity_diagnostic, spatial_lipschitz

    dt = vf.time_grid.dt
    rows = []
    for k, t in enumerate(vf.time_grid.times):
        lt = float(np.abs(vf.u[k + 1] - vf.u[k]).max() / dt) if k + 1 < len(vf.u) else float("nan")
        rows.append({
            "k": k,
            "t": float(t),
            "Linf": float(np.abs(vf.u[k]).max()),
            "L_space": spatial_lipschitz(vf.u[k], vf.grid),
            "L_time": lt,
            "semiconcavity": semiconcavity_diagnostic(vf.slice(k)),
        })
    return rows


def _hjb_invariants(run: Run, cfg: Config, vf) -> None:
    from grushin_mfg.hjb import dpp_one_step_residual, dpp_optimality_gap

    spec = cfg.spec
    fb, gb = spec.F.bounds(spec.box), spec.G.bounds(spec.box)
    run.check(Invariant.flag("hjb.finite", bool(np.isfinite(vf.u).all())))
    run.check(Invariant.upper("hjb.dpp_one_step", dpp_one_step_residual(vf), 1e-10))
    stride = max(1, vf.time_grid.n_steps // 20)
    run.check(Invariant.upper("hjb.dpp_optimality_gap", dpp_optimality_gap(vf, spec.A_max, stride=stride), 1e-10))
    run.check(Invariant.upper("hjb.comparison_bound", vf.sup_norm, spec.T * fb["sup"] + gb["sup"] + 1e-9))


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve_hjb(args, cfg: Config, run: Run) -> None:
    from grushin_mfg.hjb import solve_hjb

    vf = solve_hjb(cfg.spec, _frozen_path(cfg))
    _write_value_function(run, vf, args.every)
    run.write_rows("diagnostics.csv", _hjb_rows(vf), ["k", "t", "Linf", "L_space", "L_time", "semiconcavity"])
    _hjb_invariants(run, cfg, vf)


def cmd_oc_trajectory(args, cfg: Config, run: Run) -> None:
    from grushin_mfg.hjb import solve_hjb
    from grushin_mfg.oc import (
        SHOOT_TOL,
        cost,
        default_guesses,
        necessary_conditions_residual,
        rest_time_report,
        shoot,
        shoot_multistart,
    )

    spec = cfg.spec
    x0 = np.array(_floats(args.x0, 2, "x0"))
    if not spec.box.contains(x0[None, :])[0]:
        raise ConfigError("--x0: start point outside the box")
    if not 0 <= args.t < spec.T:
        raise ConfigError("--t: start time must lie in [0, T)")
    m_path = _frozen_path(cfg)
    if args.p0_guess is not None and args.restarts <= 1:
        res = shoot(spec, m_path, x0, args.t, np.array(_floats(args.p0_guess, 2, "p0-guess")))
    else:
        vf = solve_hjb(spec, m_path)
        guesses = default_guesses(spec, x0, args.t, vf, m_path, n_random=max(args.restarts - 3, 0), seed=cfg.seed)
        if args.p0_guess is not None:
            guesses.insert(0, np.array(_floats(args.p0_guess, 2, "p0-guess")))
        res = shoot_multistart(spec, m_path, x0, args.t, guesses)
    if not res.converged:
        res.trajectory.to_csv(run.path("trajectory.csv"))
        raise NumericalError(f"shooting did not converge (residual {res.residual:.3g})")
    traj = res.trajectory
    traj.to_csv(run.path("trajectory.csv"))
    nc = necessary_conditions_residual(spec, m_path, traj)
    tol = 1e-6
    rows = [{"name": k, "value": v, "tol": tol, "passed": v <= tol} for k, v in nc.items() if k != "maximality"]
    rows.append({"name": "maximality", "value": nc["maximality"], "tol": tol, "passed": nc["maximality"] <= tol})
    rows.append({"name": "shooting", "value": res.residual, "tol": SHOOT_TOL, "passed": res.residual < SHOOT_TOL})
    rows.append({"name": "cost", "value": cost(spec, m_path, traj), "tol": float("nan"), "passed": True})
    rep = rest_time_report(traj, spec.h, 1e-6 * spec.box.diameter)
    rows.append({"name": "rest_time", "value": rep["rest_time"], "tol": float("nan"), "passed": True})
    run.write_rows("residuals.csv", rows, ["name", "value", "tol", "passed"])
    for r in rows:
        if math.isfinite(r["tol"]):
            run.check(Invariant.upper(f"oc.{r['name']}", r["value"], r["tol"]))


def cmd_solve_transport(args, cfg: Config, run: Run) -> None:
    from grushin_mfg.hjb import lipschitz_diagnostic, solve_hjb
    from grushin_mfg.transport import (
        control_headroom,
        mass_error,
        push_forward,
        render_density,
        time_lipschitz_check,
        transport_diagnostics,
    )

    spec = cfg.spec
    vf = solve_hjb(spec, _frozen_path(cfg))
    m_path = push_forward(spec, vf, _m0_cloud(cfg))
    for k, c in enumerate(m_path.clouds):
        if k % args.every == 0 or k == len(m_path.clouds) - 1:
            c.to_csv(run.path(f"m_t{k}.csv"))
            if args.density is not None:
                render_density(c, spec.grid, args.density).to_csv(run.path(f"density_t{k}.csv"))
    run.write_rows("transport_diagnostics.csv", transport_diagnostics(m_path),
                   ["k", "t", "mass", "moment2", "d1_to_prev"])
    L = lipschitz_diagnostic(vf)[0]
    rep = time_lipschitz_check(m_path, L, spec.h.sup_abs())
    run.check(Invariant.upper("transport.mass_error", mass_error(m_path), 1e-12))
    run.check(Invariant.upper("transport.time_lipschitz_ratio", max(rep.worst_ratio, rep.worst_exact_ratio), 1.05))
    run.check(Invariant.lower("transport.control_headroom", control_headroom(spec, vf, m_path), 2.0))


def cmd_viscosity_sweep(args, cfg: Config, run: Run) -> None:
    from grushin_mfg.viscous import sigma_sweep

    sigmas = _floats(args.sigmas, None, "sigmas")
    if not sigmas or any(s <= 0 for s in sigmas):
        raise ConfigError("--sigmas: need positive values")
    sigmas = sorted(set(sigmas), reverse=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = sigma_sweep(cfg.spec, _frozen_path(cfg), sigmas)
    cols = ["sigma", "u_inf", "du_inf", "semiconcavity", "m_inf", "holder_quotient", "moment2_max",
            "dist_to_prev_sigma", "mass_error", "m_min", "u0_inf", "du0_inf", "semiconcavity0"]
    rows = res.rows()
    run.write_rows("viscous_report.csv", rows, cols)
    run.check(Invariant.upper("viscous.mass_error", max(r["mass_error"] for r in rows), 1e-8))
    run.check(Invariant.lower("viscous.m_min", min(r["m_min"] for r in rows), -1e-12))
    for key in ("u_inf", "du_inf", "semiconcavity"):
        run.check(Invariant.upper(f"viscous.spread.{key}", res.spread(key), 0.10))
    d = [r["dist_to_prev_sigma"] for r in rows[1:]]
    run.check(Invariant.flag("viscous.dist_to_prev_decreasing", all(b < a for a, b in zip(d, d[1:]))))


def cmd_solve_mfg(args, cfg: Config, run: Run) -> None:
    from grushin_mfg.fixpoint import definition_checklist, solve_mfg
    from grushin_mfg.transport import moment_report, time_lipschitz_check

    spec = cfg.spec
    state = solve_mfg(spec, args.theta, args.tol, args.max_iters, mode=args.mode, m0_cloud=_m0_cloud(cfg))
    run.write_rows("fixpoint_log.csv", [asdict(r) for r in state.history],
                   ["k", "residual", "u_inf", "L_space", "lipschitz_ok"])
    _write_value_function(run, state.u, args.every, feedback=False)
    for k, c in enumerate(state.m_path.clouds):
        if k % args.every == 0 or k == len(state.m_path.clouds) - 1:
            c.to_csv(run.path(f"m_t{k}.csv"))
    chk = definition_checklist(spec, state)
    last = state.history[-1]
    lip = time_lipschitz_check(state.m_path, last.L_space, spec.h.sup_abs())
    summary = {
        "converged": bool(state.converged),
        "iterations": state.k,
        "residual": state.residual,
        "theta": state.theta,
        "tol": args.tol,
        "mode": args.mode,
        "u_inf": state.u.sup_norm,
        "L_space": last.L_space,
        "lipschitz_bound": lip.bound,
        "lipschitz_ratio": max(lip.worst_ratio, lip.worst_exact_ratio),
        **moment_report(state.m_path),
        **{k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in chk.items()},
    }
    run.path("summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    run.check(Invariant.flag("mfg.converged", state.converged))
    run.check(Invariant.upper("mfg.residual", state.residual, args.tol))
    run.check(Invariant.upper("mfg.dpp_one_step", chk["dpp_one_step"], 1e-10))
    run.check(Invariant.upper("mfg.dpp_optimality_gap", chk["dpp_optimality_gap"], 1e-10))
    run.check(Invariant.flag("mfg.comparison_bound", chk["comparison_bound_ok"]))
    run.check(Invariant.upper("mfg.mass_error", chk["mass_error"], 1e-12))
    run.check(Invariant.upper("mfg.weak_residual", chk["weak_residual"], 1e-3))
    run.check(Invariant.upper("mfg.time_lipschitz_ratio", summary["lipschitz_ratio"], 1.05))


def cmd_gdiff_probe(args, cfg: Config, run: Run) -> None:
    from grushin_mfg.gdiff import GDiffProbe, SliceStats, min_formula_check, superdifferential_check
    from grushin_mfg.hjb import solve_hjb

    spec = cfg.spec
    vf = solve_hjb(spec, _frozen_path(cfg))
    k = args.slice_index
    if not -len(vf.u) <= k < len(vf.u):
        raise ConfigError(f"--slice-index: {k} outside 0..{len(vf.u) - 1}")
    fld = vf.slice(k % len(vf.u))
    g = spec.grid
    ell = args.ell if args.ell is not None else 8 * max(g.h1, g.h2)
    stats = SliceStats.of(fld)
    text = args.points.strip()
    if text.isdigit():
        rng = np.random.default_rng(cfg.seed)
        c, r = np.asarray(spec.m0.center), spec.m0.radius + 0.5
        pts = c + rng.uniform(-r, r, size=(int(text), 2))
    else:
        vals = _floats(text, None, "points")
        if len(vals) % 2:
            raise ConfigError("--points: expected x1,x2 pairs")
        pts = np.array(vals).reshape(-1, 2)
    rows = []
    for x in pts:
        try:
            probe = GDiffProbe(x, fld, spec.h, ell, stats=stats)
        except ValueError as exc:
            raise ConfigError(f"--points: {exc} at {tuple(x)}") from None
        rep = min_formula_check(probe)
        worst_sd = float("nan")
        if not rep.inconclusive:
            worst_sd = max(superdifferential_check(probe, p)[1] for p in rep.reachable.representatives)
        rows.append({
            "x1": x[0], "x2": x[1], "h": float(spec.h(x[0])), "n_clusters": rep.n_clusters,
            "min_formula_gap": rep.max_gap, "superdiff_violation": worst_sd,
            "inconclusive": rep.inconclusive,
        })
    run.write_rows("gdiff_report.csv", rows)
    done = [r for r in rows if not r["inconclusive"]]
    run.check(Invariant.lower("gdiff.conclusive_points", len(done), 1))


# ---------------------------------------------------------------------------
# check-invariants


def _read_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise NumericalError(f"{path.name}: empty file")
    head, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(head):
        col = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = np.array(col)
    return out


def check_run(run_dir: Path, reference: Path | None = None, rtol: float = 1e-6) -> list[Invariant]:
    """Re-derive the invariants of a finished run from its files."""
    man_path = run_dir / MANIFEST
    if not man_path.is_file():
        raise ConfigError(f"{run_dir}: no {MANIFEST}; not a run directory")
    man = json.loads(man_path.read_text())
    out: list[Invariant] = []
    missing = [f for f in man["outputs"] if not (run_dir / f).is_file()]
    out.append(Invariant.upper("outputs.missing", len(missing), 0))
    if missing:
        return out
    files = set(man["outputs"])
    if "transport_diagnostics.csv" in files:
        d = _read_csv(run_dir / "transport_diagnostics.csv")
        out.append(Invariant.upper("transport.mass_conservation", np.abs(d["mass"] - 1).max(), 1e-12))
        out.append(Invariant.flag("transport.moment2_finite", bool(np.isfinite(d["moment2"]).all())))
    if "diagnostics.csv" in files:
        d = _read_csv(run_dir / "diagnostics.csv")
        out.append(Invariant.flag("hjb.finite", bool(np.isfinite(d["Linf"]).all())))
    if "residuals.csv" in files:
        d = _read_csv(run_dir / "residuals.csv")
        for name, v, tol in zip(d["name"], d["value"], d["tol"]):
            if math.isfinite(tol):
                out.append(Invariant.upper(f"oc.{name}", v, tol))
    if "viscous_report.csv" in files:
        d = _read_csv(run_dir / "viscous_report.csv")
        out.append(Invariant.upper("viscous.mass_error", d["mass_error"].max(), 1e-8))
        out.append(Invariant.lower("viscous.m_min", d["m_min"].min(), -1e-12))
    if "fixpoint_log.csv" in files:
        d = _read_csv(run_dir / "fixpoint_log.csv")
        out.append(Invariant.flag("mfg.lipschitz_each_iterate", bool((d["lipschitz_ok"] == 1).all())))
    if "summary.json" in files:
        s = json.loads((run_dir / "summary.json").read_text())
        out.append(Invariant.flag("mfg.converged", s["converged"]))
        out.append(Invariant.upper("mfg.mass_error", s["mass_error"], 1e-12))
        if reference is not None:
            out.extend(_regression(s, json.loads(Path(reference).read_text()), rtol))
    for name in sorted(files):
        if name.startswith("m_t") and name.endswith(".csv"):
            d = _read_csv(run_dir / name)
            out.append(Invariant.upper(f"transport.mass[{name}]", abs(d["weight"].sum() - 1), 1e-12))
    return out


def _regression(summary: dict, ref: dict, rtol: float) -> list[Invariant]:
    out = []
    for key, rv in sorted(ref.items()):
        if isinstance(rv, bool) or not isinstance(rv, (int, float)) or key not in summary:
            continue
        dev = abs(float(summary[key]) - rv) / max(abs(rv), 1e-12)
        out.append(Invariant.upper(f"regression.{key}", dev, rtol))
    return out


def cmd_check_invariants(args) -> int:
    if args.out is None:
        raise ConfigError("--out: check-invariants needs the run directory")
    run_dir = Path(args.out)
    t0 = time.perf_counter()
    invs = check_run(run_dir, args.reference, args.rtol)
    report = [asdict(i) for i in invs]
    (run_dir / "invariants.json").write_text(json.dumps(report, indent=2, default=_jsonable))
    for i in invs:
        print(f"[{'pass' if i.passed else 'FAIL'}] {i.name}: {i.value:.6g} {i.relation} {i.tol:.6g}")
    print(f"checked {len(invs)} invariants in {time.perf_counter() - t0:.2f}s")
    return EXIT_OK if all(i.passed for i in invs) else EXIT_INVARIANT


# ---------------------------------------------------------------------------
# argument parsing


COMMANDS = {
    "solve-hjb": cmd_solve_hjb,
    "oc-trajectory": cmd_oc_trajectory,
    "solve-transport": cmd_solve_transport,
    "viscosity-sweep": cmd_viscosity_sweep,
    "solve-mfg": cmd_solve_mfg,
    "gdiff-probe": cmd_gdiff_probe,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML problem config")
    common.add_argument("--out", default=argparse.SUPPRESS, help=f"output directory (or ${OUT_ENV})")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="numba worker threads")

    p = argparse.ArgumentParser(prog="grushin-mfg", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve-hjb", parents=[common], help="value function and feedback")
    s.add_argument("--every", type=int, default=1, help="write every n-th slice")

    s = sub.add_parser("oc-trajectory", parents=[common], help="Pontryagin shooting from one point")
    s.add_argument("--x0", required=True, help="start point 'x1,x2'")
    s.add_argument("--t", type=float, default=0.0, help="start time")
    s.add_argument("--p0-guess", default=None, help="initial costate 'p1,p2'")
    s.add_argument("--restarts", type=int, default=8, help="number of Newton initialisations")

    s = sub.add_parser("solve-transport", parents=[common], help="push-forward of m0")
    s.add_argument("--every", type=int, default=1)
    s.add_argument("--density", type=float, default=None, metavar="BANDWIDTH",
                   help="also write kernel density renders")

    s = sub.add_parser("viscosity-sweep", parents=[common], help="viscous regularisation sweep")
    s.add_argument("--sigmas", default="0.32,0.16,0.08,0.04,0.02,0.01")

    s = sub.add_parser("solve-mfg", parents=[common], help="damped fixed-point iteration")
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--max-iters", type=int, default=50)
    s.add_argument("--mode", choices=("lagrangian", "union"), default="lagrangian")
    s.add_argument("--every", type=int, default=1)

    s = sub.add_parser("gdiff-probe", parents=[common], help="G-differential probes on a value slice")
    s.add_argument("--points", default="8", help="'x1,x2;x1,x2;...' or a count of random points")
    s.add_argument("--slice-index", type=int, default=0)
    s.add_argument("--ell", type=float, default=None, help="probe radius (default 8 grid cells)")

    s = sub.add_parser("check-invariants", parents=[common], help="re-check a finished run directory")
    s.add_argument("--reference", default=None, help="archived summary.json to compare against")
    s.add_argument("--rtol", type=float, default=1e-6)
    return p


def _default_out(command: str, cfg: Config) -> Path:
    base = os.environ.get(OUT_ENV)
    if base:
        return Path(base)
    return Path("runs") / f"{command}-{cfg.hash[:10]}"


def run_command(args) -> int:
    for name in ("config", "out", "seed", "threads"):
        if not hasattr(args, name):
            setattr(args, name, None)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    if args.command == "check-invariants":
        return cmd_check_invariants(args)
    if args.config is None:
        raise ConfigError("--config: required")
    if getattr(args, "every", 1) < 1:
        raise ConfigError("--every: must be >= 1")
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    out = Path(args.out) if args.out else _default_out(args.command, cfg)
    run = Run(out, RunManifest(args.command, cfg.hash, __version__, cfg.seed))
    run.path("config.toml").write_text(cfg.canonical())
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command](args, cfg, run)
    except NumericalError:
        run.manifest.extra["error"] = "numerical failure"
        run.check(Invariant.flag("run.completed", False))
        run.finish(t0)
        raise
    return run.finish(t0)


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr if file is None else file)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    warnings.showwarning = _show_warning
    try:
        return run_command(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
