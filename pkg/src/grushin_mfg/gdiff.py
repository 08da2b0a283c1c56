"""Numerical probes of G-differentials: one-sided G-directional derivatives,
reachable G-gradients, the superdifferential inequality and the min-formula
linking them, plus the identity D_G u = -alpha along optimal trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from grushin_mfg.domain import ScalarField, Trajectory, interpolate_many
from grushin_mfg.hjb import second_differences
from grushin_mfg.model import DegeneracyProfile

KINK_FACTOR = 5.0
KINK_QUANTILE = 90.0  # kinks occupy a thin set of cells, so this sees smooth curvature
KINK_FLOOR = 1e-6  # times 1/h^2: only rounding noise sits below it
CLUSTER_FACTOR = 10.0


@dataclass(frozen=True)
class SliceStats:
    """Per-slice quantities the probes share: the median |second difference|,
    the kink threshold on |second differences| and the robust one-sided
    curvature bound away from kinks."""

    median_abs: float
    threshold: float
    curvature: float

    @classmethod
    def of(cls, fld: ScalarField, floor: float = KINK_FLOOR) -> SliceStats:
        s1, s2 = second_differences(fld.values, fld.grid)
        both = np.concatenate([s1.ravel(), s2.ravel()])
        med = float(np.median(np.abs(both)))
        spacing = max(fld.grid.h1, fld.grid.h2)
        thr = max(KINK_FACTOR * float(np.percentile(np.abs(both), KINK_QUANTILE)), floor / spacing**2)
        calm = both[np.abs(both) <= thr]
        curv = float(max(0.0, calm.max())) if len(calm) else 0.0
        return cls(med, thr, curv)


@dataclass(eq=False)
class GDiffProbe:
    x: np.ndarray
    u_slice: ScalarField
    h: DegeneracyProfile
    ell: float
    n_angular: int = 16
    stats: SliceStats | None = None

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        g = self.u_slice.grid
        spacing = max(g.h1, g.h2)
        if self.ell < 2 * spacing - 1e-12:
            raise ValueError(f"probe radius {self.ell} below twice the grid spacing {spacing}")
        # the ring sampling of reachable gradients adds a one-cell stencil
        reach = self.ell * max(1.0, abs(self.hx)) + spacing
        b = g.box
        if not (
            b.x1_min + reach <= self.x[0] <= b.x1_max - reach
            and b.x2_min + reach <= self.x[1] <= b.x2_max - reach
        ):
            raise ValueError("probe point too close to the box boundary")
        if self.stats is None:
            self.stats = SliceStats.of(self.u_slice)

    @property
    def hx(self) -> float:
        return float(self.h(self.x[0]))

    @property
    def differencing_error(self) -> float:
        """Error scale of a central difference of the interpolant, C h / 2."""
        g = self.u_slice.grid
        return 0.5 * max(self.stats.median_abs, 1e-12) * max(g.h1, g.h2) + 1e-9

    def u(self, pts) -> np.ndarray:
        return interpolate_many(self.u_slice, np.atleast_2d(pts))


def _check_unit(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (2,) or abs(np.linalg.norm(theta) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return theta


def g_directional_derivative(probe: GDiffProbe, theta) -> float:
    """Richardson extrapolation of Q(l) = [u(x1 + l th1, x2 + h(x1) l th2) - u(x)] / l
    from l = ell, ell/2, ell/4: (8 Q(ell/4) - 6 Q(ell/2) + Q(ell)) / 3."""
    theta = _check_unit(theta)
    step = np.array([theta[0], probe.hx * theta[1]])
    ls = np.array([probe.ell, probe.ell / 2, probe.ell / 4])
    vals = probe.u(np.vstack([probe.x, probe.x + ls[:, None] * step]))
    Q = (vals[1:] - vals[0]) / ls
    return float((8 * Q[2] - 6 * Q[1] + Q[0]) / 3)


def _gradients(probe: GDiffProbe, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference D_G u at the points and a kink flag per point."""
    g = probe.u_slice.grid
    e1 = np.array([g.h1, 0.0])
    e2 = np.array([0.0, g.h2])
    c = probe.u(pts)
    a1, b1 = probe.u(pts + e1), probe.u(pts - e1)
    a2, b2 = probe.u(pts + e2), probe.u(pts - e2)
    p1 = (a1 - b1) / (2 * g.h1)
    p2 = probe.h(pts[:, 0]) * (a2 - b2) / (2 * g.h2)
    s1 = np.abs(a1 + b1 - 2 * c) / g.h1**2
    s2 = np.abs(a2 + b2 - 2 * c) / g.h2**2
    kink = np.maximum(s1, s2) > probe.stats.threshold
    return np.column_stack([p1, p2]), kink


@dataclass
class ReachableSet:
    representatives: np.ndarray  # (n_clusters, 2)
    sizes: list[int]
    tolerance: float
    n_flagged: int
    inconclusive: bool

    def __len__(self) -> int:
        return len(self.representatives)


def cluster(points: np.ndarray, tol: float) -> tuple[np.ndarray, list[int]]:
    """Greedy clustering: a point joins the first cluster whose running mean lies
    within tol (sup-norm), else opens a new one. Deterministic in input order."""
    reps: list[np.ndarray] = []
    members: list[list[np.ndarray]] = []
    for p in points:
        for k, r in enumerate(reps):
            if np.abs(p - r).max() <= tol:
                members[k].append(p)
                reps[k] = np.mean(members[k], axis=0)
                break
        else:
            reps.append(p.copy())
            members.append([p])
    return np.array(reps).reshape(-1, 2), [len(m) for m in members]


def reachable_g_gradients(probe: GDiffProbe, n_samples: int = 32) -> ReachableSet:
    """Limits of D_G u along rays into x: on rings of radius r = ell/2 and r/2
    the ray value is extrapolated linearly to r = 0 (2 p(r/2) - p(r)); rays
    that cross a kink cell are dropped; the limits are then clustered."""
    if n_samples < 4:
        raise ValueError("need at least 4 samples")
    phi = 2 * np.pi * (np.arange(n_samples) + 0.5) / n_samples
    dirs = np.column_stack([np.cos(phi), np.sin(phi)])
    r = probe.ell / 2
    p_far, k_far = _gradients(probe, probe.x + r * dirs)
    p_near, k_near = _gradients(probe, probe.x + 0.5 * r * dirs)
    ok = ~(k_far | k_near)
    tol = CLUSTER_FACTOR * probe.differencing_error
    if not ok.any():
        return ReachableSet(np.zeros((0, 2)), [], tol, int(n_samples), True)
    limits = 2 * p_near[ok] - p_far[ok]
    reps, sizes = cluster(limits, tol)
    return ReachableSet(reps, sizes, tol, int((~ok).sum()), False)


def superdifferential_check(
    probe: GDiffProbe, p, n_dirs: int = 32, C: float | None = None, tol: float | None = None
) -> tuple[bool, float]:
    """Test u(x1 + v1, x2 + h(x1) v2) - u(x) - (p, v) <= C |w|^2, w = (v1, h(x1) v2),
    over n_dirs directions and radii ell, ell/2, ell/4. C defaults to the slice's
    one-sided curvature away from kinks. Returns (passed, worst violation)."""
    p = np.asarray(p, dtype=np.float64)
    C = probe.stats.curvature if C is None else C
    g = probe.u_slice.grid
    tol = (probe.stats.median_abs + 1.0) * max(g.h1, g.h2) ** 2 if tol is None else tol
    phi = 2 * np.pi * np.arange(n_dirs) / n_dirs
    dirs = np.column_stack([np.cos(phi), np.sin(phi)])
    u0 = probe.u(probe.x)[0]
    worst = -np.inf
    for rho in (probe.ell, probe.ell / 2, probe.ell / 4):
        v = rho * dirs
        w = np.column_stack([v[:, 0], probe.hx * v[:, 1]])
        lhs = probe.u(probe.x + w) - u0 - v @ p
        rhs = C * (w**2).sum(1)
        worst = max(worst, float((lhs - rhs).max()))
    return worst <= tol, worst


@dataclass
class MinFormulaReport:
    max_gap: float
    n_clusters: int
    inconclusive: bool
    gaps: list[float] = field(default_factory=list)
    reachable: ReachableSet | None = None


def min_formula_check(probe: GDiffProbe, n_dirs: int = 16, n_samples: int = 32) -> MinFormulaReport:
    """For n_dirs directions compare the directional derivative with
    min over reachable gradients of (p, theta)."""
    reach = reachable_g_gradients(probe, n_samples)
    if reach.inconclusive:
        return MinFormulaReport(float("nan"), 0, True, [], reach)
    phi = 2 * np.pi * np.arange(n_dirs) / n_dirs
    gaps = []
    for a in phi:
        th = np.array([math.cos(a), math.sin(a)])
        lhs = g_directional_derivative(probe, th)
        rhs = float((reach.representatives @ th).min())
        gaps.append(abs(lhs - rhs))
    return MinFormulaReport(max(gaps), len(reach), False, gaps, reach)


# alias kept for the published operation name
appendixB_theorem_check = min_formula_check


def feedback_gradient_consistency(spec, vf, traj: Trajectory, stride: int = 1) -> float:
    """max over samples of |D_G u(x*(s), s) + alpha*(s)|, skipping samples whose
    stencil sees a kink and samples too close to the box to difference."""
    worst = 0.0
    stats_cache: dict[int, SliceStats] = {}
    g = vf.grid
    for k in range(0, len(traj.times), stride):
        s = traj.times[k]
        kk, lam = vf.time_grid.locate(s)
        kk = kk + 1 if lam > 0.5 else kk
        fld = vf.slice(kk)
        if kk not in stats_cache:
            stats_cache[kk] = SliceStats.of(fld)
        st = stats_cache[kk]
        x = traj.x[k]
        b = g.box
        if not (b.x1_min + g.h1 <= x[0] <= b.x1_max - g.h1 and b.x2_min + g.h2 <= x[1] <= b.x2_max - g.h2):
            continue
        probe_like = _StencilProbe(fld, spec.h, st)
        pg, kink = _gradients(probe_like, x[None, :])
        if kink[0]:
            continue
        worst = max(worst, float(np.abs(pg[0] + traj.alpha[k]).max()))
    return worst


@dataclass
class _StencilProbe:
    u_slice: ScalarField
    h: DegeneracyProfile
    stats: SliceStats

    def u(self, pts) -> np.ndarray:
        return interpolate_many(self.u_slice, np.atleast_2d(pts))
