"""Viscous regularisation: -u_t - sigma Lap u + |D_G u|^2/2 = f and
m_t - sigma Lap m - div_G(m D_G u) = 0, solved by IMEX finite differences.

Nodes are treated as centres of control volumes of size h1 x h2. Diffusion is
implicit with zero-flux faces on the box boundary (homogeneous Neumann for u,
no-flux for m), so sum(m) h1 h2 is conserved up to the linear solve. The
Hamiltonian is explicit Godunov per axis, the drift explicit upwind.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from grushin_mfg.domain import Grid, MeasurePath, ParticleCloud, ScalarField, TimeGrid
from grushin_mfg.errors import NumericalError
from grushin_mfg.hjb import running_costs, second_differences, spatial_lipschitz
from grushin_mfg.model import ProblemSpec

MASS_TOL = 1e-8
NEG_TOL = 1e-12


def _neumann_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def neumann_laplacian(grid: Grid) -> sp.csr_matrix:
    """Five-point Laplacian in flux form with zero flux through the box faces
    (columns sum to zero, which is what conserves mass)."""
    L1 = _neumann_1d(grid.n1, grid.h1)
    L2 = _neumann_1d(grid.n2, grid.h2)
    return (sp.kron(L1, sp.identity(grid.n2)) + sp.kron(sp.identity(grid.n1), L2)).tocsr()


class _ImplicitDiffusion:
    def __init__(self, grid: Grid, sigma: float, dt: float):
        self.shape = (grid.n1, grid.n2)
        A = sp.identity(grid.n1 * grid.n2, format="csc") - dt * sigma * neumann_laplacian(grid).tocsc()
        self.lu = spla.splu(A.tocsc())

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs.ravel()).reshape(self.shape)


def godunov_hamiltonian(u: np.ndarray, grid: Grid, h2vals: np.ndarray) -> np.ndarray:
    """1/2 [max(p-,0)^2 v min(p+,0)^2] per axis, axis 2 weighted by h(x1)^2.
    One-sided differences through the box faces are zero (Neumann)."""
    d1 = np.diff(u, axis=0) / grid.h1
    d2 = np.diff(u, axis=1) / grid.h2
    z1 = np.zeros((1, u.shape[1]))
    z2 = np.zeros((u.shape[0], 1))
    m1 = np.vstack([z1, d1])  # backward difference
    p1 = np.vstack([d1, z1])  # forward difference
    m2 = np.hstack([z2, d2])
    p2 = np.hstack([d2, z2])
    H1 = np.maximum(np.maximum(m1, 0) ** 2, np.minimum(p1, 0) ** 2)
    H2 = np.maximum(np.maximum(m2, 0) ** 2, np.minimum(p2, 0) ** 2)
    return 0.5 * (H1 + h2vals[:, None] * H2)


def upwind_divergence(m: np.ndarray, u: np.ndarray, grid: Grid, h2vals: np.ndarray) -> np.ndarray:
    """div(m v) with v = -(u_x1, h^2 u_x2) on the faces, upwind mass, zero flux
    through the box boundary."""
    v1 = -np.diff(u, axis=0) / grid.h1  # faces (i+1/2, j)
    v2 = -h2vals[:, None] * np.diff(u, axis=1) / grid.h2  # faces (i, j+1/2)
    F1 = np.maximum(v1, 0) * m[:-1, :] + np.minimum(v1, 0) * m[1:, :]
    F2 = np.maximum(v2, 0) * m[:, :-1] + np.minimum(v2, 0) * m[:, 1:]
    div = np.zeros_like(m)
    div[:-1, :] += F1 / grid.h1
    div[1:, :] -= F1 / grid.h1
    div[:, :-1] += F2 / grid.h2
    div[:, 1:] -= F2 / grid.h2
    return div


def drift_cfl(u: np.ndarray, grid: Grid, h2vals: np.ndarray, dt: float) -> float:
    """Largest dt * (outflow rate) over nodes; the explicit steps are monotone
    when this is at most 1."""
    v1 = np.abs(np.diff(u, axis=0)) / grid.h1
    v2 = h2vals[:, None] * np.abs(np.diff(u, axis=1)) / grid.h2
    out = np.zeros_like(u)
    out[:-1, :] += v1 / grid.h1
    out[1:, :] += v1 / grid.h1
    out[:, :-1] += v2 / grid.h2
    out[:, 1:] += v2 / grid.h2
    return float(dt * out.max())


def viscous_time_grid(spec: ProblemSpec, grid: Grid, base: TimeGrid, cfl: float = 0.5) -> TimeGrid:
    """Refine ``base`` by an integer factor so that dt * V * (1/h1 + 1/h2) <= cfl,
    V an a-priori bound on the drift speed."""
    fb, gb = spec.F.bounds(spec.box), spec.G.bounds(spec.box)
    V = max(1.0, spec.h.sup_abs() ** 2) * (gb["lip"] + spec.T * fb["lip"]) + 1e-12
    dt_max = cfl / (V * (1 / grid.h1 + 1 / grid.h2))
    r = max(1, math.ceil(base.dt / dt_max))
    return TimeGrid(base.t0, base.T, base.n_steps * r)


def _margin_warning(spec: ProblemSpec, sigma: float) -> None:
    if 4 * sigma * spec.T > spec.margin**2:
        warnings.warn(
            f"sigma T = {sigma * spec.T:g} is not small against the squared box margin; "
            "the zero-flux boundary may be felt",
            stacklevel=3,
        )


def _f_on(spec, m_path, grid, tg: TimeGrid):
    """Running cost on every viscous step (linear in time between m-path slices)."""
    base = m_path.time_grid if m_path is not None else spec.time_grid
    f_base, g = running_costs(spec, m_path, grid, base.n_steps + 1)
    if tg.n_steps == base.n_steps:
        return f_base, g
    r = tg.n_steps // base.n_steps
    out = np.empty((tg.n_steps + 1,) + f_base.shape[1:])
    for k in range(tg.n_steps + 1):
        q, s = divmod(k, r)
        if s == 0:
            out[k] = f_base[q]
        else:
            lam = s / r
            out[k] = (1 - lam) * f_base[q] + lam * f_base[q + 1]
    return out, g


def solve_viscous_hjb(
    spec: ProblemSpec,
    m_path: MeasurePath | None,
    sigma: float,
    *,
    grid: Grid | None = None,
    time_grid: TimeGrid | None = None,
) -> tuple[TimeGrid, np.ndarray]:
    """Backward IMEX steps (I - dt sigma Lap) u_k = u_{k+1} - dt H(u_{k+1}) + dt f_k.
    Returns the time grid used and u of shape (n_steps + 1, n1, n2)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    grid = grid or spec.grid
    base = m_path.time_grid if m_path is not None else spec.time_grid
    tg = time_grid or viscous_time_grid(spec, grid, base)
    _margin_warning(spec, sigma)
    f, g = _f_on(spec, m_path, grid, tg)
    h2 = spec.h(grid.x1) ** 2
    solve = _ImplicitDiffusion(grid, sigma, tg.dt)
    N = tg.n_steps
    u = np.empty((N + 1, grid.n1, grid.n2))
    u[N] = g
    for k in range(N - 1, -1, -1):
        rhs = u[k + 1] - tg.dt * godunov_hamiltonian(u[k + 1], grid, h2) + tg.dt * f[k]
        u[k] = solve(rhs)
        if not np.isfinite(u[k]).all():
            raise NumericalError(f"viscous HJB blew up at step {k}")
    return tg, u


def solve_fokker_planck(
    spec: ProblemSpec,
    u: np.ndarray,
    sigma: float,
    m0_field: ScalarField,
    time_grid: TimeGrid,
) -> np.ndarray:
    """Forward steps (I - dt sigma Lap) m_{k+1} = m_k - dt div(m_k v_k),
    v_k = -(u_x1, h^2 u_x2) read from u_k. Returns m of shape (n_steps + 1, n1, n2)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    grid = m0_field.grid
    m0 = m0_field.values
    if (m0 < -NEG_TOL).any():
        raise ValueError("m0 field must be nonnegative")
    mass0 = m0.sum() * grid.h1 * grid.h2
    if abs(mass0 - 1.0) > MASS_TOL:
        raise ValueError(f"m0 field has mass {mass0!r}")
    h2 = spec.h(grid.x1) ** 2
    dt = time_grid.dt
    solve = _ImplicitDiffusion(grid, sigma, dt)
    N = time_grid.n_steps
    m = np.empty((N + 1, grid.n1, grid.n2))
    m[0] = m0
    for k in range(N):
        if drift_cfl(u[k], grid, h2, dt) > 1.0 + 1e-12:
            raise NumericalError(f"drift CFL violated at step {k}; refine the time grid")
        m[k + 1] = solve(m[k] - dt * upwind_divergence(m[k], u[k], grid, h2))
        if m[k + 1].min() < -NEG_TOL:
            raise NumericalError(f"negative density {m[k + 1].min():.3e} at step {k + 1}")
        if not np.isfinite(m[k + 1]).all():
            raise NumericalError(f"Fokker-Planck blew up at step {k + 1}")
    return m


# ---------------------------------------------------------------------------
# estimates and the sweep


def density_cloud(m: np.ndarray, grid: Grid, coarse: Grid | None = None) -> ParticleCloud:
    """Grid density as a particle measure (node weights m h1 h2), optionally
    binned onto a coarser grid so that exact d1 stays affordable."""
    from grushin_mfg.transport import aggregate_to_grid

    w = np.clip(m, 0.0, None).ravel() * grid.h1 * grid.h2
    w = w / w.sum()
    keep = w > 0
    cloud = ParticleCloud(grid.nodes()[keep], w[keep] / w[keep].sum())
    return aggregate_to_grid(cloud, coarse) if coarse is not None else cloud


@dataclass
class EstimateReport:
    sigma: float
    u_inf: float
    du_inf: float
    semiconcavity: float
    m_inf: float
    holder_quotient: float
    moment2_max: float
    mass_error: float
    m_min: float
    time_regularity: float  # max over interior nodes of |u(x,t) - u(x,T)| / (T - t)
    # the same three norms on the initial slice alone, where sigma acts longest
    u0_inf: float = float("nan")
    du0_inf: float = float("nan")
    semiconcavity0: float = float("nan")

    def row(self) -> dict[str, float]:
        return dict(self.__dict__)


@dataclass(eq=False)
class ViscousSolution:
    sigma: float
    grid: Grid
    time_grid: TimeGrid
    u: np.ndarray
    m: np.ndarray
    report: EstimateReport | None = None

    @property
    def u_slices(self) -> list[ScalarField]:
        return [ScalarField(self.grid, v) for v in self.u]

    @property
    def m_slices(self) -> list[ScalarField]:
        return [ScalarField(self.grid, v) for v in self.m]


def holder_quotient(sol: ViscousSolution, n_probe: int = 5, coarse_n: int = 41) -> float:
    """max over probe-time pairs of d1(m(t1), m(t2)) / |t1 - t2|^(1/2)."""
    from grushin_mfg.transport import d1

    coarse = Grid(sol.grid.box, coarse_n, coarse_n)
    N = sol.time_grid.n_steps
    idx = sorted({int(round(q * N)) for q in np.linspace(0, 1, n_probe)})
    clouds = {k: density_cloud(sol.m[k], sol.grid, coarse) for k in idx}
    t = sol.time_grid.times
    best = 0.0
    for a, k1 in enumerate(idx):
        for k2 in idx[a + 1 :]:
            best = max(best, d1(clouds[k1], clouds[k2]) / math.sqrt(t[k2] - t[k1]))
    return best


def interior_mask(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    """Nodes at distance >= margin/2 from the box faces, where the zero-flux
    boundary of the truncated problem is not felt."""
    X1, X2 = grid.mesh()
    b, d = spec.box, 0.5 * spec.margin
    return (
        (X1 >= b.x1_min + d) & (X1 <= b.x1_max - d) & (X2 >= b.x2_min + d) & (X2 <= b.x2_max - d)
    )


def time_regularity_constant(spec: ProblemSpec, sigma: float, grid: Grid | None = None) -> float:
    """C1 with |u(x,t) - g(x)| <= C1 (T - t): g -/+ C1 (T - t) are sub/super
    solutions once C1 >= |F| + sigma |Lap g| + |D_G g|^2 / 2."""
    grid = grid or spec.grid
    fb = spec.F.bounds(spec.box)
    gb = spec.G.bounds(spec.box)
    hs = max(1.0, spec.h.sup_abs() ** 2)
    return fb["sup"] + sigma * gb["c2"] + 0.5 * hs * gb["lip"] ** 2


def estimate_report(sol: ViscousSolution, spec: ProblemSpec) -> EstimateReport:
    g = sol.grid
    u, m = sol.u, sol.m
    du = max(spatial_lipschitz(v, g) for v in u)
    semi = max(max(s1.max(), s2.max()) for s1, s2 in (second_differences(v, g) for v in u))
    X1, X2 = g.mesh()
    r2 = X1**2 + X2**2
    cell = g.h1 * g.h2
    mom = max(float((mk * r2).sum() * cell) for mk in m)
    mass = max(abs(float(mk.sum() * cell) - 1.0) for mk in m)
    times = sol.time_grid.times
    dT = spec.T - times[:-1]
    inner = interior_mask(spec, g)
    treg = float((np.abs(u[:-1] - u[-1][None])[:, inner].max(1) / dT).max())
    return EstimateReport(
        sigma=sol.sigma,
        u_inf=float(np.abs(u).max()),
        du_inf=du,
        semiconcavity=float(semi),
        m_inf=float(m.max()),
        holder_quotient=holder_quotient(sol),
        moment2_max=mom,
        mass_error=mass,
        m_min=float(m.min()),
        time_regularity=treg,
        u0_inf=float(np.abs(u[0]).max()),
        du0_inf=spatial_lipschitz(u[0], g),
        semiconcavity0=float(max(s.max() for s in second_differences(u[0], g))),
    )


def solve_viscous(
    spec: ProblemSpec,
    m_path: MeasurePath | None,
    sigma: float,
    *,
    grid: Grid | None = None,
    with_report: bool = True,
) -> ViscousSolution:
    """u^sigma for the frozen measure path, then m^sigma driven by it."""
    grid = grid or spec.grid
    tg, u = solve_viscous_hjb(spec, m_path, sigma, grid=grid)
    m0 = spec.m0.on_grid(grid)
    m = solve_fokker_planck(spec, u, sigma, m0, tg)
    sol = ViscousSolution(sigma, grid, tg, u, m)
    if with_report:
        sol.report = estimate_report(sol, spec)
    return sol


@dataclass
class SweepResult:
    solutions: list[ViscousSolution]
    dist_to_prev: list[float] = field(default_factory=list)  # |u^s - u^{s_prev}|_inf
    dist_to_reference: list[float] | None = None

    def rows(self) -> list[dict[str, float]]:
        out = []
        for sol, dp in zip(self.solutions, self.dist_to_prev):
            r = sol.report.row()
            r["dist_to_prev_sigma"] = dp
            out.append(r)
        return out

    def spread(self, key: str) -> float:
        """(max - min) / max of a report column over the sweep."""
        v = np.array([getattr(s.report, key) for s in self.solutions])
        top = np.abs(v).max()
        return 0.0 if top == 0 else float((v.max() - v.min()) / top)


def sigma_sweep(
    spec: ProblemSpec,
    m_path: MeasurePath | None,
    sigmas,
    *,
    grid: Grid | None = None,
    reference=None,
    reference_mask: np.ndarray | None = None,
) -> SweepResult:
    """Solve for every sigma (decreasing). ``reference(X1, X2, t)`` optionally
    gives a first-order solution to measure the distance to, on ``reference_mask``."""
    sigmas = [float(s) for s in sigmas]
    if any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("sigmas must be strictly decreasing")
    sols = [solve_viscous(spec, m_path, s, grid=grid) for s in sigmas]
    dist = [float("nan")]
    for a, b in zip(sols, sols[1:]):
        dist.append(_u_distance(a, b))
    res = SweepResult(sols, dist)
    if reference is not None:
        res.dist_to_reference = [_reference_distance(s, reference, reference_mask) for s in sols]
    return res


def _u_distance(a: ViscousSolution, b: ViscousSolution) -> float:
    """sup over common time slices of |u_a - u_b|."""
    ta, tb = a.time_grid.times, b.time_grid.times
    if len(ta) == len(tb):
        return float(np.abs(a.u - b.u).max())
    # common slices of two nested grids
    ra = len(ta) - 1
    rb = len(tb) - 1
    g = math.gcd(ra, rb)
    ia = np.arange(0, ra + 1, ra // g)
    ib = np.arange(0, rb + 1, rb // g)
    return float(np.abs(a.u[ia] - b.u[ib]).max())


def _reference_distance(sol: ViscousSolution, reference, mask) -> float:
    X1, X2 = sol.grid.mesh()
    worst = 0.0
    for k, t in enumerate(sol.time_grid.times):
        diff = np.abs(sol.u[k] - reference(X1, X2, t))
        if mask is not None:
            diff = diff[mask]
        worst = max(worst, float(diff.max()))
    return worst
