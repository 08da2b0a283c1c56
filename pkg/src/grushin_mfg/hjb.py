"""Backward semi-Lagrangian solver for -u_t + |D_G u|^2/2 = f, u(T) = g.

The scheme is the discrete dynamic programming principle

    u(x, t_k) = min_a  dt (|a|^2/2 + f(x, t_k)) + I[u(., t_{k+1})](x + dt b(x, a)),

with b(x, a) = (a1, h(x1) a2) and I the bilinear interpolant. The minimum is
searched on a polar lattice and then, with ``refine``, computed exactly over
the control square |a_i| <= A_max (the interpolated cost is piecewise
quadratic in a). The minimiser is stored as a feedback field and drives the
particle transport.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from grushin_mfg._kernels import sl_apply, sl_step
from grushin_mfg.domain import Grid, MeasurePath, ScalarField, TimeGrid
from grushin_mfg.errors import ConfigError, NumericalError
from grushin_mfg.model import ProblemSpec


def control_set(A_max: float, n_radial: int, n_angular: int) -> np.ndarray:
    """Polar lattice {0} U {r_k (cos th_j, sin th_j)}, r_k = A_max k / n_radial."""
    if A_max <= 0:
        raise ConfigError("A_max must be > 0")
    if n_radial < 0 or (n_radial > 0 and n_angular < 1):
        raise ConfigError("control lattice needs n_radial >= 0 and n_angular >= 1")
    ctrl = [(0.0, 0.0)]
    for k in range(1, n_radial + 1):
        r = A_max * k / n_radial
        for j in range(n_angular):
            th = 2 * math.pi * j / n_angular
            # snap the axis directions so that (0, 1) is exactly representable
            c, s = round(math.cos(th), 15), round(math.sin(th), 15)
            ctrl.append((r * c, r * s))
    return np.array(ctrl, dtype=np.float64)


@dataclass(eq=False)
class ValueFunctionPath:
    grid: Grid
    time_grid: TimeGrid
    u: np.ndarray  # (n_steps + 1, n1, n2)
    feedback: np.ndarray  # (n_steps, n1, n2, 2), control applied on [t_k, t_{k+1})
    f: np.ndarray  # (n_steps + 1, n1, n2), running cost on the nodes
    hvals: np.ndarray  # h(x1) on the x1 nodes

    @property
    def slices(self) -> list[ScalarField]:
        return [ScalarField(self.grid, self.u[k]) for k in range(len(self.u))]

    def slice(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.u[k])

    def value_at(self, x, s: float) -> float:
        """u(x, s) by bilinear interpolation in space and linear in time."""
        k, lam = self.time_grid.locate(s)
        x = np.asarray(x, dtype=np.float64)[None, :]
        a = self.slice(k)(x)[0]
        if lam == 0.0:
            return float(a)
        return float((1 - lam) * a + lam * self.slice(k + 1)(x)[0])

    def feedback_at(self, pts: np.ndarray, s: float) -> np.ndarray:
        """Interpolated feedback control at points (N, 2) and time s."""
        k, _ = self.time_grid.locate(s)
        return self.feedback_at_slice(k, pts)

    def feedback_at_slice(self, k: int, pts: np.ndarray) -> np.ndarray:
        """Feedback of the step [t_k, t_{k+1}) interpolated at points (N, 2)."""
        fb = self.feedback[min(k, len(self.feedback) - 1)]
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        out = np.empty((len(pts), 2))
        out[:, 0] = ScalarField(self.grid, fb[..., 0])(pts)
        out[:, 1] = ScalarField(self.grid, fb[..., 1])(pts)
        return out

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.u).max())


def running_costs(spec: ProblemSpec, m_path: MeasurePath | None, grid: Grid, n_slices: int):
    """f(., t_k) = F(., m(t_k)) on the nodes for every slice, and g = G(., m(T))."""
    if m_path is None:
        if not (spec.F.decoupled and spec.G.decoupled):
            raise ConfigError("coupled problem needs a measure path")
        f0 = spec.F.on_grid(None, grid)
        return np.broadcast_to(f0, (n_slices,) + f0.shape).copy(), spec.G.on_grid(None, grid)
    if len(m_path.clouds) != n_slices:
        raise ConfigError("measure path and value function use different time grids")
    f = np.stack([spec.F.on_grid(c, grid) for c in m_path.clouds])
    return f, spec.G.on_grid(m_path.clouds[-1], grid)


def check_step_size(spec: ProblemSpec, grid: Grid, dt: float) -> None:
    if dt <= 0:
        raise ConfigError("dt must be > 0")
    hb = spec.h.sup_abs()
    tol = 1e-12
    if dt * spec.A_max > grid.h1 * (1 + tol) or dt * spec.A_max * hb > grid.h2 * (1 + tol):
        raise ConfigError(
            f"dt = {dt:g} moves foot points beyond one cell (need dt <= h/A_max; "
            f"h1 = {grid.h1:g}, h2 = {grid.h2:g}, A_max = {spec.A_max:g})"
        )


def solve_hjb(
    spec: ProblemSpec,
    m_path: MeasurePath | None = None,
    *,
    grid: Grid | None = None,
    time_grid: TimeGrid | None = None,
    controls: np.ndarray | None = None,
    refine: bool | None = None,
) -> ValueFunctionPath:
    st = spec.settings
    grid = grid or spec.grid
    time_grid = time_grid or (m_path.time_grid if m_path is not None else spec.time_grid)
    if controls is None:
        controls = control_set(spec.A_max, st.n_radial, st.n_angular)
    if len(controls) == 0:
        raise ConfigError("empty control set")
    refine = st.refine_controls if refine is None else refine
    dt = time_grid.dt
    check_step_size(spec, grid, dt)

    N = time_grid.n_steps
    f, g = running_costs(spec, m_path, grid, N + 1)
    hvals = np.ascontiguousarray(spec.h(grid.x1), dtype=np.float64)
    b = grid.box
    u = np.empty((N + 1, grid.n1, grid.n2))
    feedback = np.empty((N, grid.n1, grid.n2, 2))
    u[N] = g
    ctrl = np.ascontiguousarray(controls, dtype=np.float64)
    for k in range(N - 1, -1, -1):
        u[k], feedback[k] = sl_step(
            u[k + 1], b.x1_min, b.x2_min, grid.h1, grid.h2, hvals, ctrl, dt,
            np.ascontiguousarray(f[k]), float(spec.A_max), bool(refine),
        )
        if not np.isfinite(u[k]).all():
            raise NumericalError(f"non-finite value function at slice {k}")
    return ValueFunctionPath(grid, time_grid, u, feedback, f, hvals)


def dpp_one_step_residual(vf: ValueFunctionPath) -> float:
    """Max over slices of |u_k - (recursion evaluated with the stored feedback)|."""
    b = vf.grid.box
    dt = vf.time_grid.dt
    worst = 0.0
    for k in range(vf.time_grid.n_steps):
        rec = sl_apply(
            vf.u[k + 1], b.x1_min, b.x2_min, vf.grid.h1, vf.grid.h2, vf.hvals,
            np.ascontiguousarray(vf.feedback[k]), dt, np.ascontiguousarray(vf.f[k]),
        )
        worst = max(worst, float(np.abs(rec - vf.u[k]).max()))
    return worst


def dpp_optimality_gap(vf: ValueFunctionPath, A_max: float, n_side: int = 33, stride: int = 1) -> float:
    """max of u_k - min over a dense n_side x n_side control sample of the square
    |alpha_i| <= A_max of the one-step recursion, over every stride-th slice.
    A discrete viscosity solution is the exact minimum, so this is <= rounding."""
    b = vf.grid.box
    dt = vf.time_grid.dt
    a = np.linspace(-A_max, A_max, n_side)
    A1, A2 = np.meshgrid(a, a, indexing="ij")
    ctrl = np.ascontiguousarray(np.column_stack([A1.ravel(), A2.ravel()]))
    worst = -np.inf
    for k in range(0, vf.time_grid.n_steps, stride):
        dense, _ = sl_step(
            vf.u[k + 1], b.x1_min, b.x2_min, vf.grid.h1, vf.grid.h2, vf.hvals, ctrl, dt,
            np.ascontiguousarray(vf.f[k]), float(A_max), False,
        )
        worst = max(worst, float((vf.u[k] - dense).max()))
    return worst


def spatial_lipschitz(values: np.ndarray, grid: Grid) -> float:
    d1 = np.diff(values, axis=0)[:, :-1] / grid.h1
    d2 = np.diff(values, axis=1)[:-1, :] / grid.h2
    return float(np.hypot(d1, d2).max())


def lipschitz_diagnostic(vf: ValueFunctionPath) -> tuple[float, float]:
    """(L_space, L_time): largest forward-difference gradient norm over all
    slices, and largest difference quotient between adjacent slices."""
    L_space = max(spatial_lipschitz(vf.u[k], vf.grid) for k in range(len(vf.u)))
    L_time = float((np.abs(np.diff(vf.u, axis=0)) / vf.time_grid.dt).max())
    return L_space, L_time


def second_differences(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Centered second differences along x1 and x2 on the interior nodes."""
    v = values
    s1 = (v[2:, 1:-1] + v[:-2, 1:-1] - 2 * v[1:-1, 1:-1]) / grid.h1**2
    s2 = (v[1:-1, 2:] + v[1:-1, :-2] - 2 * v[1:-1, 1:-1]) / grid.h2**2
    return s1, s2


def semiconcavity_diagnostic(u_slice: ScalarField) -> float:
    """Largest centered second difference along the axes (one-sided C^2 bound)."""
    s1, s2 = second_differences(u_slice.values, u_slice.grid)
    return float(max(s1.max(), s2.max()))


def rollout(spec: ProblemSpec, vf: ValueFunctionPath, x0, k0: int = 0):
    """Follow the stored feedback from node-time (x0, t_k0); explicit Euler with
    the scheme's own step, so the rollout is exactly the scheme's characteristic."""
    from grushin_mfg.domain import Trajectory

    tg = vf.time_grid
    dt = tg.dt
    N = tg.n_steps
    xs = [np.asarray(x0, dtype=np.float64)]
    als = []
    for k in range(k0, N):
        a = vf.feedback_at(xs[-1][None, :], tg.times[k])[0]
        x = xs[-1]
        xs.append(x + dt * np.array([a[0], float(spec.h(x[0])) * a[1]]))
        als.append(a)
    als.append(als[-1] if als else np.zeros(2))
    return Trajectory(tg.times[k0:], np.array(xs), np.array(als))
