"""Push-forward of m0 along the optimal feedback flow, weak residual of the
continuity equation, and exact Kantorovich-Rubinstein distances."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from grushin_mfg._kernels import bump_sum_grid
from grushin_mfg.domain import Grid, MeasurePath, ParticleCloud, ScalarField, cloud_moment2
from grushin_mfg.errors import NumericalError
from grushin_mfg.model import InitialDensity, ProblemSpec, bump, bump_derivatives

D1_SUPPORT_CAP = 4000


def sample_m0(spec: ProblemSpec | InitialDensity, n_particles: int, seed: int = 0) -> ParticleCloud:
    """Weighted lattice quadrature of m0.

    Nodes c + delta (i, j) strictly inside the support, with delta = r/(k+1) and
    k the smallest integer giving at least ``n_particles`` nodes. Weights are
    m0 at the nodes, normalised. The seed only permutes the particle order.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    m0 = spec.m0 if isinstance(spec, ProblemSpec) else spec
    k = 0
    while True:
        ij = np.arange(-k, k + 1)
        I, J = np.meshgrid(ij, ij, indexing="ij")
        inside = I**2 + J**2 < (k + 1) ** 2
        if inside.sum() >= n_particles:
            break
        k += 1
    delta = m0.radius / (k + 1)
    c = np.asarray(m0.center)
    pos = c + delta * np.column_stack([I[inside], J[inside]]).astype(np.float64)
    w = m0(pos[:, 0], pos[:, 1])
    w = w / w.sum()
    perm = np.random.default_rng(seed).permutation(len(w))
    return ParticleCloud(pos[perm], w[perm] / w[perm].sum())


def _velocity(spec: ProblemSpec, vf, k: int, pts: np.ndarray) -> np.ndarray:
    a = vf.feedback_at_slice(k, pts)
    return np.column_stack([a[:, 0], spec.h(pts[:, 0]) * a[:, 1]])


def push_forward(spec: ProblemSpec, vf, m0_cloud: ParticleCloud) -> MeasurePath:
    """Advect every particle with velocity b(x, alpha_k(x)) on [t_k, t_{k+1}),
    alpha_k the interpolated feedback of slice k, using classical RK4."""
    tg = vf.time_grid
    dt = tg.dt
    box = spec.box
    x = m0_cloud.positions.copy()
    clouds = [m0_cloud]
    for k in range(tg.n_steps):
        k1 = _velocity(spec, vf, k, x)
        k2 = _velocity(spec, vf, k, x + dt / 2 * k1)
        k3 = _velocity(spec, vf, k, x + dt / 2 * k2)
        k4 = _velocity(spec, vf, k, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not box.contains(x).all():
            raise NumericalError(f"domain too small: a particle left the box at step {k + 1}")
        clouds.append(m0_cloud.moved(x))
    return MeasurePath(tg, clouds)


# ---------------------------------------------------------------------------
# weak form of the continuity equation


@dataclass(frozen=True)
class BumpTestFunction:
    """psi(x, t) = (1 + a t) rho_R(x - c - v t): smooth, compactly supported,
    with closed-form time derivative and gradient."""

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    drift: tuple[float, float] = (0.0, 0.0)
    growth: float = 0.0

    def _z(self, x, t):
        c = np.asarray(self.center) + t * np.asarray(self.drift)
        return x[:, 0] - c[0], x[:, 1] - c[1]

    def value(self, x, t):
        z1, z2 = self._z(x, t)
        return (1 + self.growth * t) * bump(z1, z2, self.radius)

    def grad(self, x, t):
        z1, z2 = self._z(x, t)
        _, (g1, g2), _ = bump_derivatives(z1, z2, self.radius)
        s = 1 + self.growth * t
        return np.column_stack([s * g1, s * g2])

    def dt(self, x, t):
        z1, z2 = self._z(x, t)
        v, (g1, g2), _ = bump_derivatives(z1, z2, self.radius)
        d = self.drift
        return self.growth * v - (1 + self.growth * t) * (g1 * d[0] + g2 * d[1])


@dataclass(frozen=True)
class ZeroTestFunction:
    def value(self, x, t):
        return np.zeros(len(x))

    def grad(self, x, t):
        return np.zeros((len(x), 2))

    def dt(self, x, t):
        return np.zeros(len(x))


def weak_residual(spec: ProblemSpec, vf, m_path: MeasurePath, test_fn) -> float:
    """|int_0^T sum_i w_i [psi_t + D psi . b(x_i, alpha)] dt + <psi(0), m(0)> - <psi(T), m(T)>|.

    Trapezoidal rule per step, with the feedback slice that drove the step used
    at both of its end points.
    """
    tg = m_path.time_grid
    times = tg.times
    w = m_path.clouds[0].weights
    total = 0.0
    for k in range(tg.n_steps):
        acc = 0.0
        for s, cl in ((times[k], m_path.clouds[k]), (times[k + 1], m_path.clouds[k + 1])):
            x = cl.positions
            v = _velocity(spec, vf, k, x)
            integrand = test_fn.dt(x, s) + np.einsum("ij,ij->i", test_fn.grad(x, s), v)
            acc += float(integrand @ w)
        total += 0.5 * tg.dt * acc
    first = m_path.clouds[0]
    last = m_path.clouds[-1]
    total += float(test_fn.value(first.positions, times[0]) @ first.weights)
    total -= float(test_fn.value(last.positions, times[-1]) @ last.weights)
    return abs(total)


# ---------------------------------------------------------------------------
# Kantorovich-Rubinstein distance


def _ot():
    # keep POT from importing the heavy optional array backends
    for name in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


def d1(a: ParticleCloud, b: ParticleCloud, cap: int = D1_SUPPORT_CAP) -> float:
    """Exact W1 between two particle measures (network simplex)."""
    if len(a) + len(b) > cap:
        raise ValueError(
            f"combined support {len(a) + len(b)} exceeds the cap {cap}; "
            "reduce the clouds with aggregate_to_grid first"
        )
    if len(a) == 1 or len(b) == 1:
        # one transport route per atom
        if len(a) == 1:
            a, b = b, a
        return float(a.weights @ np.linalg.norm(a.positions - b.positions[0], axis=1))
    ot = _ot()
    M = np.linalg.norm(a.positions[:, None, :] - b.positions[None, :, :], axis=2)
    # tiny renormalisation so that POT's feasibility check sees equal masses
    wa = a.weights / a.weights.sum()
    wb = b.weights / b.weights.sum()
    val = ot.emd2(wa, wb, M, numItermax=10_000_000)
    return max(float(val), 0.0)


def aggregate_to_grid(cloud: ParticleCloud, grid: Grid) -> ParticleCloud:
    """Bin mass to the centres of the grid cells (particles outside the box go
    to the nearest boundary cell)."""
    b = grid.box
    i = np.clip(np.floor((cloud.positions[:, 0] - b.x1_min) / grid.h1), 0, grid.n1 - 2).astype(int)
    j = np.clip(np.floor((cloud.positions[:, 1] - b.x2_min) / grid.h2), 0, grid.n2 - 2).astype(int)
    flat = i * (grid.n2 - 1) + j
    cells, inv = np.unique(flat, return_inverse=True)
    w = np.bincount(inv, weights=cloud.weights)
    ci, cj = np.divmod(cells, grid.n2 - 1)
    pos = np.column_stack([b.x1_min + (ci + 0.5) * grid.h1, b.x2_min + (cj + 0.5) * grid.h2])
    return ParticleCloud(pos, w)


def render_density(cloud: ParticleCloud, grid: Grid, bandwidth: float) -> ScalarField:
    """Kernel density estimate with the C^2 bump kernel of radius ``bandwidth``."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    b = grid.box
    vals = bump_sum_grid(
        cloud.positions, cloud.weights, bandwidth, b.x1_min, b.x2_min, grid.h1, grid.h2, grid.n1, grid.n2
    )
    return ScalarField(grid, vals)


def render_path(m_path: MeasurePath, grid: Grid, bandwidth: float) -> MeasurePath:
    dens = [render_density(c, grid, bandwidth) for c in m_path.clouds]
    return MeasurePath(m_path.time_grid, m_path.clouds, dens)


# ---------------------------------------------------------------------------
# path diagnostics


def mass_error(m_path: MeasurePath) -> float:
    return max(abs(c.weights.sum() - 1.0) for c in m_path.clouds)


def coupled_displacement(a: ParticleCloud, b: ParticleCloud) -> float:
    """sum_i w_i |x_i - y_i| for two clouds that share their weights: the cost of
    the identity coupling, hence an upper bound on d1."""
    return float(a.weights @ np.linalg.norm(a.positions - b.positions, axis=1))


@dataclass
class LipschitzReport:
    bound: float  # L_space * max(1, |h|^2) per unit time
    worst_ratio: float  # max over pairs of d1 / (bound |t1 - t2|)
    worst_exact_ratio: float  # same with exact d1 on the probe pairs
    holds: bool


def time_lipschitz_check(
    m_path: MeasurePath, L_space: float, h_sup: float, slack: float = 0.05, n_probe: int = 5
) -> LipschitzReport:
    """d1(m(t1), m(t2)) <= L_space max(1, |h|_inf^2) |t1 - t2| (1 + slack).

    Every pair is checked through the identity-coupling upper bound (vectorised
    over pairs); the probe-time pairs are also checked with the exact d1.
    """
    bound = L_space * max(1.0, h_sup**2)
    times = m_path.time_grid.times
    X = np.stack([c.positions for c in m_path.clouds])  # (K, N, 2)
    w = m_path.clouds[0].weights
    worst = 0.0
    for k in range(len(times) - 1):
        disp = np.linalg.norm(X[k + 1 :] - X[k][None], axis=2) @ w
        ratio = disp / (bound * (times[k + 1 :] - times[k]))
        worst = max(worst, float(ratio.max()))
    exact = 0.0
    idx = m_path.probe_indices(n_probe)
    for a_i, k1 in enumerate(idx):
        for k2 in idx[a_i + 1 :]:
            a, b = m_path.clouds[k1], m_path.clouds[k2]
            d = d1(a, b) if len(a) + len(b) <= D1_SUPPORT_CAP else coupled_displacement(a, b)
            exact = max(exact, d / (bound * (times[k2] - times[k1])))
    return LipschitzReport(bound, worst, exact, max(worst, exact) <= 1 + slack)


def control_headroom(spec: ProblemSpec, vf, m_path: MeasurePath) -> float:
    """A_max over the largest feedback component met by the particles; values
    >= 2 mean the control cap never binds along the computed flow."""
    top = 0.0
    for k in range(m_path.time_grid.n_steps):
        a = vf.feedback_at_slice(k, m_path.clouds[k].positions)
        top = max(top, float(np.abs(a).max()))
    return float("inf") if top == 0 else spec.A_max / top


def moment_report(m_path: MeasurePath) -> dict[str, float]:
    """max_t int |x|^2 dm(t) and the constant K in <= K (int |x|^2 dm0 + 1)."""
    m2 = [cloud_moment2(c) for c in m_path.clouds]
    base = m2[0] + 1.0
    return {"moment2_max": max(m2), "K": max(m2) / base}


def transport_diagnostics(m_path: MeasurePath, exact_cap: int = 1000) -> list[dict[str, float]]:
    """Per-slice rows k, t, mass, moment2, d1_to_prev. d1 is exact when the
    combined support is at most ``exact_cap``, else the identity-coupling bound."""
    rows = []
    prev = None
    for k, (t, c) in enumerate(zip(m_path.time_grid.times, m_path.clouds)):
        if prev is None:
            dprev = 0.0
        elif 2 * len(c) <= exact_cap:
            dprev = d1(prev, c)
        else:
            dprev = coupled_displacement(prev, c)
        rows.append({"k": k, "t": float(t), "mass": c.mass, "moment2": cloud_moment2(c), "d1_to_prev": dprev})
        prev = c
    return rows
