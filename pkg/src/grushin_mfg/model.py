"""Problem data: degeneracy profile h, Hamiltonian, Grushin gradient, couplings, m0."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from grushin_mfg._kernels import bump_grad_sum, bump_sum_grid
from grushin_mfg.domain import Box, Grid, ParticleCloud, ScalarField, TimeGrid, interpolate_many

# ---------------------------------------------------------------------------
# degeneracy profile


@dataclass(frozen=True)
class DegeneracyProfile:
    """h(z) with its first two derivatives.

    ``kind`` is one of ``sine`` (h = sin(param*z)), ``sigmoid``
    (h = z/sqrt(1+z^2), param unused) or ``constant`` (h = param).
    ``custom`` takes three callables.
    """

    kind: str
    param: float = 1.0
    custom: tuple | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("sine", "sigmoid", "constant", "custom"):
            raise ValueError(f"unknown h.kind {self.kind!r}")
        if self.kind == "sine" and self.param == 0:
            raise ValueError("h.param must be nonzero for the sine profile")
        if self.kind == "custom" and (self.custom is None or len(self.custom) != 3):
            raise ValueError("custom profile needs (h, h', h'') callables")

    def __call__(self, z):
        return self.eval(z)[0]

    def eval(self, z):
        z = np.asarray(z, dtype=np.float64)
        k = self.param
        if self.kind == "sine":
            return np.sin(k * z), k * np.cos(k * z), -k * k * np.sin(k * z)
        if self.kind == "sigmoid":
            q = 1.0 + z * z
            return z / np.sqrt(q), q ** -1.5, -3.0 * z * q ** -2.5
        if self.kind == "constant":
            return np.full_like(z, k), np.zeros_like(z), np.zeros_like(z)
        h, dh, ddh = self.custom
        return np.asarray(h(z), float), np.asarray(dh(z), float), np.asarray(ddh(z), float)

    def c2_bound(self, lo: float = -50.0, hi: float = 50.0, n: int = 20001) -> float:
        """max(|h|, |h'|, |h''|) from sampling (exact for the built-in kinds)."""
        if self.kind == "sine":
            return max(1.0, abs(self.param), self.param**2)
        if self.kind == "constant":
            return abs(self.param)
        z = np.linspace(lo, hi, n)
        return float(max(np.abs(a).max() for a in self.eval(z)))

    def sup_abs(self) -> float:
        if self.kind in ("sine", "sigmoid"):
            return 1.0
        if self.kind == "constant":
            return abs(self.param)
        z = np.linspace(-50, 50, 20001)
        return float(np.abs(self.eval(z)[0]).max())

    def has_disconnected_zeros(self) -> bool:
        # sine: isolated zeros; sigmoid: z = 0 only; constant: needs c != 0
        if self.kind == "constant":
            return self.param != 0
        return True


def eval_h(profile: DegeneracyProfile, z: float) -> tuple[float, float, float]:
    h, dh, ddh = profile.eval(z)
    return float(h), float(dh), float(ddh)


# ---------------------------------------------------------------------------
# smooth potentials phi0 used inside the couplings


_POTENTIAL_ARITY = {
    "zero": 0,
    "const": 1,
    "linear": 2,
    "quadratic": 3,
    "cosine": 3,
    "gaussian": 4,
}


@dataclass(frozen=True)
class Potential:
    """Analytic potential with value, gradient and Hessian.

    zero; const(c); linear(a1, a2) = a.x; quadratic(a, c1, c2) = a/2 |x-c|^2;
    cosine(a, k1, k2) = a cos(k1 x1) cos(k2 x2);
    gaussian(a, c1, c2, s) = a exp(-|x-c|^2 / (2 s^2)).
    """

    kind: str = "zero"
    params: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in _POTENTIAL_ARITY:
            raise ValueError(f"unknown potential {self.kind!r}")
        if len(self.params) != _POTENTIAL_ARITY[self.kind]:
            raise ValueError(
                f"potential {self.kind!r} takes {_POTENTIAL_ARITY[self.kind]} parameters"
            )
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @classmethod
    def parse(cls, text: str) -> Potential:
        """'quadratic:1,0,0' style strings."""
        name, _, rest = text.strip().partition(":")
        params = tuple(float(v) for v in rest.split(",") if v.strip()) if rest else ()
        return cls(name.strip(), params)

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        return f"{self.kind}:" + ",".join(repr(p) for p in self.params)

    def value(self, x1, x2):
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        k, p = self.kind, self.params
        if k == "zero":
            return np.zeros(np.broadcast(x1, x2).shape)
        if k == "const":
            return np.full(np.broadcast(x1, x2).shape, p[0])
        if k == "linear":
            return p[0] * x1 + p[1] * x2
        if k == "quadratic":
            return 0.5 * p[0] * ((x1 - p[1]) ** 2 + (x2 - p[2]) ** 2)
        if k == "cosine":
            return p[0] * np.cos(p[1] * x1) * np.cos(p[2] * x2)
        a, c1, c2, s = p
        return a * np.exp(-((x1 - c1) ** 2 + (x2 - c2) ** 2) / (2 * s * s))

    def grad(self, x1, x2):
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        shape = np.broadcast(x1, x2).shape
        k, p = self.kind, self.params
        if k in ("zero", "const"):
            return np.zeros(shape), np.zeros(shape)
        if k == "linear":
            return np.full(shape, p[0]), np.full(shape, p[1])
        if k == "quadratic":
            return p[0] * (x1 - p[1]) * np.ones(shape), p[0] * (x2 - p[2]) * np.ones(shape)
        if k == "cosine":
            a, k1, k2 = p
            return (
                -a * k1 * np.sin(k1 * x1) * np.cos(k2 * x2),
                -a * k2 * np.cos(k1 * x1) * np.sin(k2 * x2),
            )
        a, c1, c2, s = p
        v = self.value(x1, x2)
        return -v * (x1 - c1) / s**2, -v * (x2 - c2) / s**2

    def hess(self, x1, x2):
        """(d11, d12, d22)."""
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        shape = np.broadcast(x1, x2).shape
        z = np.zeros(shape)
        k, p = self.kind, self.params
        if k in ("zero", "const", "linear"):
            return z, z.copy(), z.copy()
        if k == "quadratic":
            return z + p[0], z.copy(), z + p[0]
        if k == "cosine":
            a, k1, k2 = p
            c1, s1 = np.cos(k1 * x1), np.sin(k1 * x1)
            c2, s2 = np.cos(k2 * x2), np.sin(k2 * x2)
            return -a * k1 * k1 * c1 * c2, a * k1 * k2 * s1 * s2, -a * k2 * k2 * c1 * c2
        a, c1, c2, s = p
        v = self.value(x1, x2)
        d1, d2 = (x1 - c1) / s**2, (x2 - c2) / s**2
        return v * (d1 * d1 - 1 / s**2), v * d1 * d2, v * (d2 * d2 - 1 / s**2)

    def bounds(self, box: Box, n: int = 201) -> tuple[float, float, float]:
        """Sampled (sup|phi|, sup|D phi|, sup|D^2 phi|) over the box."""
        X1, X2 = np.meshgrid(
            np.linspace(box.x1_min, box.x1_max, n), np.linspace(box.x2_min, box.x2_max, n)
        )
        g1, g2 = self.grad(X1, X2)
        a, b, c = self.hess(X1, X2)
        hmax = np.abs(a) + np.abs(b) + np.abs(c)
        return (
            float(np.abs(self.value(X1, X2)).max()),
            float(np.hypot(g1, g2).max()),
            float(hmax.max()),
        )


# ---------------------------------------------------------------------------
# the C^2 bump used both as mollifier and as initial density profile


def bump(z1, z2, eps: float):
    """Normalised bump 4/(pi eps^2) (1 - |z|^2/eps^2)^3 on |z| < eps."""
    s = (np.asarray(z1) ** 2 + np.asarray(z2) ** 2) / eps**2
    q = np.clip(1.0 - s, 0.0, None)
    return 4.0 / (math.pi * eps**2) * q**3


def bump_derivatives(z1, z2, eps: float):
    """Value, gradient (g1, g2) and Hessian (d11, d12, d22) of the bump."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    K = 4.0 / (math.pi * eps**2)
    e2 = eps * eps
    q = np.clip(1.0 - (z1 * z1 + z2 * z2) / e2, 0.0, None)
    val = K * q**3
    g = -6.0 * K * q**2 / e2
    d11 = g + 24.0 * K * q * z1 * z1 / e2**2
    d22 = g + 24.0 * K * q * z2 * z2 / e2**2
    d12 = 24.0 * K * q * z1 * z2 / e2**2
    return val, (g * z1, g * z2), (d11, d12, d22)


def bump_constants(eps: float) -> dict[str, float]:
    """sup-norms of the bump and its first two derivatives (closed form)."""
    K = 4.0 / (math.pi * eps**2)
    # |D rho| = 6K (1-s)^2 r/eps^2, maximal at r = eps/sqrt(5)
    lip = 6.0 * K * (0.8**2) * (1 / math.sqrt(5)) / eps
    # second derivative sup attained at the centre (|d11| = 6K/eps^2)
    return {"sup": K, "lip": lip, "c2": 6.0 * K / eps**2}


@dataclass(frozen=True)
class Coupling:
    """F(x, m) = phi0(x) + c * (rho_eps * m)(x)."""

    potential: Potential = field(default_factory=Potential)
    strength: float = 0.0
    mollifier_radius: float = 1.0

    def __post_init__(self) -> None:
        if self.strength < 0:
            raise ValueError("coupling strength must be >= 0")
        if self.mollifier_radius <= 0:
            raise ValueError("mollifier radius must be > 0")

    @property
    def decoupled(self) -> bool:
        return self.strength == 0.0

    def density_term(self, m: ParticleCloud | None, x1, x2):
        if m is None or self.decoupled:
            return np.zeros(np.broadcast(np.asarray(x1), np.asarray(x2)).shape)
        x1 = np.asarray(x1, dtype=np.float64)
        x2 = np.asarray(x2, dtype=np.float64)
        shape = np.broadcast(x1, x2).shape
        p1 = np.broadcast_to(x1, shape).ravel()[:, None]
        p2 = np.broadcast_to(x2, shape).ravel()[:, None]
        vals = bump(p1 - m.positions[None, :, 0], p2 - m.positions[None, :, 1], self.mollifier_radius)
        return (vals @ m.weights).reshape(shape)

    def value(self, m: ParticleCloud | None, x1, x2):
        return self.potential.value(x1, x2) + self.strength * self.density_term(m, x1, x2)

    def derivatives(self, m: ParticleCloud | None, x: np.ndarray):
        """Value, gradient (2,), Hessian (3,) at a single point."""
        x = np.asarray(x, dtype=np.float64)
        v = float(self.potential.value(x[0], x[1]))
        g = np.array([float(a) for a in self.potential.grad(x[0], x[1])])
        H = np.array([float(a) for a in self.potential.hess(x[0], x[1])])
        if m is not None and not self.decoupled:
            z1 = x[0] - m.positions[:, 0]
            z2 = x[1] - m.positions[:, 1]
            bv, (b1, b2), (d11, d12, d22) = bump_derivatives(z1, z2, self.mollifier_radius)
            w, c = m.weights, self.strength
            v += c * float(bv @ w)
            g += c * np.array([b1 @ w, b2 @ w])
            H += c * np.array([d11 @ w, d12 @ w, d22 @ w])
        return v, g, H

    def gradient(self, m: ParticleCloud | None, x) -> np.ndarray:
        """Gradient (2,) at a single point; the fast path of ``derivatives``."""
        g1, g2 = self.potential.grad(float(x[0]), float(x[1]))
        g = np.array([float(g1), float(g2)])
        if m is not None and not self.decoupled:
            b1, b2 = bump_grad_sum(float(x[0]), float(x[1]), m.positions, m.weights, self.mollifier_radius)
            g[0] += self.strength * b1
            g[1] += self.strength * b2
        return g

    def on_grid(self, m: ParticleCloud | None, grid: Grid) -> np.ndarray:
        X1, X2 = grid.mesh()
        out = self.potential.value(X1, X2)
        if m is not None and not self.decoupled:
            b = grid.box
            out = out + self.strength * bump_sum_grid(
                m.positions, m.weights, self.mollifier_radius,
                b.x1_min, b.x2_min, grid.h1, grid.h2, grid.n1, grid.n2,
            )
        return out

    def bounds(self, box: Box) -> dict[str, float]:
        """Uniform-in-m bounds on |F|, |DF|, |D^2 F| and the d1-Lipschitz constant."""
        s, l, c2 = self.potential.bounds(box)
        k = bump_constants(self.mollifier_radius)
        c = self.strength
        return {
            "sup": s + c * k["sup"],
            "lip": l + c * k["lip"],
            "c2": c2 + c * 3 * k["c2"],
            "d1_lipschitz": c * k["lip"],
        }


def coupling_eval(F: Coupling, m: ParticleCloud | None, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(F.value(m, x[0], x[1]))


# ---------------------------------------------------------------------------
# initial density


@dataclass(frozen=True)
class InitialDensity:
    """m0(x) = N (1 - |x-c|^2/r^2)^3 on the disk of radius r, N = 4/(pi r^2)."""

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.5

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("m0.radius must be > 0")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def normalization(self) -> float:
        return 4.0 / (math.pi * self.radius**2)

    def __call__(self, x1, x2):
        return bump(np.asarray(x1) - self.center[0], np.asarray(x2) - self.center[1], self.radius)

    def second_moment(self) -> float:
        # E|x-c|^2 = r^2 * B(2,4)/B(1,4) = r^2/5 for the cubic bump
        c = np.asarray(self.center)
        return float(c @ c + self.radius**2 / 5.0)

    def on_grid(self, grid: Grid) -> ScalarField:
        """Nodal density rescaled so that sum(m) h1 h2 = 1."""
        X1, X2 = grid.mesh()
        vals = self(X1, X2)
        vals = vals / (vals.sum() * grid.h1 * grid.h2)
        return ScalarField(grid, vals)


# ---------------------------------------------------------------------------
# the full instance


@dataclass(frozen=True)
class SolverSettings:
    n1: int = 65
    n2: int = 65
    n_steps: int = 40
    n_radial: int = 8
    n_angular: int = 32
    refine_controls: bool = True
    n_particles: int = 400
    seed: int = 0


@dataclass(frozen=True)
class ProblemSpec:
    h: DegeneracyProfile
    F: Coupling
    G: Coupling
    m0: InitialDensity
    T: float
    box: Box
    A_max: float
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self) -> None:
        if self.T <= 0:
            raise ValueError("T must be > 0")
        if self.A_max <= 0:
            raise ValueError("A_max must be > 0")
        if not self.h.has_disconnected_zeros():
            raise ValueError("h: zero set must be totally disconnected (constant 0 given)")
        if not self.box.contains_disk(self.m0.center, self.m0.radius + self.margin):
            raise ValueError(
                "box: support of m0 plus the margin T*A_max*max(1,|h|) = "
                f"{self.margin:.4g} does not fit strictly inside the box"
            )

    @property
    def max_speed(self) -> float:
        return self.A_max * max(1.0, self.h.sup_abs())

    @property
    def margin(self) -> float:
        return self.T * self.max_speed

    @property
    def grid(self) -> Grid:
        return Grid(self.box, self.settings.n1, self.settings.n2)

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.T, self.settings.n_steps)

    def control_bound(self) -> float:
        """A-priori bound on optimal controls, |alpha| <= |p| <= |Dg| + T |Df| + T |h h'| p^2,
        with the last term evaluated at p = |Dg| + T|Df| (first-order estimate)."""
        f = self.F.bounds(self.box)
        g = self.G.bounds(self.box)
        p = g["lip"] + self.T * f["lip"]
        hb = self.h.c2_bound()
        return p + self.T * hb * hb * p * p

    def with_settings(self, **kw) -> ProblemSpec:
        from dataclasses import replace

        return replace(self, settings=replace(self.settings, **kw))

    def replace(self, **kw) -> ProblemSpec:
        from dataclasses import replace

        return replace(self, **kw)


def hamiltonian(spec: ProblemSpec | DegeneracyProfile, x, p) -> float:
    """H(x, p) = (p1^2 + h(x1)^2 p2^2) / 2."""
    prof = spec.h if isinstance(spec, ProblemSpec) else spec
    hx = float(prof(x[0]))
    return 0.5 * (p[0] ** 2 + hx * hx * p[1] ** 2)


def grushin_gradient(u: ScalarField, x, h: DegeneracyProfile) -> np.ndarray:
    """(d_1 u, h(x1) d_2 u) by central differences of the interpolant, step = grid spacing."""
    x = np.asarray(x, dtype=np.float64)
    g = u.grid
    b = g.box
    if not (
        b.x1_min + g.h1 <= x[0] <= b.x1_max - g.h1 and b.x2_min + g.h2 <= x[1] <= b.x2_max - g.h2
    ):
        raise ValueError("stencil out of domain")
    pts = np.array(
        [[x[0] + g.h1, x[1]], [x[0] - g.h1, x[1]], [x[0], x[1] + g.h2], [x[0], x[1] - g.h2]]
    )
    v = interpolate_many(u, pts)
    d1 = (v[0] - v[1]) / (2 * g.h1)
    d2 = (v[2] - v[3]) / (2 * g.h2)
    return np.array([d1, float(h(x[0])) * d2])
