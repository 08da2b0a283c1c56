"""Grids, fields, particle measures and trajectories shared by every solver."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from grushin_mfg._kernels import bilinear_many

FloatArray = NDArray[np.float64]

MASS_TOL = 1e-12


@dataclass(frozen=True)
class Box:
    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float

    def __post_init__(self) -> None:
        if not (self.x1_min < self.x1_max and self.x2_min < self.x2_max):
            raise ValueError("box bounds must satisfy min < max on both axes")

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.x1_max - self.x1_min, self.x2_max - self.x2_min))

    def contains(self, pts: FloatArray, margin: float = 0.0) -> NDArray[np.bool_]:
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] > self.x1_min + margin)
            & (pts[:, 0] < self.x1_max - margin)
            & (pts[:, 1] > self.x2_min + margin)
            & (pts[:, 1] < self.x2_max - margin)
        )

    def contains_disk(self, center, radius: float) -> bool:
        """True when the closed disk lies strictly inside the box."""
        c1, c2 = center
        return (
            c1 - radius > self.x1_min
            and c1 + radius < self.x1_max
            and c2 - radius > self.x2_min
            and c2 + radius < self.x2_max
        )


@dataclass(frozen=True)
class Grid:
    box: Box
    n1: int
    n2: int

    def __post_init__(self) -> None:
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("grid needs at least 2 nodes per axis")

    @property
    def h1(self) -> float:
        return (self.box.x1_max - self.box.x1_min) / (self.n1 - 1)

    @property
    def h2(self) -> float:
        return (self.box.x2_max - self.box.x2_min) / (self.n2 - 1)

    @property
    def x1(self) -> FloatArray:
        return np.linspace(self.box.x1_min, self.box.x1_max, self.n1)

    @property
    def x2(self) -> FloatArray:
        return np.linspace(self.box.x2_min, self.box.x2_max, self.n2)

    def mesh(self) -> tuple[FloatArray, FloatArray]:
        """Node coordinates with shape (n1, n2); index [i, j] is node (i, j)."""
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def nodes(self) -> FloatArray:
        """All nodes as an (n1*n2, 2) array in row-major (i outer, j inner) order."""
        X1, X2 = self.mesh()
        return np.column_stack([X1.ravel(), X2.ravel()])

    def refine(self) -> Grid:
        """Halve both spacings (2n-1 nodes per axis)."""
        return Grid(self.box, 2 * self.n1 - 1, 2 * self.n2 - 1)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self) -> None:
        if not self.t0 < self.T:
            raise ValueError("time grid needs t0 < T")
        if self.n_steps < 1:
            raise ValueError("time grid needs at least one step")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self) -> FloatArray:
        return np.linspace(self.t0, self.T, self.n_steps + 1)

    def locate(self, s: float) -> tuple[int, float]:
        """Slice index k and weight lam with s = (1-lam) t_k + lam t_{k+1}."""
        r = (s - self.t0) / self.dt
        k = int(np.clip(np.floor(r), 0, self.n_steps - 1))
        lam = float(np.clip(r - k, 0.0, 1.0))
        return k, lam


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: FloatArray  # shape (n1, n2)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.grid.n1, self.grid.n2):
            raise ValueError(f"values shape {vals.shape} does not match grid")
        if not np.isfinite(vals).all():
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> ScalarField:
        X1, X2 = grid.mesh()
        return cls(grid, np.asarray(fn(X1, X2), dtype=np.float64) * np.ones_like(X1))

    def __call__(self, pts) -> FloatArray:
        return interpolate_many(self, pts)

    def to_csv(self, path: str | Path) -> None:
        data = np.column_stack([self.grid.nodes(), self.values.ravel()])
        np.savetxt(path, data, fmt="%.17g", delimiter=",", header="x1,x2,value", comments="")


def interpolate(fld: ScalarField, pt) -> float:
    """Bilinear interpolation; constant extension from the nearest boundary node."""
    p = np.asarray(pt, dtype=np.float64)
    if p.shape != (2,) or not np.isfinite(p).all():
        raise ValueError("invalid point")
    return float(interpolate_many(fld, p[None, :])[0])


def interpolate_many(fld: ScalarField, pts) -> FloatArray:
    p = np.ascontiguousarray(np.atleast_2d(np.asarray(pts, dtype=np.float64)))
    if not np.isfinite(p).all():
        raise ValueError("invalid point")
    g = fld.grid
    return bilinear_many(
        fld.values, g.box.x1_min, g.box.x2_min, g.h1, g.h2, p[:, 0].copy(), p[:, 1].copy()
    )


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    positions: FloatArray  # (N, 2)
    weights: FloatArray  # (N,)

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if len(pos) == 0 or len(pos) != len(w):
            raise ValueError("cloud needs matching, non-empty positions and weights")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def mean(self) -> FloatArray:
        return self.weights @ self.positions

    def moved(self, positions: FloatArray) -> ParticleCloud:
        """Same weights, new positions."""
        return ParticleCloud(positions, self.weights)

    def to_csv(self, path: str | Path) -> None:
        data = np.column_stack([self.positions, self.weights])
        np.savetxt(path, data, fmt="%.17g", delimiter=",", header="x1,x2,weight", comments="")

    @classmethod
    def from_csv(cls, path: str | Path) -> ParticleCloud:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :2], data[:, 2])


def cloud_moment2(m: ParticleCloud) -> float:
    """Second moment sum_i w_i |x_i|^2."""
    return float(m.weights @ np.einsum("ij,ij->i", m.positions, m.positions))


@dataclass(eq=False)
class Trajectory:
    times: FloatArray
    x: FloatArray  # (K, 2)
    alpha: FloatArray  # (K, 2)
    p: FloatArray | None = None  # (K, 2)
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, 2)
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1, 2)
        if self.p is not None:
            self.p = np.asarray(self.p, dtype=np.float64).reshape(-1, 2)
        n = len(self.times)
        if n < 2 or len(self.x) != n or len(self.alpha) != n:
            raise ValueError("trajectory arrays must share a length >= 2")
        if (np.diff(self.times) <= 0).any():
            raise ValueError("trajectory times must be increasing")

    @property
    def t(self) -> float:
        return float(self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def state_at(self, s: float) -> FloatArray:
        """Piecewise-linear reading of x at time s."""
        return np.array([np.interp(s, self.times, self.x[:, 0]), np.interp(s, self.times, self.x[:, 1])])

    def restrict(self, a: float, b: float | None = None) -> Trajectory:
        """Samples with a <= s <= b (endpoints must be sample times)."""
        b = self.T if b is None else b
        tol = 1e-9 * max(1.0, abs(self.T))
        sel = (self.times >= a - tol) & (self.times <= b + tol)
        return Trajectory(
            self.times[sel],
            self.x[sel],
            self.alpha[sel],
            None if self.p is None else self.p[sel],
            dict(self.meta),
        )

    def dynamics_residual(self, h_fn) -> float:
        """Max of |x1' - a1| and |x2' - h(x1) a2| using fourth-order differences."""
        dx = derivative_fd4(self.times, self.x)
        r1 = np.abs(dx[:, 0] - self.alpha[:, 0])
        r2 = np.abs(dx[:, 1] - h_fn(self.x[:, 0]) * self.alpha[:, 1])
        return float(max(r1.max(), r2.max()))

    def to_csv(self, path: str | Path) -> None:
        p = self.p if self.p is not None else np.full_like(self.x, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x1", "x2", "alpha1", "alpha2", "p1", "p2"])
            for k in range(len(self.times)):
                w.writerow(
                    [repr(float(v)) for v in (self.times[k], *self.x[k], *self.alpha[k], *p[k])]
                )


def derivative_fd4(times: FloatArray, y: FloatArray) -> FloatArray:
    """Fourth-order finite-difference derivative on a uniform sample.

    Five-point central stencil inside, one-sided five-point stencils at the two
    ends of the sample. Falls back to numpy.gradient for fewer than 5 samples.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(times)
    if n < 5:
        return np.gradient(y, times, axis=0, edge_order=min(2, n - 1))
    dt = (times[-1] - times[0]) / (n - 1)
    d = np.empty_like(y)
    d[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * dt)
    fwd = np.array([-25, 48, -36, 16, -3]) / (12 * dt)
    mid = np.array([-3, -10, 18, -6, 1]) / (12 * dt)
    d[0] = np.tensordot(fwd, y[:5], axes=1)
    d[1] = np.tensordot(mid, y[:5], axes=1)
    d[-1] = -np.tensordot(fwd, y[::-1][:5], axes=1)
    d[-2] = -np.tensordot(mid, y[::-1][:5], axes=1)
    return d


@dataclass(eq=False)
class MeasurePath:
    """m(t_k) as one particle cloud per time slice."""

    time_grid: TimeGrid
    clouds: list[ParticleCloud]
    grid_densities: list[ScalarField] | None = None

    def __post_init__(self) -> None:
        if len(self.clouds) != self.time_grid.n_steps + 1:
            raise ValueError("need one cloud per time slice")

    @classmethod
    def constant(cls, time_grid: TimeGrid, cloud: ParticleCloud) -> MeasurePath:
        return cls(time_grid, [cloud] * (time_grid.n_steps + 1))

    def at(self, s: float) -> tuple[ParticleCloud, ParticleCloud, float]:
        k, lam = self.time_grid.locate(s)
        return self.clouds[k], self.clouds[k + 1], lam

    def probe_indices(self, n: int = 5) -> list[int]:
        """Slice indices closest to n equispaced times (0, T/4, ..., T for n = 5)."""
        N = self.time_grid.n_steps
        return sorted({int(round(q * N)) for q in np.linspace(0, 1, n)})
