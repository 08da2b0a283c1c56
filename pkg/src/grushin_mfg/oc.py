"""Trajectory-level optimal control: dynamics, cost, Pontryagin shooting and the
checks built on them (necessary conditions, DPP, concatenation, rest time,
uniqueness after the rest time)."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from grushin_mfg.domain import MeasurePath, Trajectory, derivative_fd4
from grushin_mfg.errors import NumericalError
from grushin_mfg.model import DegeneracyProfile, ProblemSpec, grushin_gradient

SHOOT_TOL = 1e-8
COST_TOL = 1e-4
MAX_SAMPLE_STEP = 5e-3


# ---------------------------------------------------------------------------
# running and terminal cost along a measure path


@dataclass(eq=False)
class CostData:
    """f(x, s) = F(x, m(s)) with m linear in time between slices, g(x) = G(x, m(T))."""

    spec: ProblemSpec
    m_path: MeasurePath | None = None

    def _weights(self, s: float):
        if self.m_path is None:
            return [(None, 1.0)]
        a, b, lam = self.m_path.at(s)
        if lam == 0.0 or a is b:
            return [(a, 1.0)]
        return [(a, 1.0 - lam), (b, lam)]

    def f(self, x, s: float) -> float:
        x = np.asarray(x, dtype=np.float64)
        return sum(w * float(self.spec.F.value(m, x[0], x[1])) for m, w in self._weights(s))

    def f_many(self, pts: np.ndarray, s: float) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return sum(w * self.spec.F.value(m, pts[:, 0], pts[:, 1]) for m, w in self._weights(s))

    def f_grad(self, x, s: float) -> np.ndarray:
        g = np.zeros(2)
        for m, w in self._weights(s):
            g += w * self.spec.F.gradient(m, x)
        return g

    @property
    def terminal_measure(self):
        return None if self.m_path is None else self.m_path.clouds[-1]

    def g(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(self.spec.G.value(self.terminal_measure, x[0], x[1]))

    def g_grad(self, x) -> np.ndarray:
        return self.spec.G.derivatives(self.terminal_measure, np.asarray(x, dtype=np.float64))[1]


def trajectory_times(spec: ProblemSpec, t: float, m_path: MeasurePath | None = None) -> np.ndarray:
    """Sample times on [t, T]: the HJB step split into equal sub-steps of at
    most MAX_SAMPLE_STEP, so that HJB nodes after t stay sample times."""
    tg = m_path.time_grid if m_path is not None else spec.time_grid
    if not 0.0 <= t < spec.T:
        raise ValueError(f"start time {t} outside [0, T)")
    sub = max(1, math.ceil(tg.dt / MAX_SAMPLE_STEP - 1e-9))
    n = max(1, int(round((spec.T - t) / tg.dt))) * sub
    return np.linspace(t, spec.T, n + 1)


# ---------------------------------------------------------------------------
# dynamics and cost


def _rk4(rhs, y0: np.ndarray, times: np.ndarray, blowup: float = np.inf) -> np.ndarray:
    ys = np.empty((len(times), len(y0)))
    ys[0] = y0
    y = np.array(y0, dtype=np.float64)
    for k in range(len(times) - 1):
        s, dt = times[k], times[k + 1] - times[k]
        k1 = rhs(s, y)
        k2 = rhs(s + dt / 2, y + dt / 2 * k1)
        k3 = rhs(s + dt / 2, y + dt / 2 * k2)
        k4 = rhs(s + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(y).all() or np.abs(y).max() > blowup:
            raise NumericalError("shooting diverged")
        ys[k + 1] = y
    return ys


def simulate_dynamics(spec: ProblemSpec, x0, t: float, alpha, times=None) -> Trajectory:
    """Integrate x1' = a1, x2' = h(x1) a2 from (x0, t) to T with classical RK4.

    ``alpha`` is a callable s -> (2,) or an array of samples on ``times``
    (read piecewise-linearly at the RK4 midpoints).
    """
    times = trajectory_times(spec, t) if times is None else np.asarray(times, dtype=np.float64)
    if callable(alpha):
        a_fn = alpha
        a_samples = np.array([a_fn(s) for s in times], dtype=np.float64)
    else:
        a_samples = np.asarray(alpha, dtype=np.float64).reshape(-1, 2)
        if len(a_samples) != len(times):
            raise ValueError("alpha must be sampled on the trajectory times")

        def a_fn(s):
            return np.array(
                [np.interp(s, times, a_samples[:, 0]), np.interp(s, times, a_samples[:, 1])]
            )

    h = spec.h

    def rhs(s, y):
        a = a_fn(s)
        return np.array([a[0], float(h(y[0])) * a[1]])

    xs = _rk4(rhs, np.asarray(x0, dtype=np.float64), times)
    return Trajectory(times, xs, a_samples)


def running_cost(spec: ProblemSpec, m_path: MeasurePath | None, traj: Trajectory) -> float:
    """Trapezoidal integral of |a|^2/2 + f(x(s), s) over the trajectory."""
    cd = CostData(spec, m_path)
    vals = np.array(
        [0.5 * traj.alpha[k] @ traj.alpha[k] + cd.f(traj.x[k], s) for k, s in enumerate(traj.times)]
    )
    return float(np.trapezoid(vals, traj.times))


def cost(spec: ProblemSpec, m_path: MeasurePath | None, traj: Trajectory) -> float:
    """J_t(x, alpha) = running cost + g(x(T))."""
    return running_cost(spec, m_path, traj) + CostData(spec, m_path).g(traj.x[-1])


# ---------------------------------------------------------------------------
# Pontryagin system and shooting


@dataclass
class PontryaginState:
    s: float
    y: np.ndarray  # (x1, x2, p1, p2)


def pontryagin_rhs(spec: ProblemSpec, m_path: MeasurePath | None, state: PontryaginState,
                   _cost: CostData | None = None) -> np.ndarray:
    """(p1, h^2 p2, -p2^2 h' h + f_x1, f_x2) with analytic f derivatives."""
    cd = _cost or CostData(spec, m_path)
    x1, x2, p1, p2 = state.y
    hv, dh, _ = spec.h.eval(x1)
    hv, dh = float(hv), float(dh)
    fx = cd.f_grad(np.array([x1, x2]), state.s)
    return np.array([p1, hv * hv * p2, -p2 * p2 * dh * hv + fx[0], fx[1]])


@dataclass(eq=False)
class ShootingResult:
    trajectory: Trajectory
    residual: float
    newton_iters: int
    converged: bool
    p0: np.ndarray = field(default_factory=lambda: np.zeros(2))


class _Shooter:
    def __init__(self, spec, m_path, x0, times):
        self.spec = spec
        self.cd = CostData(spec, m_path)
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.times = times
        self.blowup = 1e3 * (spec.box.diameter + spec.control_bound() + 1.0)

    def rhs(self, s, y):
        return pontryagin_rhs(self.spec, None, PontryaginState(s, y), self.cd)

    def integrate(self, p0):
        return _rk4(self.rhs, np.concatenate([self.x0, p0]), self.times, self.blowup)

    def residual(self, p0):
        ys = self.integrate(p0)
        return ys[-1, 2:] + self.cd.g_grad(ys[-1, :2]), ys


def shoot(
    spec: ProblemSpec,
    m_path: MeasurePath | None,
    x0,
    t: float,
    p0_guess=None,
    *,
    tol: float = SHOOT_TOL,
    max_iters: int = 50,
    fd_step: float = 1e-7,
) -> ShootingResult:
    """Newton on S(p0) = p(T) + Dg(x(T)) with a finite-difference Jacobian and
    backtracking on |S|."""
    times = trajectory_times(spec, t, m_path)
    sh = _Shooter(spec, m_path, x0, times)
    p = np.zeros(2) if p0_guess is None else np.asarray(p0_guess, dtype=np.float64).copy()
    S, ys = sh.residual(p)
    res = float(np.linalg.norm(S))
    it = 0
    while res >= tol and it < max_iters:
        it += 1
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            step = fd_step * max(1.0, abs(p[j]))
            e[j] = step
            J[:, j] = (sh.residual(p + e)[0] - S) / step
        try:
            dp = np.linalg.solve(J, -S)
        except np.linalg.LinAlgError:
            dp = -np.linalg.lstsq(J, S, rcond=None)[0]
        lam = 1.0
        while lam > 1e-4:
            try:
                S_new, ys_new = sh.residual(p + lam * dp)
            except NumericalError:
                lam /= 2
                continue
            r_new = float(np.linalg.norm(S_new))
            if r_new < res:
                break
            lam /= 2
        else:
            break  # stagnation
        p, S, ys, res = p + lam * dp, S_new, ys_new, r_new
    x, pp = ys[:, :2], ys[:, 2:]
    hv = spec.h(x[:, 0])
    alpha = np.column_stack([pp[:, 0], pp[:, 1] * hv])
    traj = Trajectory(times, x, alpha, pp, {"x0": sh.x0.tolist(), "t": float(t)})
    return ShootingResult(traj, res, it, res < tol, p)


def initial_guess(spec: ProblemSpec, vf, x0, t: float, m_path: MeasurePath | None = None):
    """p0 from the value function, p = -(u_x1, u_x2). On the degenerate set the
    second component is read off the rest trajectory: p2 = -g_x2 - int f_x2."""
    x0 = np.asarray(x0, dtype=np.float64)
    k, _ = vf.time_grid.locate(t)
    try:
        g = grushin_gradient(vf.slice(k), x0, DegeneracyProfile("constant", 1.0))
    except ValueError:
        g = np.zeros(2)
    hv = float(spec.h(x0[0]))
    p = -g
    if abs(hv) < 1e-8:
        cd = CostData(spec, m_path)
        times = trajectory_times(spec, t, m_path)
        fx2 = [cd.f_grad(x0, s)[1] for s in times]
        p[1] = -cd.g_grad(x0)[1] - float(np.trapezoid(fx2, times))
    return p


def shoot_multistart(
    spec: ProblemSpec,
    m_path: MeasurePath | None,
    x0,
    t: float,
    guesses,
    *,
    tol: float = SHOOT_TOL,
) -> ShootingResult:
    """Shoot from every guess and keep the converged run of least cost (or the
    smallest residual when nothing converges)."""
    best, best_key = None, None
    for g in guesses:
        try:
            r = shoot(spec, m_path, x0, t, g, tol=tol)
        except NumericalError:
            continue
        key = (0, cost(spec, m_path, r.trajectory)) if r.converged else (1, r.residual)
        if best is None or key < best_key:
            best, best_key = r, key
    if best is None:
        raise NumericalError("shooting diverged")
    return best


def default_guesses(spec, x0, t, vf=None, m_path=None, n_random: int = 6, seed: int = 0):
    guesses = []
    if vf is not None:
        guesses.append(initial_guess(spec, vf, x0, t, m_path))
    guesses.append(-CostData(spec, m_path).g_grad(x0))
    guesses.append(np.zeros(2))
    rng = np.random.default_rng(seed)
    scale = max(1.0, float(np.abs(guesses[0]).max()))
    for _ in range(n_random):
        guesses.append(guesses[0] + scale * rng.normal(size=2))
    return guesses


# ---------------------------------------------------------------------------
# verification of the necessary conditions


def _control_sample(radius: float, n_radial: int = 16, n_angular: int = 64) -> np.ndarray:
    r = np.linspace(0.0, radius, n_radial + 1)[1:]
    th = np.linspace(0, 2 * np.pi, n_angular, endpoint=False)
    pts = (r[:, None, None] * np.stack([np.cos(th), np.sin(th)], -1)[None]).reshape(-1, 2)
    return np.vstack([np.zeros((1, 2)), pts])


def necessary_conditions_residual(
    spec: ProblemSpec, m_path: MeasurePath | None, traj: Trajectory, control_radius: float | None = None
) -> dict[str, float]:
    """Adjoint/state ODE residual, feedback formula residual, maximality gap and
    transversality residual of a trajectory carrying a costate."""
    if traj.p is None:
        raise ValueError("trajectory has no costate")
    cd = CostData(spec, m_path)
    x, p, a, s = traj.x, traj.p, traj.alpha, traj.times
    y = np.hstack([x, p])
    dy = derivative_fd4(s, y)
    rhs = np.array([pontryagin_rhs(spec, None, PontryaginState(s[k], y[k]), cd) for k in range(len(s))])
    ode = float(np.abs(dy - rhs).max())

    hv = spec.h(x[:, 0])
    feedback = float(max(np.abs(a[:, 0] - p[:, 0]).max(), np.abs(a[:, 1] - p[:, 1] * hv).max()))

    # maximality: sup_b [p.b(x,b) - |b|^2/2] - [p.b(x,a) - |a|^2/2] over a control sample
    radius = control_radius or max(spec.A_max, 2 * float(np.abs(a).max()) + 1.0)
    sample = _control_sample(radius)
    q1, q2 = p[:, 0], p[:, 1] * hv  # p.b(x, b) = q . b
    best = (q1[:, None] * sample[None, :, 0] + q2[:, None] * sample[None, :, 1]
            - 0.5 * (sample**2).sum(1)[None, :]).max(1)
    best = np.maximum(best, 0.5 * (q1**2 + q2**2))  # the analytic maximiser belongs to the sample
    actual = q1 * a[:, 0] + q2 * a[:, 1] - 0.5 * (a**2).sum(1)
    maximality = float((best - actual).max())

    transversality = float(np.linalg.norm(p[-1] + cd.g_grad(x[-1])))
    return {
        "ode": ode,
        "feedback": feedback,
        "maximality": maximality,
        "transversality": transversality,
        "dynamics": traj.dynamics_residual(spec.h),
    }


def dpp_check(spec: ProblemSpec, m_path: MeasurePath | None, vf, traj: Trajectory, r: float) -> float:
    """|u(x, t) - u(x*(r), r) - int_t^r (|a|^2/2 + f) ds| with interpolated u."""
    if not traj.t - 1e-12 <= r <= traj.T + 1e-12:
        raise ValueError("r outside the trajectory interval")
    u_t = vf.value_at(traj.x[0], traj.t)
    if r <= traj.t + 1e-12:
        return abs(u_t - vf.value_at(traj.x[0], traj.t))
    part = traj.restrict(traj.t, r)
    if abs(part.T - r) > 1e-9 * max(1.0, spec.T):
        raise ValueError("r must be one of the trajectory sample times")
    run = running_cost(spec, m_path, part)
    return abs(u_t - vf.value_at(part.x[-1], r) - run)


def concatenate(traj1: Trajectory, traj2: Trajectory, tol: float = 1e-8) -> Trajectory:
    """Glue traj1 on [t, r] and traj2 on [r, T]; the control at r is traj2's."""
    if abs(traj1.T - traj2.t) > 1e-12 * max(1.0, abs(traj2.t)) or np.abs(
        traj1.x[-1] - traj2.x[0]
    ).max() > tol:
        raise ValueError("non-matching concatenation")
    times = np.concatenate([traj1.times[:-1], traj2.times])
    x = np.vstack([traj1.x[:-1], traj2.x])
    alpha = np.vstack([traj1.alpha[:-1], traj2.alpha])
    p = None
    if traj1.p is not None and traj2.p is not None:
        p = np.vstack([traj1.p[:-1], traj2.p])
    return Trajectory(times, x, alpha, p, {**traj1.meta, "glued_at": traj2.t})


def rest_time(traj: Trajectory, tol: float) -> float:
    """Largest sample time r with max_{s <= r} |x(s) - x(t)| <= tol."""
    disp = np.linalg.norm(traj.x - traj.x[0], axis=1)
    bad = np.nonzero(disp > tol)[0]
    if len(bad) == 0:
        return traj.T
    return float(traj.times[bad[0] - 1])


def rest_time_report(traj: Trajectory, h, tol: float, tol_h: float | None = None) -> dict:
    """Both rest detectors: the trajectory stays put, and h(x1) stays at zero."""
    tol_h = tol if tol_h is None else tol_h
    r = rest_time(traj, tol)
    hv = np.abs(h(traj.x[:, 0]))
    over = np.nonzero(hv > tol_h)[0]
    r_h = traj.T if len(over) == 0 else float(traj.times[max(over[0] - 1, 0)])
    if len(over) and over[0] == 0:
        r_h = traj.t
    dt = float(np.diff(traj.times).max())
    # detectors agree when both report no rest, or both report rest up to one step
    agree = abs(r - r_h) <= dt + 1e-12 or (r == traj.t and r_h == traj.t)
    return {"rest_time": r, "stationary_time": r_h, "agree": bool(agree)}


# ---------------------------------------------------------------------------
# uniqueness after the rest time


@dataclass
class BifurcationReport:
    distance: float
    n_converged: int
    n_selected: int
    inconclusive: bool
    costs: list[float]


def bifurcation_probe(
    spec: ProblemSpec,
    m_path: MeasurePath | None,
    x0,
    t: float,
    r: float,
    n_restarts: int = 8,
    *,
    vf=None,
    seed: int = 0,
    tol: float = SHOOT_TOL,
    cost_tol: float = COST_TOL,
) -> BifurcationReport:
    """Restart the control problem at (x*(r), r) from n_restarts Newton
    initialisations and measure how far apart the optimal ones end up."""
    base = shoot_multistart(spec, m_path, x0, t, default_guesses(spec, x0, t, vf, m_path, seed=seed), tol=tol)
    times = base.trajectory.times
    kr = int(np.argmin(np.abs(times - r)))
    xr, rr = base.trajectory.x[kr], float(times[kr])
    centre = base.trajectory.p[kr]
    rng = np.random.default_rng(seed)
    scale = max(0.5, float(np.abs(centre).max()))
    guesses = [centre] + [centre + scale * rng.normal(size=2) for _ in range(n_restarts - 1)]
    runs = []
    for g in guesses:
        try:
            res = shoot(spec, m_path, xr, rr, g, tol=tol)
        except NumericalError:
            continue
        if res.converged:
            runs.append((cost(spec, m_path, res.trajectory), res.trajectory))
    if len(runs) < 2:
        return BifurcationReport(float("nan"), len(runs), len(runs), True, [c for c, _ in runs])
    cmin = min(c for c, _ in runs)
    sel = [tr for c, tr in runs if c <= cmin + cost_tol]
    dist = 0.0
    for a, b in itertools.combinations(sel, 2):
        dist = max(dist, float(np.abs(a.x - b.x).max()))
    return BifurcationReport(dist, len(runs), len(sel), len(sel) < 2, [c for c, _ in runs])
