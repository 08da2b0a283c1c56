import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import quiet
from grushin_mfg.domain import Grid, MeasurePath, ParticleCloud
from grushin_mfg.errors import NumericalError
from grushin_mfg.hjb import lipschitz_diagnostic, solve_hjb
from grushin_mfg.model import Coupling, InitialDensity, Potential
from grushin_mfg.scenarios import lqr_flow, resolution
from grushin_mfg.transport import (
    BumpTestFunction,
    ZeroTestFunction,
    aggregate_to_grid,
    control_headroom,
    coupled_displacement,
    d1,
    mass_error,
    moment_report,
    push_forward,
    render_density,
    sample_m0,
    time_lipschitz_check,
    transport_diagnostics,
    weak_residual,
)

ZERO = Coupling(Potential("zero"))


@pytest.fixture(scope="module")
def lqr_run(lqr_small):
    vf = solve_hjb(lqr_small)
    m0 = sample_m0(lqr_small, 200)
    return vf, push_forward(lqr_small, vf, m0)


@pytest.fixture(scope="module")
def sine_run(sine_small):
    vf = solve_hjb(sine_small)
    return vf, push_forward(sine_small, vf, sample_m0(sine_small, 200))


def _cloud(pts, w=None):
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    w = np.full(len(pts), 1.0 / len(pts)) if w is None else np.asarray(w, dtype=float)
    return ParticleCloud(pts, w)


# ---------------------------------------------------------------------------
# sampling m0


def test_single_particle_at_center():
    m0 = InitialDensity((0.3, -0.2), 0.5)
    c = sample_m0(m0, 1)
    np.testing.assert_array_equal(c.positions, [[0.3, -0.2]])
    assert c.weights[0] == 1.0


@given(st.integers(1, 600), st.integers(0, 2**31))
def test_sample_weights_normalised(n, seed):
    c = sample_m0(InitialDensity((0.5, 0.0), 0.6), n, seed)
    assert len(c) >= n
    assert abs(c.weights.sum() - 1.0) <= 1e-12
    assert (c.weights > 0).all()


def test_sample_mean_is_center():
    m0 = InitialDensity((0.5, -1.0), 0.6)
    c = sample_m0(m0, 400)
    np.testing.assert_allclose(c.mean(), [0.5, -1.0], atol=1e-12)


def test_seed_only_permutes():
    m0 = InitialDensity((0.0, 0.0), 1.0)
    a, b = sample_m0(m0, 100, 1), sample_m0(m0, 100, 2)
    ia, ib = np.lexsort(a.positions.T), np.lexsort(b.positions.T)
    np.testing.assert_array_equal(a.positions[ia], b.positions[ib])
    # renormalising after the permutation may move the last bit
    np.testing.assert_allclose(a.weights[ia], b.weights[ib], rtol=1e-14)


def test_sample_needs_a_particle():
    with pytest.raises(ValueError):
        sample_m0(InitialDensity((0.0, 0.0), 1.0), 0)


# ---------------------------------------------------------------------------
# push-forward


def test_zero_feedback_freezes_cloud(lqr_small):
    spec = lqr_small.replace(G=ZERO)
    vf = solve_hjb(spec)
    m0 = sample_m0(spec, 50)
    path = push_forward(spec, vf, m0)
    for c in path.clouds:
        np.testing.assert_array_equal(c.positions, m0.positions)


def test_lqr_flow_close_to_closed_form(lqr_run, lqr_small):
    _, path = lqr_run
    x0 = path.clouds[0].positions
    err = np.abs(path.clouds[-1].positions - lqr_flow(x0, lqr_small.T)).max()
    # the interpolated feedback is first order in h; h = 0.2 here
    assert err < 0.2 * lqr_small.grid.h1


def test_lqr_flow_error_shrinks():
    errs = []
    for n in (26, 51, 101):
        spec = quiet(resolution, "lqr", n).spec
        path = push_forward(spec, solve_hjb(spec), sample_m0(spec, 100))
        x0 = path.clouds[0].positions
        errs.append(np.abs(path.clouds[-1].positions - lqr_flow(x0, spec.T)).max())
    assert errs[2] < errs[1] < errs[0]


@given(st.lists(st.floats(-0.6, 0.6), min_size=2, max_size=6), st.integers(0, 2**31))
def test_degenerate_line_particle_stays(sine_small, ys, seed):
    """h(0) = 0 and a vanishing first feedback component on x1 = 0 freeze
    particles there, whatever the second component does."""
    vf = _SINE_VF.setdefault("vf", solve_hjb(sine_small))
    rng = np.random.default_rng(seed)
    fb = rng.uniform(-2, 2, size=vf.feedback.shape)
    i0 = int(np.argmin(np.abs(vf.grid.x1)))
    assert vf.grid.x1[i0] == 0.0
    fb[:, i0, :, 0] = 0.0
    vf2 = type(vf)(vf.grid, vf.time_grid, vf.u, fb, vf.f, vf.hvals)
    start = _cloud(np.column_stack([np.zeros(len(ys)), ys]))
    path = push_forward(sine_small, vf2, start)
    for c in path.clouds:
        np.testing.assert_array_equal(c.positions, start.positions)


_SINE_VF: dict = {}


def test_mass_is_exact(lqr_run, sine_run):
    for _, path in (lqr_run, sine_run):
        assert mass_error(path) <= 1e-12
        w0 = path.clouds[0].weights
        for c in path.clouds:
            np.testing.assert_array_equal(c.weights, w0)


def test_particles_leaving_box(lqr_small):
    spec = lqr_small.replace(G=ZERO)
    with pytest.raises(NumericalError, match="domain too small"):
        push_forward(spec, solve_hjb(spec), _cloud([[6.0, 0.0]]))


# ---------------------------------------------------------------------------
# weak residual


def test_weak_residual_trivial_cases(lqr_small, lqr_run):
    vf, path = lqr_run
    assert weak_residual(lqr_small, vf, path, ZeroTestFunction()) == 0.0
    free = lqr_small.replace(G=ZERO)
    vf0 = solve_hjb(free)
    p0 = push_forward(free, vf0, sample_m0(free, 50))
    assert weak_residual(free, vf0, p0, BumpTestFunction((0.1, 0.0), 0.8)) == 0.0


def _lqr_weak(n):
    spec = quiet(resolution, "lqr", n).spec
    vf = solve_hjb(spec)
    path = push_forward(spec, vf, sample_m0(spec, 300))
    psi = BumpTestFunction((0.2, -0.1), 0.9, drift=(-0.1, 0.05), growth=0.3)
    return weak_residual(spec, vf, path, psi)


def test_weak_residual_order():
    r = [_lqr_weak(n) for n in (26, 51, 101)]
    orders = np.log2(np.array(r[:-1]) / np.array(r[1:]))
    assert r[2] < r[1] < r[0]
    assert orders.min() >= 0.8


# ---------------------------------------------------------------------------
# d1


def test_d1_examples():
    a = _cloud([[0.0, 0.0], [1.0, 0.0]])
    assert d1(a, a) == 0.0
    assert d1(_cloud([[0.0, 0.0]]), _cloud([[3.0, 4.0]])) == pytest.approx(5.0)
    assert d1(a, _cloud([[0.0, 0.0]])) == pytest.approx(0.5)


def test_d1_against_assignment():
    """Equal uniform weights: W1 is an assignment problem (scipy oracle)."""
    from scipy.optimize import linear_sum_assignment

    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + 0.5
    M = np.linalg.norm(x[:, None] - y[None], axis=2)
    r, c = linear_sum_assignment(M)
    assert d1(_cloud(x), _cloud(y)) == pytest.approx(M[r, c].mean(), abs=1e-9)


def test_d1_translation():
    # translating a measure by v costs exactly |v|
    rng = np.random.default_rng(4)
    x = rng.normal(size=(40, 2))
    w = rng.random(40)
    a = ParticleCloud(x, w / w.sum())
    b = ParticleCloud(x + [0.3, -0.4], a.weights)
    assert d1(a, b) == pytest.approx(0.5, abs=1e-9)


@given(st.integers(0, 10_000))
def test_d1_metric_properties(seed):
    rng = np.random.default_rng(seed)
    clouds = []
    for _ in range(3):
        n = int(rng.integers(1, 12))
        w = rng.random(n) + 0.05
        clouds.append(ParticleCloud(rng.normal(size=(n, 2)), w / w.sum()))
    a, b, c = clouds
    assert d1(a, b) >= 0
    assert d1(a, b) == pytest.approx(d1(b, a), abs=1e-9)
    assert d1(a, c) <= d1(a, b) + d1(b, c) + 1e-9


def test_d1_cap():
    a = _cloud(np.zeros((3000, 2)))
    with pytest.raises(ValueError, match="aggregate"):
        d1(a, a)


def test_coupled_displacement_bounds_d1(lqr_run):
    _, path = lqr_run
    a, b = path.clouds[0], path.clouds[-1]
    assert d1(a, b) <= coupled_displacement(a, b) + 1e-12


# ---------------------------------------------------------------------------
# aggregation and rendering


def test_aggregate_identity_on_centers():
    grid = Grid(_box(), 11, 11)
    c = _cloud([[0.1, 0.1], [-0.3, 0.5]])
    agg = aggregate_to_grid(c, grid)
    order = np.lexsort(agg.positions.T)
    np.testing.assert_allclose(agg.positions[order], c.positions[np.lexsort(c.positions.T)])


def _box():
    from grushin_mfg.domain import Box

    return Box(-1.0, 1.0, -1.0, 1.0)


@given(st.integers(0, 10_000))
def test_aggregate_conserves_mass_and_moves_little(seed):
    rng = np.random.default_rng(seed)
    grid = Grid(_box(), 9, 13)
    n = int(rng.integers(1, 200))
    w = rng.random(n) + 0.01
    c = ParticleCloud(rng.uniform(-1, 1, size=(n, 2)), w / w.sum())
    agg = aggregate_to_grid(c, grid)
    assert agg.weights.sum() == pytest.approx(c.weights.sum(), abs=1e-14)
    assert d1(c, agg) <= 0.5 * np.hypot(grid.h1, grid.h2) + 1e-12


def test_render_single_particle():
    grid = Grid(_box(), 81, 81)
    f = render_density(_cloud([[0.1, -0.2]]), grid, 0.4)
    assert (f.values >= 0).all()
    mass = f.values.sum() * grid.h1 * grid.h2
    assert mass == pytest.approx(1.0, abs=1e-3)
    i, j = np.unravel_index(np.argmax(f.values), f.values.shape)
    assert (grid.x1[i], grid.x2[j]) == pytest.approx((0.1, -0.2), abs=1e-12)


def test_render_rejects_bad_bandwidth():
    with pytest.raises(ValueError):
        render_density(_cloud([[0.0, 0.0]]), Grid(_box(), 5, 5), 0.0)


def test_benchmark_density_bound_stable():
    """sup_t of the rendered push-forward density, recorded at two resolutions."""
    sups = []
    for n, steps in ((43, 20), (85, 40)):
        spec = quiet(resolution, "decoupled", n, steps).spec
        vf = solve_hjb(spec)
        path = push_forward(spec, vf, sample_m0(spec, 400))
        sups.append(max(render_density(c, spec.grid, 0.4).values.max() for c in path.clouds))
    assert sups[1] == pytest.approx(sups[0], rel=0.1)


# ---------------------------------------------------------------------------
# path diagnostics


@pytest.mark.parametrize("which", ["lqr", "sine"])
def test_time_lipschitz(which, lqr_small, sine_small, lqr_run, sine_run):
    spec = lqr_small if which == "lqr" else sine_small
    vf, path = lqr_run if which == "lqr" else sine_run
    L_space, _ = lipschitz_diagnostic(vf)
    rep = time_lipschitz_check(path, L_space, spec.h.sup_abs())
    assert rep.holds
    assert rep.worst_exact_ratio <= rep.worst_ratio + 1e-12 or rep.worst_exact_ratio <= 1.05


def test_sharper_velocity_bound(sine_small, sine_run):
    """Per-component velocity bound: every particle speed <= max(|alpha1|, |h alpha2|) <= headroom."""
    vf, path = sine_run
    head = control_headroom(sine_small, vf, path)
    assert head >= 2.0
    X = np.stack([c.positions for c in path.clouds])
    speed = np.abs(np.diff(X, axis=0)).max() / path.time_grid.dt
    assert speed <= sine_small.A_max / head * max(1.0, sine_small.h.sup_abs()) * 1.05


def test_moment_bound_stable():
    Ks = []
    for n, steps in ((43, 20), (85, 40)):
        spec = quiet(resolution, "sine", n, steps).spec
        path = push_forward(spec, solve_hjb(spec), sample_m0(spec, 200))
        Ks.append(moment_report(path)["K"])
    assert Ks[1] == pytest.approx(Ks[0], rel=0.05)


def test_diagnostics_rows(sine_run):
    _, path = sine_run
    rows = transport_diagnostics(path)
    assert [r["k"] for r in rows] == list(range(len(path.clouds)))
    assert rows[0]["d1_to_prev"] == 0.0
    assert all(abs(r["mass"] - 1) <= 1e-12 for r in rows)


def test_measure_path_needs_every_slice(lqr_run):
    _, path = lqr_run
    with pytest.raises(ValueError):
        MeasurePath(path.time_grid, path.clouds[:-1])
