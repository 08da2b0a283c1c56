import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grushin_mfg.domain import (
    Box,
    Grid,
    MeasurePath,
    ParticleCloud,
    ScalarField,
    TimeGrid,
    Trajectory,
    cloud_moment2,
    derivative_fd4,
    interpolate,
)

BOX = Box(-1.0, 2.0, -0.5, 1.5)
GRID = Grid(BOX, 7, 5)

coord = st.floats(-10, 10, allow_nan=False)


def test_box_rejects_empty_interval():
    with pytest.raises(ValueError):
        Box(1.0, 1.0, 0.0, 1.0)


def test_grid_spacing_and_row_major_nodes():
    assert GRID.h1 == pytest.approx(0.5)
    assert GRID.h2 == pytest.approx(0.5)
    nodes = GRID.nodes()
    assert nodes.shape == (35, 2)
    # j runs fastest
    np.testing.assert_allclose(nodes[1], [-1.0, 0.0])
    np.testing.assert_allclose(nodes[5], [-0.5, -0.5])


def test_time_grid():
    tg = TimeGrid(0.0, 1.0, 4)
    assert tg.dt == 0.25
    np.testing.assert_allclose(tg.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert tg.locate(0.6) == (2, pytest.approx(0.4))
    assert tg.locate(1.0) == (3, 1.0)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 3)


def test_interpolate_constant_field():
    fld = ScalarField(GRID, np.full((7, 5), 7.0))
    assert interpolate(fld, [0.5, 0.5]) == 7.0


def test_interpolate_exact_at_nodes():
    fld = ScalarField.from_function(GRID, lambda a, b: a)
    for x in GRID.nodes():
        assert interpolate(fld, x) == pytest.approx(x[0], abs=1e-15)


def test_interpolate_product_on_single_cell():
    g = Grid(Box(0.0, 1.0, 0.0, 2.0), 2, 2)
    fld = ScalarField.from_function(g, lambda a, b: a * b)
    assert interpolate(fld, [0.5, 1.0]) == pytest.approx(0.5)


def test_interpolate_invalid_point():
    fld = ScalarField.from_function(GRID, lambda a, b: a)
    with pytest.raises(ValueError, match="invalid point"):
        interpolate(fld, [np.nan, 0.0])


@given(a=coord, b=coord, c=coord, d=coord, s=st.floats(0, 1), t=st.floats(0, 1))
def test_bilinear_functions_reproduced(a, b, c, d, s, t):
    fld = ScalarField.from_function(GRID, lambda x1, x2: a + b * x1 + c * x2 + d * x1 * x2)
    p = np.array([BOX.x1_min + s * 3.0, BOX.x2_min + t * 2.0])
    exact = a + b * p[0] + c * p[1] + d * p[0] * p[1]
    assert interpolate(fld, p) == pytest.approx(exact, abs=1e-9 * (1 + abs(a) + abs(b) + abs(c) + abs(d)))


@given(x1=coord, x2=coord)
def test_constant_extension_outside_box(x1, x2):
    fld = ScalarField.from_function(GRID, lambda a, b: a + 2 * b)
    clipped = [min(max(x1, BOX.x1_min), BOX.x1_max), min(max(x2, BOX.x2_min), BOX.x2_max)]
    assert interpolate(fld, [x1, x2]) == pytest.approx(interpolate(fld, clipped), abs=1e-12)


def test_field_rejects_nonfinite():
    with pytest.raises(ValueError):
        ScalarField(GRID, np.full((7, 5), np.inf))


def test_field_csv_header_and_order(tmp_path):
    fld = ScalarField.from_function(GRID, lambda a, b: 10 * a + b)
    fld.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,value"
    data = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, :2], GRID.nodes())
    np.testing.assert_allclose(data[:, 2], fld.values.ravel())


def test_cloud_validation():
    with pytest.raises(ValueError):
        ParticleCloud(np.zeros((2, 2)), [0.5, 0.6])
    with pytest.raises(ValueError):
        ParticleCloud(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        ParticleCloud(np.zeros((2, 2)), [1.5, -0.5])


def test_cloud_csv_round_trip(tmp_path, rng):
    w = rng.random(9)
    c = ParticleCloud(rng.normal(size=(9, 2)), w / w.sum())
    c.to_csv(tmp_path / "m.csv")
    back = ParticleCloud.from_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.positions, c.positions)
    np.testing.assert_array_equal(back.weights, c.weights)


@pytest.mark.parametrize(
    "pos, w, expected",
    [
        ([[0, 0]], [1.0], 0.0),
        ([[1, 0], [-1, 0]], [0.5, 0.5], 1.0),
        ([[0.5, 0.5], [-0.5, 0.5], [0.5, -0.5], [-0.5, -0.5]], [0.25] * 4, 0.5),
    ],
)
def test_cloud_moment2_examples(pos, w, expected):
    assert cloud_moment2(ParticleCloud(np.array(pos, float), w)) == pytest.approx(expected)


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.01, 1)), min_size=1, max_size=30),
       st.floats(0.1, 5))
def test_moment2_bounded_by_radius(rows, R):
    arr = np.array(rows)
    pos = arr[:, :2]
    norms = np.linalg.norm(pos, axis=1)
    pos = pos * (R / np.maximum(norms, 1.0))[:, None]  # inside the ball of radius R
    c = ParticleCloud(pos, arr[:, 2] / arr[:, 2].sum())
    assert cloud_moment2(c) <= R**2 * (1 + 1e-12)


@given(st.integers(1, 20), st.floats(-3, 3), st.floats(-3, 3))
def test_mass_invariant_under_transport(n, a, b):
    rng = np.random.default_rng(n)
    w = rng.random(n)
    c = ParticleCloud(rng.normal(size=(n, 2)), w / w.sum())
    moved = c.moved(np.sin(c.positions) * a + b)
    assert moved.mass == c.mass
    np.testing.assert_array_equal(moved.weights, c.weights)


def test_trajectory_invariants():
    t = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        Trajectory(t[::-1], np.zeros((11, 2)), np.zeros((11, 2)))
    tr = Trajectory(t, np.column_stack([t, 0 * t]), np.tile([1.0, 0.0], (11, 1)))
    assert tr.t == 0 and tr.T == 1
    assert tr.dynamics_residual(np.sin) < 1e-12
    np.testing.assert_allclose(tr.state_at(0.55), [0.55, 0.0])
    assert tr.restrict(0.3, 0.7).times[0] == pytest.approx(0.3)


def test_derivative_fd4_exact_on_quartics():
    t = np.linspace(0.0, 2.0, 21)
    y = t**4 - 2 * t**3 + t
    d = derivative_fd4(t, y[:, None])[:, 0]
    np.testing.assert_allclose(d, 4 * t**3 - 6 * t**2 + 1, atol=1e-9)


def test_measure_path_probe_indices():
    c = ParticleCloud(np.zeros((1, 2)), [1.0])
    mp = MeasurePath.constant(TimeGrid(0.0, 1.0, 40), c)
    assert mp.probe_indices() == [0, 10, 20, 30, 40]
    with pytest.raises(ValueError):
        MeasurePath(TimeGrid(0.0, 1.0, 4), [c] * 3)
