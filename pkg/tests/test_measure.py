import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wolffczo.lattice import Cube
from wolffczo.measure import (Ambient, Measure, ParameterError, cantor, cantor_dimension,
                              generate, lebesgue_cube, plane_lattice, read_points,
                              rescale_normalize, write_points)


def cantor_by_recursion(ratio, n, d):
    """Independent oracle: recursively keep the two end sub-intervals, then take corners."""
    intervals = [(0.0, 1.0)]
    for _ in range(n):
        nxt = []
        for a, b in intervals:
            L = (b - a) * ratio
            nxt += [(a, a + L), (b - L, b)]
        intervals = nxt
    lefts = [a for a, _ in intervals]
    return np.array(list(itertools.product(lefts, repeat=d)))


def test_cantor_generation_zero():
    mu = cantor(0.25, 0, 1)
    assert len(mu) == 1
    assert mu.points[0, 0] == 0.0 and mu.weights[0] == 1.0
    assert mu.meta["dimension"] == pytest.approx(0.5)


def test_cantor_2d_matches_recursion():
    mu = cantor(0.25, 2, 2)
    assert len(mu) == 16
    assert np.allclose(mu.weights, 1 / 16)
    ref = cantor_by_recursion(0.25, 2, 2)
    got = sorted(map(tuple, mu.points))
    assert np.allclose(got, sorted(map(tuple, ref)))
    # pairwise distances >= lambda^2 (1 - 2 lambda)
    assert mu.min_distance() >= 0.25 ** 2 * 0.5 - 1e-15


@pytest.mark.parametrize("d", [1, 2, 3])
def test_cantor_counts_and_dimension(d):
    mu = cantor(0.3, 3, d)
    assert len(mu) == 2 ** (d * 3)
    assert mu.total_mass == pytest.approx(1.0)
    assert mu.meta["dimension"] == pytest.approx(cantor_dimension(0.3, d))


def test_mass_ball_cantor_left_block():
    mu = cantor(0.25, 3, 1)
    assert mu.mass_ball([0.0], 0.25) == pytest.approx(0.5)


def test_mass_ball_atom_conventions():
    mu = Measure([[0.0]], [1.0])
    assert mu.mass_ball([0.0], 0.5) == 1.0
    assert mu.mass_ball([0.0], 0.0) == 0.0


def test_mass_box_open_convention():
    mu = cantor(0.25, 2, 1)
    # atoms 0, 1/16, 3/4, 13/16; the one at 0 sits on the boundary
    assert mu.mass_box([0.0], [0.25]) == pytest.approx(0.25)


def test_lebesgue_cube_cell_centres():
    mu = lebesgue_cube(1.0, 4, 1)
    assert np.allclose(mu.points[:, 0], [1 / 8, 3 / 8, 5 / 8, 7 / 8])
    assert np.allclose(mu.weights, 0.25)


def test_parameter_errors_name_field():
    with pytest.raises(ParameterError) as exc:
        cantor(0.7, 2, 1)
    assert exc.value.field == "ratio"
    with pytest.raises(ParameterError) as exc:
        generate({"family": "lebesgue-cube", "params": {"resolution": 0}})
    assert exc.value.field == "resolution"
    with pytest.raises(ParameterError):
        generate({"family": "nope"})


def test_ambient_validation():
    with pytest.raises(ParameterError):
        Ambient(1, 1.5, 0.1)
    with pytest.raises(ParameterError):
        Ambient(2, 0.5, 0.0)
    assert Ambient(2, 1.5, 0.1).integer_free()


def test_generate_by_dimension():
    mu = generate({"family": "cantor", "params": {"dimension": 0.5, "generation": 3}})
    assert mu.meta["dimension"] == pytest.approx(0.5)
    assert mu.meta["ratio"] == pytest.approx(0.25)


def test_rescale_left_block_is_previous_generation():
    mu = cantor(0.25, 4, 1)
    q = Cube(-2, (0,))          # triple of [0, 1/4): (-1/4, 1/2)
    nu = rescale_normalize(mu, q)
    inside = nu.box_indices([-1.0], [2.0])
    ref = cantor(0.25, 3, 1)
    assert np.allclose(np.sort(nu.points[inside, 0]), np.sort(ref.points[:, 0]))
    assert np.allclose(nu.weights[inside], ref.weights)
    assert Cube.unit(1).mass(nu) == pytest.approx(1.0, abs=1e-12)


def test_rescale_identity_on_q0():
    mu = Measure([[0.2], [1.5]], [0.25, 0.75])
    nu = rescale_normalize(mu, Cube.unit(1))
    assert np.array_equal(nu.points, mu.points)
    assert np.allclose(nu.weights, mu.weights)


@pytest.mark.parametrize("k", range(4))
def test_cantor_self_similarity(k):
    n, lam = 5, 0.25
    mu = cantor(lam, n, 1, scale=2.0)
    block = cantor(lam, k, 1, scale=2.0)   # generation-k corners are also atoms of mu
    for p in block.points:
        assert mu.mass_ball(p, lam ** k * 2.0) == pytest.approx(2.0 ** -k)


def test_point_file_roundtrip(tmp_path):
    mu = plane_lattice(2, 1, 1.0, 2.0, 4, (1.0, 3.0))
    path = tmp_path / "cloud.txt"
    write_points(mu, path)
    assert path.read_text().splitlines()[0] == f"# d=2 n={len(mu)}"
    back = read_points(path)
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.weights, mu.weights)


points_2d = st.lists(st.tuples(st.floats(-4, 4), st.floats(-4, 4)), min_size=1, max_size=300)


@settings(max_examples=100, deadline=None)
@given(points_2d, st.tuples(st.floats(-5, 5), st.floats(-5, 5)), st.floats(0, 3))
def test_ball_query_matches_brute_force(pts, c, r):
    pts = np.array(pts)
    mu = Measure(pts, np.linspace(0.1, 1.0, len(pts)))
    assert mu.mass_ball(c, r) == mu.mass_ball_brute(c, r)


@settings(max_examples=100, deadline=None)
@given(points_2d, st.tuples(st.floats(-5, 5), st.floats(-5, 5)), st.tuples(st.floats(0, 4), st.floats(0, 4)))
def test_box_query_matches_brute_force(pts, lo, size):
    pts = np.array(pts)
    mu = Measure(pts, np.linspace(0.1, 1.0, len(pts)))
    lo = np.array(lo)
    hi = lo + np.array(size)
    assert mu.mass_box(lo, hi) == mu.mass_box_brute(lo, hi)


def test_queries_on_large_cloud_exact():
    rng = np.random.default_rng(1)
    mu = Measure(rng.uniform(-1, 1, size=(10_000, 2)), rng.uniform(0, 1, 10_000))
    for _ in range(100):
        c = rng.uniform(-1, 1, 2)
        r = rng.uniform(0, 0.5)
        assert mu.mass_ball(c, r) == mu.mass_ball_brute(c, r)
        lo = rng.uniform(-1, 1, 2)
        hi = lo + rng.uniform(0, 0.5, 2)
        assert mu.mass_box(lo, hi) == mu.mass_box_brute(lo, hi)


@settings(max_examples=50, deadline=None)
@given(st.integers(-4, 2), st.integers(-8, 8), st.integers(1, 5))
def test_rescale_preserves_relative_weights(level, corner, n):
    mu = cantor(0.25, n, 1, scale=4.0, origin=[-2.0])
    q = Cube(level, (corner,))
    mass = q.mass(mu)
    if mass <= 0:
        return
    nu = rescale_normalize(mu, q)
    assert np.allclose(nu.weights * mass, mu.weights)
    assert abs(Cube.unit(1).mass(nu) - 1.0) <= 1e-12


def test_r_min_defaults():
    mu = Measure([[0.0], [1.0], [3.0]], [1.0, 1.0, 1.0])
    assert mu.r_min == pytest.approx(0.5)
    assert math.isfinite(mu.r_max)
