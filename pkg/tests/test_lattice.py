import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wolffczo.lattice import (Cube, LatticeView, cube_corners_containing, cubes_containing_cube,
                              density, enumerate_cubes, enumerate_cubes_brute, grandparent, ratio)
from wolffczo.measure import Measure, ParameterError, cantor, lebesgue_cube


def test_q0_geometry():
    q0 = Cube.unit(3)
    assert np.array_equal(q0.lo, [-1, -1, -1]) and np.array_equal(q0.hi, [2, 2, 2])
    assert q0.side == 3.0


def test_grandparent_of_q0():
    g = grandparent(Cube.unit(2))
    assert g == Cube(2, (0, 0))
    assert np.array_equal(g.lo, [-4, -4]) and np.array_equal(g.hi, [8, 8])
    assert grandparent(g).side == 16 * Cube.unit(2).side


def test_ratio_examples():
    q = Cube(0, (0,))
    assert ratio(Cube(2, (0,)), q) == 2
    assert ratio(q, q) == 0
    assert ratio(grandparent(q), q) == 2


def test_density_examples():
    mu = Measure([[0.5, 0.5]], [1.0])
    assert density(mu, Cube.unit(2), 1.5) == pytest.approx(3 ** -1.5)
    assert density(mu, Cube(0, (10, 10)), 1.5) == 0.0
    assert density(mu.scaled(2.0), Cube.unit(2), 1.5) == pytest.approx(2 * 3 ** -1.5)


def test_code_roundtrip():
    q = Cube(-3, (5, -2))
    assert q.code() == "-3:5,-2"
    assert Cube.parse(q.code()) == q
    with pytest.raises(ParameterError):
        Cube.parse("3")
    with pytest.raises(ParameterError):
        Cube(41, (0,))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_single_atom_one_level(d):
    mu = Measure([np.full(d, 0.3)], [1.0])
    assert len(enumerate_cubes(mu, -2, -2)) == 3 ** d


def test_cantor_enumeration_matches_corner_scan():
    mu = cantor(0.25, 2, 1)
    assert enumerate_cubes(mu, -4, 0) == enumerate_cubes_brute(mu, -4, 0)


def test_random_2d_enumeration_matches_corner_scan():
    rng = np.random.default_rng(3)
    mu = Measure(rng.uniform(0, 1, size=(40, 2)), np.ones(40))
    assert enumerate_cubes(mu, -3, 1) == enumerate_cubes_brute(mu, -3, 1)


def test_disjoint_supports_enumerate_as_union():
    a = Measure([[0.1], [0.4]], [1.0, 1.0])
    b = Measure([[100.3], [100.7]], [1.0, 1.0])
    both = Measure(np.vstack([a.points, b.points]), np.ones(4))
    lv = (-2, 1)
    union = sorted(set(enumerate_cubes(a, *lv)) | set(enumerate_cubes(b, *lv)))
    assert enumerate_cubes(both, *lv) == union
    assert not set(enumerate_cubes(a, *lv)) & set(enumerate_cubes(b, *lv))


def test_empty_measure_enumerates_nothing():
    assert enumerate_cubes(Measure(np.zeros((0, 2)), np.zeros(0)), -1, 1) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.integers(-6, 4))
def test_overlap_bound(x, level):
    pts = np.array([x])
    idx, ks = cube_corners_containing(pts, level)
    assert 1 <= len(idx) <= 9
    for k in ks:
        assert Cube(level, tuple(k)).contains_point(pts[0])


@settings(max_examples=300, deadline=None)
@given(st.integers(-5, 5), st.lists(st.integers(-30, 30), min_size=2, max_size=2),
       st.integers(0, 4), st.lists(st.integers(-40, 40), min_size=2, max_size=2))
def test_grandparent_contains_smaller_intersecting_cubes(m, k, drop, kp):
    q = Cube(m, tuple(k))
    p = Cube(m - drop, tuple(kp))
    if p.disjoint(q):
        return
    assert grandparent(q).contains(p)
    assert grandparent(q).contains(q, other_factor=3)


@settings(max_examples=200, deadline=None)
@given(st.integers(-4, 4), st.lists(st.integers(-20, 20), min_size=2, max_size=2), st.integers(0, 4))
def test_containing_cubes_are_exactly_the_containing_ones(m, k, up):
    q = Cube(m, tuple(k))
    level = m + up
    found = set(cubes_containing_cube(q, level))
    # brute force over a generous corner window
    unit = 2 ** up
    brute = set()
    for a in range(k[0] // unit - 4, k[0] // unit + 5):
        for b in range(k[1] // unit - 4, k[1] // unit + 5):
            c = Cube(level, (a, b))
            if c.contains(q):
                brute.add(c)
    assert found == brute


def test_view_masses_match_exact_queries():
    mu = cantor(0.25, 4, 2)
    view = LatticeView(mu, -5, 1)
    for q, m in zip(view.cubes, view.mass):
        assert m == mu.mass_box(q.lo, q.hi)


@pytest.mark.parametrize("mu", [cantor(0.25, 5, 1), lebesgue_cube(1.0, 32, 1), cantor(0.3, 3, 2)])
def test_growth_from_sup_density(mu):
    # B(x, R) lies in the level-m triple containing x once 2^m >= R, so
    # mu(B(x, R)) <= sup D * (3 2^m)^s <= sup D * (6 R)^s
    s = 0.5 * mu.d
    view = LatticeView(mu)
    sup = float(view.densities(s).max())
    for R in [2.0 ** -j for j in range(0, 5)]:
        m = math.ceil(math.log2(R))
        if m < view.m_min or m > view.m_max:
            continue
        for x in mu.points[:: max(1, len(mu) // 16)]:
            assert mu.mass_ball(x, R) <= sup * (6 * R) ** s * (1 + 1e-12)
