"""Lattice of concentric triples of dyadic cubes.

A lattice cube is addressed by ``(level, corner)``: the underlying dyadic
cube is ``prod [k_i 2^m, (k_i + 1) 2^m)`` and the lattice cube is its open
concentric triple ``prod ((k_i - 1) 2^m, (k_i + 2) 2^m)``.  All geometric
predicates between lattice cubes use integer arithmetic.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .measure import DomainError, Measure, ParameterError

MAX_LEVEL = 40


@dataclass(frozen=True, order=True)
class Cube:
    level: int
    corner: tuple[int, ...]

    def __post_init__(self):
        if abs(self.level) > MAX_LEVEL:
            raise ParameterError("level", f"|m| must be <= {MAX_LEVEL}")
        object.__setattr__(self, "corner", tuple(int(k) for k in self.corner))

    @classmethod
    def unit(cls, d: int) -> "Cube":
        """Q_0 = (-1, 2)^d."""
        return cls(0, (0,) * d)

    @classmethod
    def parse(cls, code: str) -> "Cube":
        m, _, ks = code.strip().partition(":")
        if not ks:
            raise ParameterError("cube", f"expected 'm:k1,...,kd', got {code!r}")
        return cls(int(m), tuple(int(k) for k in ks.split(",")))

    def code(self) -> str:
        return f"{self.level}:" + ",".join(str(k) for k in self.corner)

    def __str__(self) -> str:
        return self.code()

    @property
    def d(self) -> int:
        return len(self.corner)

    @property
    def unit_length(self) -> float:
        return 2.0 ** self.level

    @property
    def side(self) -> float:
        return 3.0 * 2.0 ** self.level

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.corner, dtype=float) + 0.5) * self.unit_length

    def bounds(self, factor: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """Open box of the concentric cube with ``factor`` times the side."""
        half = 0.5 * factor * self.side
        c = self.center
        return c - half, c + half

    @property
    def lo(self) -> np.ndarray:
        return (np.asarray(self.corner, dtype=float) - 1) * self.unit_length

    @property
    def hi(self) -> np.ndarray:
        return (np.asarray(self.corner, dtype=float) + 2) * self.unit_length

    def int_bounds(self, level: int, factor: int = 1) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Integer bounds (in units of 2^level) of the concentric ``factor``-fold cube.

        ``factor`` must be odd (1 for the triple itself, 3 for 3Q) and
        ``level`` must not exceed the cube's level.
        """
        if level > self.level:
            raise ValueError("reference level must not exceed the cube level")
        if factor % 2 != 1:
            raise ValueError("factor must be odd")
        scale = 1 << (self.level - level)
        # triple spans [k - 1, k + 2); the factor-fold dilate adds 3(factor-1)/2 units per side
        pad = 3 * (factor - 1) // 2
        lo = tuple((k - 1 - pad) * scale for k in self.corner)
        hi = tuple((k + 2 + pad) * scale for k in self.corner)
        return lo, hi

    def grandparent(self) -> "Cube":
        return Cube(self.level + 2, tuple(k >> 2 for k in self.corner))

    def parent(self) -> "Cube":
        return Cube(self.level + 1, tuple(k >> 1 for k in self.corner))

    def contains(self, other: "Cube", factor: int = 1, other_factor: int = 1) -> bool:
        """``factor * self`` contains ``other_factor * other`` (as open sets)."""
        ref = min(self.level, other.level)
        slo, shi = self.int_bounds(ref, factor)
        olo, ohi = other.int_bounds(ref, other_factor)
        return all(a <= b for a, b in zip(slo, olo)) and all(b <= a for a, b in zip(shi, ohi))

    def disjoint(self, other: "Cube", factor: int = 1) -> bool:
        """The concentric ``factor``-fold dilates of the two cubes do not meet."""
        ref = min(self.level, other.level)
        alo, ahi = self.int_bounds(ref, factor)
        blo, bhi = other.int_bounds(ref, factor)
        return any(ah <= bl or bh <= al for al, ah, bl, bh in zip(alo, ahi, blo, bhi))

    def intersects(self, other: "Cube") -> bool:
        return not self.disjoint(other)

    def contains_point(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x > self.lo) & (x < self.hi)))

    def mass(self, mu: Measure, factor: float = 1.0) -> float:
        lo, hi = (self.lo, self.hi) if factor == 1.0 else self.bounds(factor)
        return mu.mass_box(lo, hi)


def ratio(qp: Cube, q: Cube) -> int:
    """[Q':Q] = |log2(l(Q')/l(Q))|, an integer for lattice cubes."""
    return abs(qp.level - q.level)


def side_ratio(lp: float, l: float) -> float:
    return abs(math.log2(lp / l))


def grandparent(q: Cube) -> Cube:
    return q.grandparent()


def mass_cube(mu: Measure, q: Cube) -> float:
    return q.mass(mu)


def density(mu: Measure, q: Cube, s: float) -> float:
    return q.mass(mu) / q.side ** s


def cube_corners_containing(points: np.ndarray, level: int) -> tuple[np.ndarray, np.ndarray]:
    """All (point index, corner) pairs with the point strictly inside the triple.

    Returns ``(idx, corners)`` with ``corners`` of shape (n_pairs, d).  A
    point lies in at most 3^d triples per level.
    """
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    u = points / 2.0 ** level  # exact: division by a power of two
    base = np.floor(u)
    idx_all, corners_all = [], []
    for shift in itertools.product((-1, 0, 1), repeat=d):
        k = base + np.asarray(shift, dtype=float)
        ok = np.all((k - 1 < u) & (u < k + 2), axis=1)
        if np.any(ok):
            idx_all.append(np.nonzero(ok)[0])
            corners_all.append(k[ok].astype(np.int64))
    if not idx_all:
        return np.empty(0, dtype=int), np.empty((0, d), dtype=np.int64)
    return np.concatenate(idx_all), np.vstack(corners_all)


def default_levels(mu: Measure, guard: int = 1) -> tuple[int, int]:
    """Levels from the resolved scale r_min up to a cube containing the support."""
    if len(mu.support()) == 0:
        return 0, 0
    m_min = math.floor(math.log2(mu.r_min))
    diam = mu.diameter()
    m_top = (math.floor(math.log2(diam)) + 1) if diam > 0 else m_min
    return m_min, max(m_top + guard, m_min)


class LatticeView:
    """Finite window of the lattice: all positive-mass cubes with level in [m_min, m_max].

    Cube masses are accumulated in bulk per level (a sum over the atoms in
    each triple); ``cubes[i]``, ``levels[i]``, ``corners[i]`` and ``mass[i]``
    are aligned.  Cubes are ordered by level, then corner.
    """

    def __init__(self, mu: Measure, m_min: int | None = None, m_max: int | None = None):
        if m_min is None or m_max is None:
            lo, hi = default_levels(mu)
            m_min = lo if m_min is None else m_min
            m_max = hi if m_max is None else m_max
        if m_min > m_max:
            raise ParameterError("levels", "m_min must not exceed m_max")
        if max(abs(m_min), abs(m_max)) > MAX_LEVEL:
            raise ParameterError("levels", f"|m| must be <= {MAX_LEVEL}")
        self.mu = mu
        self.m_min = int(m_min)
        self.m_max = int(m_max)
        pos = mu.weights > 0
        pts, w = mu.points[pos], mu.weights[pos]
        levels, corners, masses = [], [], []
        for m in range(self.m_min, self.m_max + 1):
            if len(w) == 0:
                break
            idx, ks = cube_corners_containing(pts, m)
            uniq, inv = np.unique(ks, axis=0, return_inverse=True)
            levels.append(np.full(len(uniq), m, dtype=np.int64))
            corners.append(uniq)
            masses.append(np.bincount(inv.reshape(-1), weights=w[idx], minlength=len(uniq)))
        d = mu.d
        self.levels = np.concatenate(levels) if levels else np.empty(0, dtype=np.int64)
        self.corners = np.vstack(corners) if corners else np.empty((0, d), dtype=np.int64)
        self.mass = np.concatenate(masses) if masses else np.empty(0)
        self.cubes = [Cube(int(m), tuple(int(k) for k in c)) for m, c in zip(self.levels, self.corners)]
        self.index = {q: i for i, q in enumerate(self.cubes)}

    def __len__(self) -> int:
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    @property
    def sides(self) -> np.ndarray:
        return 3.0 * np.exp2(self.levels.astype(float))

    def densities(self, s: float) -> np.ndarray:
        return self.mass / self.sides ** s

    def density_of(self, q: Cube, s: float) -> float:
        i = self.index.get(q)
        if i is None:
            return 0.0
        return float(self.mass[i] / self.sides[i] ** s)

    def mass_of(self, q: Cube) -> float:
        i = self.index.get(q)
        return 0.0 if i is None else float(self.mass[i])

    @cached_property
    def level_slices(self) -> dict[int, slice]:
        out = {}
        for m in range(self.m_min, self.m_max + 1):
            a = int(np.searchsorted(self.levels, m, side="left"))
            b = int(np.searchsorted(self.levels, m, side="right"))
            out[m] = slice(a, b)
        return out

    def containing(self, points) -> list[list[int]]:
        """For each point, indices of view cubes whose triple contains it."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out: list[list[int]] = [[] for _ in range(len(points))]
        for m in range(self.m_min, self.m_max + 1):
            idx, ks = cube_corners_containing(points, m)
            for i, k in zip(idx, ks):
                j = self.index.get(Cube(m, tuple(int(c) for c in k)))
                if j is not None:
                    out[i].append(j)
        return out


def enumerate_cubes(mu: Measure, m_min: int | None = None, m_max: int | None = None) -> list[Cube]:
    """Every lattice cube with level in range whose triple meets supp(mu), once each."""
    return list(LatticeView(mu, m_min, m_max).cubes)


def enumerate_cubes_brute(mu: Measure, m_min: int, m_max: int) -> list[Cube]:
    """Scan every corner in the support's bounding box; membership by exact mass query."""
    pts = mu.support()
    if len(pts) == 0:
        return []
    out = []
    for m in range(m_min, m_max + 1):
        unit = 2.0 ** m
        lo = np.floor(pts.min(axis=0) / unit).astype(int) - 2
        hi = np.floor(pts.max(axis=0) / unit).astype(int) + 2
        for k in itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi))):
            q = Cube(m, k)
            if len(mu.box_indices(q.lo, q.hi)) and np.any(mu.weights[mu.box_indices(q.lo, q.hi)] > 0):
                out.append(q)
    return sorted(out)


def cubes_containing_cube(q: Cube, level: int) -> list[Cube]:
    """All lattice cubes at ``level`` (>= q.level) whose triple contains q's triple."""
    if level < q.level:
        return []
    if level == q.level:
        return [q]
    t = level - q.level
    unit = 1 << t
    ranges = []
    for k in q.corner:
        # need (k' - 1) unit <= k - 1 and k + 2 <= (k' + 2) unit
        kmax = (k - 1) // unit + 1
        kmin = -((-(k + 2)) // unit) - 2
        ranges.append(range(kmin, kmax + 1))
    return [Cube(level, c) for c in itertools.product(*ranges)]


def require_nonempty(mu: Measure) -> None:
    if len(mu.support()) == 0:
        raise DomainError("measure has no atoms of positive weight")
