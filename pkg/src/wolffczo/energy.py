"""Wolff energies, the growth functional and the weak density.

For an atomic measure the radial mass ``r -> mu(Q ∩ B(x, r))`` is a step
function that jumps at the distances from x to the other atoms, so the
scale integral is evaluated exactly piece by piece:

    int_a^b M^2 r^(-2s-1) dr = M^2 (a^(-2s) - b^(-2s)) / (2s).

The only approximation is the truncation to [r_min, r_max].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Cube, LatticeView, cube_corners_containing
from .measure import DomainError, Measure

_CHUNK_ELEMS = 4_000_000


@dataclass
class WolffReport:
    integral_value: float
    dyadic_value: float
    r_min: float
    r_max: float
    per_cube: np.ndarray | None = field(default=None, repr=False)


def _box_of(Q):
    if Q is None:
        return None
    if isinstance(Q, Cube):
        return Q.lo, Q.hi
    lo, hi = Q
    return np.asarray(lo, float), np.asarray(hi, float)


def _power_tail(r: np.ndarray, s: float) -> np.ndarray:
    # r^(-2s) with r = inf -> 0
    with np.errstate(divide="ignore"):
        out = np.power(r, -2.0 * s)
    out[np.isinf(r)] = 0.0
    return out


def wolff_integral(mu: Measure, Q=None, r_min: float | None = None, r_max: float | None = None,
                   s: float = 0.5, per_atom: bool = False):
    """Truncated Wolff energy of ``mu`` restricted to Q.

    ``Q`` is a lattice Cube, a ``(lo, hi)`` box, or None for all of R^d.
    ``r_max`` may be ``math.inf``.  Returns the total, or the per-atom
    contributions (aligned with the atoms inside Q) if ``per_atom``.
    """
    r_min = mu.r_min if r_min is None else float(r_min)
    r_max = mu.r_max if r_max is None else float(r_max)
    if not 0 < r_min < r_max:
        raise DomainError(f"need 0 < r_min < r_max, got r_min={r_min}, r_max={r_max}")
    box = _box_of(Q)
    sub = mu if box is None else mu.restrict_box(*box)
    keep = sub.weights > 0
    pts, w = sub.points[keep], sub.weights[keep]
    n = len(w)
    if n == 0:
        return np.zeros(0) if per_atom else 0.0
    rows = max(1, _CHUNK_ELEMS // n)
    contrib = np.empty(n)
    two_s = 2.0 * s
    for a in range(0, n, rows):
        b = min(n, a + rows)
        diff = pts[a:b, None, :] - pts[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        order = np.argsort(dist, axis=1, kind="stable")
        dsorted = np.take_along_axis(dist, order, axis=1)
        cum = np.cumsum(w[order], axis=1)
        # mass cum[:, j] holds on (dsorted[:, j], dsorted[:, j + 1]]
        upper = np.concatenate([dsorted[:, 1:], np.full((b - a, 1), np.inf)], axis=1)
        lo_r = np.clip(dsorted, r_min, r_max)
        hi_r = np.clip(upper, r_min, r_max)
        piece = cum ** 2 * (_power_tail(lo_r, s) - _power_tail(hi_r, s)) / two_s
        contrib[a:b] = w[a:b] * piece.sum(axis=1)
    return contrib if per_atom else float(contrib.sum())


def wolff_integral_quadrature(mu: Measure, Q=None, r_min: float = 1e-3, r_max: float = 1.0,
                              s: float = 0.5, nodes: int = 10_000) -> float:
    """Trapezoid rule in log r with ``nodes`` nodes; an independent check of the exact form."""
    box = _box_of(Q)
    sub = mu if box is None else mu.restrict_box(*box)
    pts, w = sub.points, sub.weights
    t = np.linspace(math.log(r_min), math.log(r_max), nodes)
    r = np.exp(t)
    total = 0.0
    for x, wx in zip(pts, w):
        dist = np.sqrt(((pts - x) ** 2).sum(axis=1))
        order = np.argsort(dist)
        cum = np.cumsum(w[order])
        # mass of the open ball: atoms with distance < r
        cnt = np.searchsorted(dist[order], r, side="left")
        mass = np.where(cnt > 0, cum[np.maximum(cnt - 1, 0)], 0.0)
        total += wx * np.trapezoid((mass / r ** s) ** 2, t)
    return float(total)


def wolff_dyadic(view: LatticeView, s: float, per_cube: bool = False):
    """sum over view cubes of D(Q)^2 mu(Q)."""
    if len(view) == 0:
        return np.zeros(0) if per_cube else 0.0
    terms = view.densities(s) ** 2 * view.mass
    return terms if per_cube else float(terms.sum())


def wolff_report(mu: Measure, view: LatticeView, s: float, r_min=None, r_max=None,
                 breakdown: bool = False) -> WolffReport:
    r_lo, r_hi = scale_window(view) if r_min is None and r_max is None else (r_min, r_max)
    return WolffReport(
        integral_value=wolff_integral(mu, None, r_lo, r_hi, s),
        dyadic_value=wolff_dyadic(view, s),
        r_min=r_lo, r_max=r_hi,
        per_cube=wolff_dyadic(view, s, per_cube=True) if breakdown else None,
    )


def scale_window(view: LatticeView) -> tuple[float, float]:
    """Radii covered by the view's levels: a level-m triple contains B(x, 2^m) for x in its middle cube."""
    return 2.0 ** (view.m_min - 1), 2.0 ** view.m_max


def growth_constant(view: LatticeView, s: float) -> float:
    """sup of D(Q) over the view."""
    if len(view) == 0:
        return 0.0
    return float(view.densities(s).max())


def weak_density(view: LatticeView, x, s: float, eps: float) -> np.ndarray | float:
    """sup over view cubes Q' containing x of D(Q') 2^(-eps [Q':Q_0]).

    ``x`` may be a single point or an (n, d) array.  Points covered by no
    view cube get 0.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if single and view.mu.d > 1 and pts.shape[1] == 1:
        pts = pts.T
    dens = view.densities(s) if len(view) else np.zeros(0)
    out = np.zeros(len(pts))
    for m in range(view.m_min, view.m_max + 1):
        sl = view.level_slices[m]
        if sl.stop == sl.start:
            continue
        idx, ks = cube_corners_containing(pts, m)
        penalty = 2.0 ** (-eps * abs(m))
        lookup = view.index
        for i, k in zip(idx, ks):
            j = lookup.get(Cube(m, tuple(int(c) for c in k)))
            if j is not None:
                val = dens[j] * penalty
                if val > out[i]:
                    out[i] = val
    return float(out[0]) if single else out


def level_set_mask(view: LatticeView, s: float, eps: float, T: float) -> np.ndarray:
    """Predicate for E_T on the atoms: x in 2Q_0 and weak density > T."""
    mu = view.mu
    d = mu.d
    lo, hi = Cube.unit(d).bounds(2.0)
    inside = np.all((mu.points > lo) & (mu.points < hi), axis=1)
    mask = np.zeros(len(mu), dtype=bool)
    if np.any(inside):
        wd = weak_density(view, mu.points[inside], s, eps)
        mask[np.nonzero(inside)[0]] = wd > T
    return mask


def level_set_mass(view: LatticeView, s: float, eps: float, T: float) -> float:
    """mu(E_T) for E_T = {x in 2Q_0 : weak density > T}."""
    mask = level_set_mask(view, s, eps, T)
    return float(view.mu.weights[mask].sum())


def plane_mass_test(mu: Measure, point, basis, tol: float) -> float:
    """Mass of atoms within ``tol`` of the affine plane ``point + span(basis)``, inside closed Q_0."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    d = mu.d
    B = np.asarray(basis, dtype=float).reshape(-1, d) if np.size(basis) else np.zeros((0, d))
    if len(B) and not np.allclose(B @ B.T, np.eye(len(B)), atol=1e-10):
        raise DomainError("plane basis is not orthonormal")
    rel = mu.points - np.asarray(point, dtype=float)
    perp = rel - (rel @ B.T) @ B if len(B) else rel
    near = np.sqrt((perp ** 2).sum(axis=1)) <= tol
    in_q0 = np.all((mu.points >= -1.0) & (mu.points <= 2.0), axis=1)
    return float(mu.weights[near & in_q0].sum())
