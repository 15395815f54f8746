"""Finite atomic measures with exact ball and box mass queries.

A measure is a weighted point cloud.  Continuous measures (Lebesgue on a
cube, Hausdorff measure on a family of parallel planes) enter as
midpoint-quadrature clouds; the resolution is recorded in ``meta``.

Balls and boxes are open: an atom on the boundary counts as outside.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

LEAF_SIZE = 32


class ParameterError(ValueError):
    """Invalid generator or query parameter; ``field`` names the offender."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Ambient:
    d: int
    s: float
    eps: float = 0.1

    def __post_init__(self):
        if self.d < 1:
            raise ParameterError("d", "ambient dimension must be >= 1")
        if not 0 < self.s < self.d:
            raise ParameterError("s", f"need 0 < s < d, got s={self.s}, d={self.d}")
        if self.eps <= 0:
            raise ParameterError("eps", "must be positive")

    def integer_free(self) -> bool:
        """True if (s - eps, s + eps) contains no integer."""
        return math.floor(self.s + self.eps) == math.floor(self.s - self.eps) and \
            not float(self.s - self.eps).is_integer()


def _ball_mask(points: np.ndarray, center, r: float) -> np.ndarray:
    diff = points - np.asarray(center, dtype=float)
    return np.einsum("ij,ij->i", diff, diff) < r * r


def _box_mask(points: np.ndarray, lo, hi) -> np.ndarray:
    return np.all((points > np.asarray(lo, float)) & (points < np.asarray(hi, float)), axis=1)


class Measure:
    """Weighted point cloud ``sum_i w_i delta_{x_i}`` in R^d.

    Immutable after construction.  Queries go through a kd-tree (leaf size
    32) that only proposes candidates; membership is decided by the same
    exact predicate the brute-force sums use, so indexed and brute-force
    masses agree bit for bit.
    """

    def __init__(self, points, weights, meta: dict[str, Any] | None = None):
        pts = np.array(points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(weights, dtype=float, copy=True).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise ParameterError("weights", "one weight per point required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ParameterError("weights", "weights must be finite and non-negative")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("points", "coordinates must be finite")
        pts.setflags(write=False)
        w.setflags(write=False)
        self.points = pts
        self.weights = w
        self.meta = dict(meta or {})
        self._tree = cKDTree(pts, leafsize=LEAF_SIZE) if len(w) else None

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def support(self) -> np.ndarray:
        return self.points[self.weights > 0]

    def scaled(self, c: float) -> "Measure":
        return Measure(self.points, c * self.weights, self.meta)

    def restrict_box(self, lo, hi) -> "Measure":
        m = _box_mask(self.points, lo, hi)
        return Measure(self.points[m], self.weights[m], self.meta)

    # -- queries -------------------------------------------------------

    def ball_indices(self, center, r: float) -> np.ndarray:
        """Sorted indices of atoms in the open ball B(center, r)."""
        if self._tree is None or r <= 0:
            return np.empty(0, dtype=int)
        center = np.asarray(center, dtype=float).reshape(-1)
        cand = np.sort(np.asarray(self._tree.query_ball_point(center, r * (1 + 1e-9) + 1e-300), dtype=int))
        return cand[_ball_mask(self.points[cand], center, r)]

    def box_indices(self, lo, hi) -> np.ndarray:
        """Sorted indices of atoms in the open box prod (lo_i, hi_i)."""
        if self._tree is None:
            return np.empty(0, dtype=int)
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if np.any(hi <= lo):
            return np.empty(0, dtype=int)
        c = 0.5 * (lo + hi)
        h = float(np.max(0.5 * (hi - lo)))
        cand = self._tree.query_ball_point(c, h * (1 + 1e-9) + 1e-300, p=np.inf)
        cand = np.sort(np.asarray(cand, dtype=int))
        return cand[_box_mask(self.points[cand], lo, hi)]

    def mass_ball(self, center, r: float) -> float:
        if r < 0:
            raise ParameterError("r", "radius must be non-negative")
        return float(self.weights[self.ball_indices(center, r)].sum())

    def mass_box(self, lo, hi) -> float:
        return float(self.weights[self.box_indices(lo, hi)].sum())

    def mass_ball_brute(self, center, r: float) -> float:
        return float(self.weights[_ball_mask(self.points, center, r)].sum())

    def mass_box_brute(self, lo, hi) -> float:
        return float(self.weights[_box_mask(self.points, lo, hi)].sum())

    # -- scales --------------------------------------------------------

    def min_distance(self) -> float:
        """Minimum distance between distinct positive-weight atoms (inf if < 2)."""
        pts = self.support()
        if len(pts) < 2:
            return math.inf
        dist, _ = cKDTree(pts).query(pts, k=2)
        return float(dist[:, 1].min())

    def diameter(self) -> float:
        pts = self.support()
        if len(pts) < 2:
            return 0.0
        if len(pts) <= 4096:
            from scipy.spatial.distance import pdist
            return float(pdist(pts).max())
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    @property
    def r_min(self) -> float:
        """Smallest resolved scale: half the minimum atom spacing."""
        if "r_min" in self.meta:
            return float(self.meta["r_min"])
        md = self.min_distance()
        return 0.5 * md if math.isfinite(md) else 1.0

    @property
    def r_max(self) -> float:
        diam = self.diameter()
        return 2.0 * diam if diam > 0 else 2.0

    def __repr__(self) -> str:
        fam = self.meta.get("family", "custom")
        return f"Measure({fam}, n={len(self)}, d={self.d}, mass={self.total_mass:.6g})"


def mass_ball(mu: Measure, center, r: float) -> float:
    return mu.mass_ball(center, r)


# -- generators -----------------------------------------------------------

@dataclass
class MeasureSpec:
    family: str
    params: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MeasureSpec":
        data = dict(data)
        family = data.pop("family", None)
        if family is None:
            raise ParameterError("family", "missing measure family")
        params = data.pop("params", data)
        return cls(family, dict(params))

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "params": dict(self.params)}


def cantor_dimension(ratio: float, d: int = 1) -> float:
    return d * math.log(2) / math.log(1 / ratio)


def cantor_ratio_for_dimension(t: float, d: int = 1) -> float:
    """Contraction ratio whose d-fold product Cantor set has dimension t."""
    return 2.0 ** (-d / t)


def cantor(ratio: float = 0.25, generation: int = 0, d: int = 1,
           scale: float = 1.0, origin=None) -> Measure:
    """Product Cantor measure: 2^(d n) atoms of weight 2^(-d n).

    Atom positions are the lower-left corners of the generation-n cubes of
    the construction on ``origin + scale * [0, 1]^d``; each step keeps the
    two end intervals of relative length ``ratio``.
    """
    if not 0 < ratio <= 0.5:
        raise ParameterError("ratio", f"contraction ratio must lie in (0, 1/2], got {ratio}")
    if int(generation) != generation or generation < 0:
        raise ParameterError("generation", "must be a non-negative integer")
    if d < 1:
        raise ParameterError("d", "must be >= 1")
    if scale <= 0:
        raise ParameterError("scale", "must be positive")
    generation = int(generation)
    coords = np.zeros(1)
    for k in range(generation):
        step = scale * (1 - ratio) * ratio ** k
        coords = np.concatenate([coords, coords + step])
    coords.sort()
    grid = np.array(list(itertools.product(coords, repeat=d)), dtype=float).reshape(-1, d)
    if origin is not None:
        grid = grid + np.asarray(origin, dtype=float)
    n = len(grid)
    meta = {
        "family": "cantor", "ratio": ratio, "generation": generation, "d": d,
        "scale": scale, "dimension": cantor_dimension(ratio, d),
    }
    if generation > 0:
        # sibling gap at the finest generation
        meta["r_min"] = 0.5 * scale * (1 - ratio) * ratio ** (generation - 1)
    return Measure(grid, np.full(n, 1.0 / n), meta)


def lebesgue_cube(side: float = 1.0, resolution: int = 1, d: int = 1, origin=None) -> Measure:
    """Midpoint quadrature of Lebesgue measure on ``origin + [0, side]^d``."""
    if side <= 0:
        raise ParameterError("side", "must be positive")
    if int(resolution) != resolution or resolution < 1:
        raise ParameterError("resolution", "must be an integer >= 1")
    resolution = int(resolution)
    h = side / resolution
    axis = (np.arange(resolution) + 0.5) * h
    grid = np.array(list(itertools.product(axis, repeat=d)), dtype=float).reshape(-1, d)
    if origin is not None:
        grid = grid + np.asarray(origin, dtype=float)
    meta = {"family": "lebesgue-cube", "side": side, "resolution": resolution, "d": d,
            "r_min": 0.5 * h}
    return Measure(grid, np.full(len(grid), h ** d), meta)


def uniform_ball_grid(radius: float, resolution: int, d: int = 1) -> Measure:
    """Lebesgue measure on B(0, radius) by midpoint quadrature, ``resolution`` cells per axis."""
    if radius <= 0:
        raise ParameterError("radius", "must be positive")
    cube = lebesgue_cube(2 * radius, resolution, d, origin=np.full(d, -radius))
    keep = _ball_mask(cube.points, np.zeros(d), radius)
    meta = dict(cube.meta, family="uniform-ball", radius=radius)
    return Measure(cube.points[keep], cube.weights[keep], meta)


def _parity_weight(index: np.ndarray, weights) -> np.ndarray:
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if len(weights) == 1:
        return np.full(len(index), weights[0])
    bits = np.mod(index, 2).astype(int)
    code = np.zeros(len(index), dtype=int)
    for j in range(bits.shape[1]):
        code |= bits[:, j] << j
    if len(weights) != 2 ** bits.shape[1]:
        raise ParameterError("weights", f"need 1 or {2 ** bits.shape[1]} parity weights")
    return weights[code]


def plane_lattice(d: int = 2, k: int = 1, spacing: float = 1.0, extent: float = 4.0,
                  resolution: int = 16, weights=(1.0,), jitter_seed: int | None = None) -> Measure:
    """Quadrature cloud of ``sum_{e in E} f(e) H^k|(V + e)`` inside [-extent, extent]^d.

    V is spanned by the first k coordinate axes and E = spacing * Z^(d-k) in
    the remaining ones.  ``weights`` gives f as a function of the parity
    vector of the lattice index (one value, or 2^(d-k) values), which makes f
    symmetric about every point of E.  Along each plane the nodes form a
    midpoint grid with ``resolution`` cells per unit length.  With
    ``jitter_seed`` every plane's grid gets an independent random shift, so
    the cloud is no longer exactly symmetric about its own atoms.
    """
    if not 0 <= k <= d:
        raise ParameterError("k", "plane dimension must be in [0, d]")
    if spacing <= 0:
        raise ParameterError("spacing", "must be positive")
    if extent <= 0:
        raise ParameterError("extent", "must be positive")
    if int(resolution) != resolution or resolution < 1:
        raise ParameterError("resolution", "must be an integer >= 1")
    h = 1.0 / resolution
    n_along = int(round(2 * extent / h))
    along = -extent + (np.arange(n_along) + 0.5) * h
    kmax = int(math.floor(extent / spacing))
    if spacing * kmax >= extent:
        kmax -= 1
    offs = np.arange(-kmax, kmax + 1)
    lattice = np.array(list(itertools.product(offs, repeat=d - k)), dtype=int).reshape(-1, d - k)
    rng = np.random.default_rng(jitter_seed) if jitter_seed is not None else None
    f = _parity_weight(lattice, weights) if d > k else np.atleast_1d(np.asarray(weights, float))[:1]
    blocks, wts = [], []
    if k == 0:
        plane_grid = np.zeros((1, 0))
    else:
        plane_grid = np.array(list(itertools.product(along, repeat=k)), dtype=float).reshape(-1, k)
    for idx, e in enumerate(lattice if d > k else np.zeros((1, 0), dtype=int)):
        grid = plane_grid
        if rng is not None and k > 0:
            shift = rng.uniform(-0.5, 0.5, size=k) * h
            grid = grid + shift
        pts = np.zeros((len(grid), d))
        pts[:, :k] = grid
        pts[:, k:] = spacing * e
        blocks.append(pts)
        wts.append(np.full(len(grid), f[idx] * h ** k))
    meta = {"family": "plane-lattice", "d": d, "k": k, "spacing": spacing, "extent": extent,
            "resolution": resolution, "weights": list(np.atleast_1d(weights)),
            "r_min": 0.5 * h if k > 0 else 0.5 * spacing}
    return Measure(np.vstack(blocks), np.concatenate(wts), meta)


def generate(spec: MeasureSpec | dict) -> Measure:
    if isinstance(spec, dict):
        spec = MeasureSpec.from_dict(spec)
    p = dict(spec.params)
    fam = spec.family
    try:
        if fam == "cantor":
            if "dimension" in p and "ratio" not in p:
                p["ratio"] = cantor_ratio_for_dimension(p.pop("dimension"), p.get("d", 1))
            return cantor(**p)
        if fam == "lebesgue-cube":
            return lebesgue_cube(**p)
        if fam == "uniform-ball":
            return uniform_ball_grid(**p)
        if fam == "plane-lattice":
            return plane_lattice(**p)
        if fam == "custom-points":
            pts = np.asarray(p.pop("points"), dtype=float)
            w = p.pop("weights", None)
            w = np.full(len(pts), 1.0 / max(len(pts), 1)) if w is None else w
            return Measure(pts, w, {"family": "custom-points", **p})
    except TypeError as exc:
        raise ParameterError(fam, str(exc)) from exc
    raise ParameterError("family", f"unknown measure family {fam!r}")


def rescale_normalize(mu: Measure, Q) -> Measure:
    """Pull ``mu`` back by the canonical map sending Q_0 = (-1, 2)^d onto Q.

    The result is normalised so that it gives mass exactly one to Q_0 (up to
    the rounding of the weights).
    """
    mass = Q.mass(mu)
    if mass <= 0:
        raise DomainError(f"cube {Q.code()} carries no mass")
    unit = 2.0 ** Q.level
    pts = mu.points / unit - np.asarray(Q.corner, dtype=float)
    meta = dict(mu.meta, rescaled_from=Q.code())
    if "r_min" in mu.meta:
        meta["r_min"] = mu.meta["r_min"] / unit
    return Measure(pts, mu.weights / mass, meta)


# -- point-cloud files ------------------------------------------------------

def write_points(mu: Measure, path) -> None:
    lines = [f"# d={mu.d} n={len(mu)}"]
    for x, w in zip(mu.points, mu.weights):
        lines.append(" ".join(repr(float(c)) for c in x) + " " + repr(float(w)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_points(path) -> Measure:
    text = Path(path).read_text().splitlines()
    d = None
    rows = []
    for line in text:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("d="):
                    d = int(tok[2:])
            continue
        rows.append([float(t) for t in line.split()])
    if d is None:
        if not rows:
            raise ParameterError("header", "missing '# d=<d> n=<count>' header")
        d = len(rows[0]) - 1
    arr = np.asarray(rows, dtype=float).reshape(-1, d + 1)
    return Measure(arr[:, :d], arr[:, d], {"family": "file", "source": str(path)})
