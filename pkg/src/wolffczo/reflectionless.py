"""Checks for smoothly reflectionless structure on finite clouds.

Everything is relative to an observation window: continuum statements such
as "phi * mu is constant on supp(mu)" become max-deviation statistics over
the atoms inside the window.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .measure import DomainError, Measure
from .operators import smoothing_field


def _window_mask(points: np.ndarray, window) -> np.ndarray:
    lo, hi = (np.asarray(b, dtype=float) for b in window)
    return np.all((points >= lo) & (points <= hi), axis=1)


def convolution_at(mu: Measure, phi, targets) -> np.ndarray:
    """T_phi(mu)(x) = sum_j phi(x - x_j) w_j at each target."""
    return smoothing_field(phi, mu, None, 0.0, targets=targets)


def reflectionless_defect(mu: Measure, phi, window) -> float:
    """max over atoms x in the window of |T_phi(mu)(x) - median of T_phi(mu) over the window|.

    The caller shrinks the window by phi's support radius so that the cloud's
    edges do not enter.
    """
    inside = _window_mask(mu.points, window) & (mu.weights > 0)
    if not np.any(inside):
        raise DomainError("no atoms in the window")
    vals = convolution_at(mu, phi, mu.points[inside])
    return float(np.max(np.abs(vals - np.median(vals))))


def ball_difference(mu: Measure, x, z, r: float) -> float:
    """mu(B(x + z, r)) - mu(B(x - z, r))."""
    if r <= 0:
        raise DomainError("radius must be positive")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    return mu.mass_ball(x + z, r) - mu.mass_ball(x - z, r)


@dataclass
class ClosureResult:
    points: np.ndarray
    rounds: int
    min_spacing: float
    discrete: bool
    history: list[float] = field(default_factory=list)


def _snap(points: np.ndarray, quantum: float) -> np.ndarray:
    keys = np.round(points / quantum).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def _min_spacing(points: np.ndarray) -> float:
    if len(points) < 2:
        return math.inf
    from scipy.spatial import cKDTree
    dist, _ = cKDTree(points).query(points, k=2)
    return float(dist[:, 1].min())


def reflection_closure(points, window, pairs=None, delta: float = 1e-3, quantum: float = 1e-9,
                       max_points: int = 20_000, max_rounds: int = 50) -> ClosureResult:
    """Close a finite set under x -> x + k (y - x), k in Z, inside the window.

    With ``pairs=None`` every pair of current points generates progressions
    and the process is iterated to a fixed point.  ``pairs`` (index pairs into
    the initial points) restricts to those generators and a single pass.
    The closure stops with ``discrete=False`` once the minimum spacing drops
    below ``delta``.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    lo, hi = (np.asarray(b, dtype=float) for b in window)
    P = P[_window_mask(P, window)]
    P = _snap(P, quantum)
    span = float(np.max(hi - lo))
    history = [_min_spacing(P)]

    def progressions(x, y):
        z = y - x
        nz = float(np.linalg.norm(z))
        if nz == 0:
            return np.empty((0, P.shape[1]))
        kmax = int(math.ceil(span / nz)) + 1
        ks = np.arange(-kmax, kmax + 1, dtype=float)
        cand = x[None, :] + ks[:, None] * z[None, :]
        return cand[_window_mask(cand, window)]

    if pairs is not None:
        base = P.copy()
        new = [progressions(base[i], base[j]) for i, j in pairs]
        P = _snap(np.vstack([P] + new), quantum)
        sp = _min_spacing(P)
        history.append(sp)
        return ClosureResult(P, 1, sp, sp >= delta, history)

    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        new = [P]
        for i, j in itertools.combinations(range(len(P)), 2):
            new.append(progressions(P[i], P[j]))
        Q = _snap(np.vstack(new), quantum)
        sp = _min_spacing(Q)
        history.append(sp)
        if len(Q) == len(P):
            return ClosureResult(Q, rounds, sp, sp >= delta, history)
        P = Q
        if sp < delta or len(P) > max_points:
            return ClosureResult(P, rounds, sp, False, history)
    return ClosureResult(P, rounds, history[-1], history[-1] >= delta, history)


# -- structure hypotheses ---------------------------------------------------

@dataclass
class StructureHypothesis:
    """mu = sum_{e in E} f(e) H^k|(V + e), observed in a window."""

    basis: np.ndarray          # (k, d) orthonormal rows spanning V
    offsets: np.ndarray        # (n_E, d) points of E, orthogonal to V
    f: np.ndarray              # (n_E,) non-negative weights

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=float).reshape(-1, np.shape(self.offsets)[1])
        self.offsets = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        if len(self.f) != len(self.offsets):
            raise DomainError("one weight per point of E required")

    @property
    def k(self) -> int:
        return len(self.basis)

    @property
    def d(self) -> int:
        return self.offsets.shape[1]

    def check_basis(self) -> None:
        B = self.basis
        if len(B) and not np.allclose(B @ B.T, np.eye(len(B)), atol=1e-10):
            raise DomainError("degenerate or non-orthonormal basis for V")

    def project_perp(self, x: np.ndarray) -> np.ndarray:
        B = self.basis
        return x - (x @ B.T) @ B if len(B) else x

    def to_dict(self) -> dict:
        return {"basis": self.basis.tolist(), "offsets": self.offsets.tolist(), "f": self.f.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "StructureHypothesis":
        d = len(data["offsets"][0])
        basis = np.asarray(data.get("basis", []), dtype=float).reshape(-1, d)
        return cls(basis, data["offsets"], data["f"])

    @classmethod
    def from_plane_lattice(cls, meta: dict) -> "StructureHypothesis":
        d, k, spacing, extent = meta["d"], meta["k"], meta["spacing"], meta["extent"]
        weights = np.atleast_1d(np.asarray(meta["weights"], dtype=float))
        kmax = int(math.floor(extent / spacing))
        if spacing * kmax >= extent:
            kmax -= 1
        idx = np.array(list(itertools.product(range(-kmax, kmax + 1), repeat=d - k)), dtype=int).reshape(-1, d - k)
        offsets = np.zeros((len(idx), d))
        offsets[:, k:] = spacing * idx
        from .measure import _parity_weight
        f = _parity_weight(idx, weights) if d > k else weights[:1]
        return cls(np.eye(d)[:k], offsets, f)


@dataclass
class StructureReport:
    violations: list[dict]
    checked: dict[str, int]

    @property
    def passed(self) -> bool:
        return not self.violations

    def failed_checks(self) -> set[str]:
        return {v["check"] for v in self.violations}


def _reflection_orbits(E: np.ndarray, quantum: float) -> np.ndarray:
    """Label points of E by orbit under reflections y -> 2x - y that stay inside E."""
    n = len(E)
    keys = {tuple(np.round(e / quantum).astype(np.int64)): i for i, e in enumerate(E)}
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(n):
            img = tuple(np.round((2 * E[j] - E[i]) / quantum).astype(np.int64))
            t = keys.get(img)
            if t is not None:
                a, b = find(i), find(t)
                if a != b:
                    parent[a] = b
    return np.array([find(i) for i in range(n)])


def verify_structure(mu: Measure, hyp: StructureHypothesis, tol: float, window=None,
                     radius: float | None = None, samples: int = 50, seed: int = 0) -> StructureReport:
    """Check a cloud against a plane-union hypothesis.

    (a) planes: every atom lies within ``tol`` of some V + e, e in E.
    (b) uniformity: on each plane, ball masses at sampled atoms away from the
        window edge agree within ``tol`` relative to their mean; every plane
        inside the window carries mass, and plane density divided by f agrees
        across planes within ``tol``.
    (c) symmetry: 2y - x in E whenever it lies in the window, and f is
        constant on reflection orbits; a point whose f deviates from its
        orbit's median by more than ``tol`` is reported.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    hyp.check_basis()
    pts = mu.points[mu.weights > 0]
    w = mu.weights[mu.weights > 0]
    if window is None:
        window = (pts.min(axis=0), pts.max(axis=0))
    lo, hi = (np.asarray(b, dtype=float) for b in window)
    viol: list[dict] = []
    checked = {"a": 0, "b": 0, "c": 0}

    # (a)
    E = hyp.offsets
    perp_pts = hyp.project_perp(pts)
    perp_E = hyp.project_perp(E)
    best = np.full(len(pts), np.inf)
    owner = np.zeros(len(pts), dtype=int)
    for i, e in enumerate(perp_E):
        dist = np.sqrt(((perp_pts - e) ** 2).sum(axis=1))
        better = dist < best
        best[better] = dist[better]
        owner[better] = i
    checked["a"] = len(pts)
    off = best > tol
    if np.any(off):
        worst = int(np.argmax(best))
        viol.append({"check": "a", "location": pts[worst].tolist(), "magnitude": float(w[off].sum())})

    # (b)
    if radius is None:
        radius = 4 * float(mu.meta.get("r_min", mu.r_min))
    rng = np.random.default_rng(seed)
    interior = np.all((pts > lo + 2 * radius) & (pts < hi - 2 * radius), axis=1) & ~off
    e_inner = np.all((E > lo + 2 * radius) & (E < hi - 2 * radius), axis=1)
    density = {}
    for i in range(len(E)):
        mine = np.nonzero((owner == i) & ~off)[0]
        on = mine[interior[mine]]
        if len(on) == 0:
            if e_inner[i]:
                # a hypothesised plane inside the window carries no mass
                checked["b"] += 1
                viol.append({"check": "b", "location": E[i].tolist(), "magnitude": 1.0})
            continue
        pick = on if len(on) <= samples else rng.choice(on, size=samples, replace=False)
        own = np.array([w[mine][np.sqrt(((pts[mine] - pts[j]) ** 2).sum(axis=1)) < radius].sum() for j in pick])
        if hyp.f[i] != 0:
            density[i] = float(np.mean(own)) / float(hyp.f[i])
        if len(on) < 2:
            continue
        masses = np.array([mu.mass_ball(pts[j], radius) for j in pick])
        checked["b"] += len(pick)
        ref = float(np.mean(masses))
        spread = float(np.max(np.abs(masses - ref)))
        if ref > 0 and spread > tol * ref:
            j = pick[int(np.argmax(np.abs(masses - ref)))]
            viol.append({"check": "b", "location": pts[j].tolist(), "magnitude": spread / ref})
    # mass on each plane must be proportional to f
    if len(density) >= 2:
        vals = np.array(list(density.values()))
        ref = float(np.mean(vals))
        checked["b"] += len(vals)
        dev = np.abs(vals - ref)
        if ref > 0 and dev.max() > tol * ref:
            i = list(density)[int(np.argmax(dev))]
            viol.append({"check": "b", "location": E[i].tolist(), "magnitude": float(dev.max() / ref)})

    # (c)
    inwin = np.all((E >= lo) & (E <= hi), axis=1)
    Ew, fw = E[inwin], hyp.f[inwin]
    quantum = max(1e-9, 1e-9 * float(np.max(np.abs(Ew))) if len(Ew) else 1e-9)
    keys = {tuple(np.round(e / quantum).astype(np.int64)) for e in Ew}
    for a in range(len(Ew)):
        for b in range(len(Ew)):
            img = 2 * Ew[b] - Ew[a]
            checked["c"] += 1
            if np.all((img >= lo) & (img <= hi)) and tuple(np.round(img / quantum).astype(np.int64)) not in keys:
                viol.append({"check": "c", "location": img.tolist(), "magnitude": 1.0})
    if len(Ew):
        orbit = _reflection_orbits(Ew, quantum)
        for lab in np.unique(orbit):
            members = np.nonzero(orbit == lab)[0]
            med = float(np.median(fw[members]))
            for j in members:
                dev = abs(fw[j] - med)
                if dev > tol * max(1.0, abs(med)):
                    viol.append({"check": "c", "location": Ew[j].tolist(), "magnitude": float(dev)})
    return StructureReport(viol, checked)


def dimension_window_check(k: int, s: float) -> bool:
    """floor(s) < k < floor(s) + 1: never true for an integer k."""
    fl = math.floor(s)
    return fl < k < fl + 1
