"""Lipschitz oscillation coefficients and Riesz-system sums.

Theta pairs the smoothed field ``t = T_{phi, l(Q)}(mu)`` against the best
mean-zero Lipschitz bump adapted to AQ.  Only the bump's values at the atoms
of mu inside AQ enter the pairing, and a set of node values extends to a
function in Lip_0(AQ) with norm <= L iff

    |v_i - v_j| <= L |x_i - x_j|   and   |v_i| <= L dist(x_i, R^d minus AQ),

so Theta is the optimum of a finite linear program over node values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .lattice import Cube
from .measure import DomainError, Measure
from .operators import smoothing_field

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9


@dataclass
class LipFunction:
    """Node values of a Lipschitz function supported in the box (lo, hi)."""

    nodes: np.ndarray
    values: np.ndarray
    lip_bound: float
    lo: np.ndarray
    hi: np.ndarray
    atom_index: np.ndarray
    weights: np.ndarray
    subsampled: bool = False

    def boundary_distance(self) -> np.ndarray:
        return np.maximum(0.0, np.minimum(self.nodes - self.lo, self.hi - self.nodes).min(axis=1)) \
            if len(self.nodes) else np.zeros(0)

    def violations(self) -> dict[str, float]:
        """Largest violation of each constraint, in units of lip_bound * side of the box."""
        n = len(self.values)
        unit = self.lip_bound * float(np.max(self.hi - self.lo)) if n else 1.0
        out = {"lipschitz": 0.0, "support": 0.0, "mean": 0.0}
        if n == 0:
            return out
        v = self.values
        worst = 0.0
        rows = max(1, 2_000_000 // n)
        for a in range(0, n, rows):
            diff = self.nodes[a:a + rows, None, :] - self.nodes[None, :, :]
            dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            gap = np.abs(v[a:a + rows, None] - v[None, :]) - self.lip_bound * dist
            worst = max(worst, float(gap.max()))
        out["lipschitz"] = max(0.0, worst) / unit
        out["support"] = max(0.0, float(np.max(np.abs(v) - self.lip_bound * self.boundary_distance()))) / unit
        scale = float(np.sum(np.abs(v) * self.weights)) or 1.0
        out["mean"] = abs(float(np.sum(v * self.weights))) / max(scale, unit * float(self.weights.sum()))
        return out

    def is_feasible(self, tol: float = FEAS_TOL) -> bool:
        return all(x <= tol for x in self.violations().values())

    def as_atom_vector(self, n_atoms: int) -> np.ndarray:
        out = np.zeros(n_atoms)
        out[self.atom_index] = self.values
        return out


@dataclass
class ThetaResult:
    value: float
    witness: LipFunction
    lp_residual: float
    n_nodes: int
    status: str = "optimal"
    field_values: np.ndarray | None = field(default=None, repr=False)


def _lip_pairs(nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, d = nodes.shape
    if d == 1:
        order = np.argsort(nodes[:, 0], kind="stable")
        return order[:-1], order[1:]
    i, j = np.triu_indices(n, k=1)
    return i, j


def _select_nodes(mu: Measure, lo, hi, max_nodes: int) -> tuple[np.ndarray, bool]:
    idx = mu.box_indices(lo, hi)
    idx = idx[mu.weights[idx] > 0]
    if len(idx) <= max_nodes:
        return idx, False
    keep = np.linspace(0, len(idx) - 1, max_nodes).round().astype(int)
    return idx[np.unique(keep)], True


def theta(mu: Measure, Q: Cube, phi, A: float, s: float, scaled: bool = True,
          max_nodes: int | None = None, field_values=None) -> ThetaResult:
    """Theta^A_{mu, phi}(Q) with an optimal witness.

    ``scaled=True`` pairs against T_{phi, l(Q)}(mu); ``scaled=False`` uses
    the unscaled convolution sum_j phi(x - x_j) w_j.
    """
    if A <= 1:
        raise DomainError("A must exceed 1")
    ell = Q.side
    lo, hi = Q.bounds(A)
    if max_nodes is None:
        max_nodes = 2000 if mu.d == 1 else 300
    idx, sub = _select_nodes(mu, lo, hi, max_nodes)
    if len(idx) == 0:
        raise DomainError(f"no atoms of mu in {A}Q for Q={Q.code()}")
    nodes = mu.points[idx]
    w = mu.weights[idx]
    if field_values is None:
        t = smoothing_field(phi, mu, ell if scaled else None, s, targets=nodes)
    else:
        t = np.asarray(field_values, dtype=float)[idx]
    L = 1.0 / ell
    dist_b = np.maximum(0.0, np.minimum(nodes - lo, hi - nodes).min(axis=1))
    # variables u = v / L, so |u_i - u_j| <= |x_i - x_j| and |u_i| <= dist_i
    c = t * w * L
    n = len(idx)
    pi, pj = _lip_pairs(nodes)
    m = len(pi)
    if m:
        pd = np.sqrt(((nodes[pi] - nodes[pj]) ** 2).sum(axis=1))
        rows = np.repeat(np.arange(2 * m), 2)
        cols = np.stack([np.concatenate([pi, pj]), np.concatenate([pj, pi])], axis=1).reshape(-1)
        vals = np.tile([1.0, -1.0], 2 * m)
        A_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * m, n))
        b_ub = np.concatenate([pd, pd])
    else:
        A_ub, b_ub = None, None
    wscale = w / w.max()
    res = linprog(-c, A_ub=A_ub, b_ub=b_ub, A_eq=wscale[None, :], b_eq=[0.0],
                  bounds=list(zip(-dist_b, dist_b)), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"LP failed for cube {Q.code()}: {res.message}")
    v = np.clip(res.x, -dist_b, dist_b) * L
    witness = LipFunction(nodes, v, L, lo, hi, idx, w, subsampled=sub)
    viol = witness.violations()
    value = abs(float(np.sum(t * v * w)))
    return ThetaResult(value, witness, max(viol.values()), n, "optimal" if not sub else "subsampled", t)


def riesz_system_ratio(mu: Measure, psi: dict[Cube, LipFunction], A: float, g,
                       tol: float = FEAS_TOL) -> float:
    """sum_Q |<g, psi_Q>_mu|^2 / mu(3A Q), divided by |g|^2_{L^2(mu)}."""
    g = np.asarray(g, dtype=float)
    norm2 = float(np.sum(g * g * mu.weights))
    if norm2 == 0:
        return 0.0
    total = 0.0
    for q, fn in psi.items():
        viol = fn.violations()
        bad = {k: x for k, x in viol.items() if x > tol}
        if bad:
            raise DomainError(f"psi for cube {q.code()} violates {sorted(bad)}")
        denom = q.mass(mu, factor=3 * A)
        if denom <= 0:
            continue
        coef = float(np.sum(g[fn.atom_index] * fn.values * mu.weights[fn.atom_index]))
        total += coef * coef / denom
    return total / norm2


@dataclass
class GoalAReport:
    rows: list[dict]
    min_ratio: float


def goal_a_test(mu: Measure, cubes, family, A: float, s: float, delta: float | None = None,
                scaled: bool = True) -> GoalAReport:
    """max over the family of Theta(Q), relative to D(Q) mu(Q), for each cube."""
    rows = []
    for q in cubes:
        mass = q.mass(mu)
        if mass <= 0:
            continue
        dens = mass / q.side ** s
        best, arg, resid, nodes = 0.0, -1, 0.0, 0
        for j, phi in enumerate(family):
            try:
                r = theta(mu, q, phi, A, s, scaled=scaled)
            except DomainError:
                continue
            if r.value > best or arg < 0:
                best, arg, resid, nodes = r.value, j, r.lp_residual, r.n_nodes
        ratio = best / (dens * mass)
        rows.append({"cube": q.code(), "theta": best, "ratio": ratio, "phi_index": arg,
                     "lp_residual": resid, "n_nodes": nodes, "passes": None if delta is None else ratio >= delta})
    min_ratio = min((r["ratio"] for r in rows), default=float("nan"))
    return GoalAReport(rows, min_ratio)
