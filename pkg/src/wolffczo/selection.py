"""Upward domination and downward bunch domination on a lattice view.

``select_upward`` keeps the cubes that no larger cube dominates, and
``select_downward`` keeps the upward-selected cubes that no non-trivial
bunch of selected sub-cubes dominates.  Each rejected cube carries a
certificate that can be re-verified independently.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Cube, LatticeView, cubes_containing_cube

log = logging.getLogger(__name__)


class CapacityError(RuntimeError):
    pass


def _dominance_factor(eps: float, gap: int) -> float:
    return 2.0 ** (eps * gap)


def dominates_above(view: LatticeView, qp: Cube, q: Cube, s: float, eps: float) -> bool:
    """Q' is another cube containing Q with D(Q') >= 2^(eps [Q':Q]) D(Q)."""
    if qp == q or not qp.contains(q):
        return False
    gap = qp.level - q.level
    return view.density_of(qp, s) >= _dominance_factor(eps, gap) * view.density_of(q, s)


@dataclass
class SelectionResult:
    selected: list[Cube]
    certificates: dict[Cube, object]
    energy_total: float
    energy_selected: float
    warnings: list[str] = field(default_factory=list)
    heuristic: list[Cube] = field(default_factory=list)

    @property
    def retention(self) -> float:
        return self.energy_selected / self.energy_total if self.energy_total > 0 else 1.0

    def __contains__(self, q: Cube) -> bool:
        return q in self.selected_set

    @property
    def selected_set(self) -> set[Cube]:
        cached = getattr(self, "_sel_set", None)
        if cached is None:
            cached = set(self.selected)
            self._sel_set = cached
        return cached


def _energy(view: LatticeView, s: float, cubes) -> float:
    idx = np.fromiter((view.index[q] for q in cubes), dtype=int)
    if len(idx) == 0:
        return 0.0
    dens = view.densities(s)[idx]
    return float((dens ** 2 * view.mass[idx]).sum())


def search_levels(sup_density: float, density: float, eps: float) -> int:
    """Largest scale gap a dominator can have: (1/eps) log2(sup D / D(Q))."""
    if density <= 0:
        return 0
    return max(0, math.floor(math.log2(sup_density / density) / eps + 1e-12))


def select_upward(view: LatticeView, s: float, eps: float) -> SelectionResult:
    """Cubes of the view that no other view cube dominates from above.

    The certificate of a rejected cube is its dominator of largest side,
    ties broken by lexicographic corner; by transitivity it is selected.
    """
    dens = view.densities(s)
    sup = float(dens.max()) if len(dens) else 0.0
    selected, certs = [], {}
    overflow = 0
    for i, q in enumerate(view.cubes):
        if view.mass[i] <= 0:
            continue
        reach = search_levels(sup, dens[i], eps)
        if q.level + reach > view.m_max:
            overflow += 1
        best = None
        for m in range(min(view.m_max, q.level + reach), q.level, -1):
            factor = _dominance_factor(eps, m - q.level) * dens[i]
            hits = []
            for cand in cubes_containing_cube(q, m):
                j = view.index.get(cand)
                if j is not None and dens[j] >= factor:
                    hits.append(cand)
            if hits:
                best = min(hits, key=lambda c: c.corner)
                break
        if best is None:
            selected.append(q)
        else:
            certs[q] = best
    warnings = []
    if overflow:
        warnings.append(
            f"{overflow} cubes have a dominator search range beyond m_max={view.m_max}; "
            "selection is complete only relative to the view")
    return SelectionResult(selected, certs, _energy(view, s, view.cubes),
                           _energy(view, s, selected), warnings)


def select_upward_brute(view: LatticeView, s: float, eps: float) -> set[Cube]:
    """Exhaustive pairwise check, for small views."""
    out = set()
    for q in view.cubes:
        if view.mass_of(q) <= 0:
            continue
        if not any(dominates_above(view, p, q, s, eps) for p in view.cubes):
            out.add(q)
    return out


def doubling_check(mu, q: Cube, M: float, s: float, eps: float) -> float:
    """mu(MQ) / (M^(s+eps) mu(Q))."""
    from .measure import DomainError
    base = q.mass(mu)
    if base <= 0:
        raise DomainError(f"cube {q.code()} carries no mass")
    lo, hi = q.bounds(M)
    return mu.mass_box(lo, hi) / (M ** (s + eps) * base)


# -- bunches --------------------------------------------------------------

@dataclass
class Bunch:
    cubes: list[Cube]
    target: Cube
    heuristic: bool = False

    def violations(self, view: LatticeView, selected, s: float, eps: float) -> list[str]:
        """Names of the five bunch conditions this bunch fails."""
        out = []
        q = self.target
        dq = view.density_of(q, s)
        if any(c not in selected for c in self.cubes):
            out.append("(1) member not selected")
        if any(view.density_of(c, s) < _dominance_factor(eps, q.level - c.level) * dq for c in self.cubes):
            out.append("(2) density too small")
        for a in range(len(self.cubes)):
            for b in range(a + 1, len(self.cubes)):
                if not self.cubes[a].disjoint(self.cubes[b], factor=3):
                    out.append("(3) triples overlap")
                    break
            else:
                continue
            break
        if any(not q.contains(c, factor=3, other_factor=3) for c in self.cubes):
            out.append("(4) not inside 3Q")
        lhs = sum(view.density_of(c, s) ** 2 * 2.0 ** (-2 * eps * (q.level - c.level)) * view.mass_of(c)
                  for c in self.cubes)
        if lhs < dq ** 2 * view.mass_of(q):
            out.append("(5) energy too small")
        return out

    def is_trivial(self) -> bool:
        return self.cubes == [self.target]


def bunch_candidates(view: LatticeView, q: Cube, selected, s: float, eps: float,
                     by_level: dict[int, np.ndarray] | None = None) -> list[Cube]:
    """Selected cubes P != Q with 3P inside 3Q and D(P) >= 2^(eps [Q:P]) D(Q)."""
    dens = view.densities(s)
    dq = view.density_of(q, s)
    if dq <= 0:
        return []
    if by_level is None:
        by_level = _selected_by_level(view, selected)
    kq = np.asarray(q.corner, dtype=np.int64)
    out = []
    for m in range(view.m_min, q.level):
        idx = by_level.get(m)
        if idx is None or len(idx) == 0:
            continue
        t = q.level - m
        if t > 60:
            continue
        unit = 1 << t
        # 3P spans [k - 4, k + 5) in level-m units; 3Q spans [(kq - 4) unit, (kq + 5) unit)
        lo = (kq - 4) * unit + 4
        hi = (kq + 5) * unit - 5
        ks = view.corners[idx]
        inside = np.all((ks >= lo) & (ks <= hi), axis=1)
        need = _dominance_factor(eps, t) * dq
        ok = inside & (dens[idx] >= need)
        out.extend(view.cubes[j] for j in idx[ok])
    return out


def _selected_by_level(view: LatticeView, selected) -> dict[int, np.ndarray]:
    idx = np.array(sorted(view.index[c] for c in selected), dtype=int)
    out: dict[int, np.ndarray] = {}
    if len(idx) == 0:
        return out
    lv = view.levels[idx]
    for m in np.unique(lv):
        out[int(m)] = idx[lv == m]
    return out


def _conflicts(cubes: list[Cube]) -> np.ndarray:
    """conflict[a, b] iff 3P_a and 3P_b overlap."""
    n = len(cubes)
    if n == 0:
        return np.zeros((0, 0), dtype=bool)
    ref = min(c.level for c in cubes)
    lo = np.array([c.int_bounds(ref, 3)[0] for c in cubes], dtype=object)
    hi = np.array([c.int_bounds(ref, 3)[1] for c in cubes], dtype=object)
    sep = np.zeros((n, n), dtype=bool)
    for ax in range(lo.shape[1]):
        la, ha = lo[:, ax], hi[:, ax]
        sep |= (ha[:, None] <= la[None, :]) | (ha[None, :] <= la[:, None])
    conf = ~sep
    np.fill_diagonal(conf, False)
    return conf


def _max_weight_independent(weights: np.ndarray, conflict: np.ndarray, target: float,
                            node_budget: int = 2_000_000) -> tuple[list[int], bool]:
    """Branch and bound: a conflict-free subset reaching ``target`` if one exists.

    Returns (best subset found, exhausted) where ``exhausted`` is True if the
    search completed (so an empty/short answer is a proof of non-existence).
    """
    order = np.argsort(-weights, kind="stable")
    w = weights[order]
    conf = conflict[np.ix_(order, order)]
    suffix = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    best: list[int] = []
    best_val = -1.0
    nodes = 0
    n = len(w)

    def rec(i: int, chosen: list[int], val: float, blocked: np.ndarray) -> bool:
        nonlocal best, best_val, nodes
        nodes += 1
        if nodes > node_budget:
            return False
        if val > best_val:
            best, best_val = list(chosen), val
            if best_val >= target:
                return True
        if i >= n or val + suffix[i] <= best_val or val + suffix[i] < target:
            return best_val >= target
        if not blocked[i]:
            chosen.append(i)
            if rec(i + 1, chosen, val + w[i], blocked | conf[i]):
                return True
            chosen.pop()
        return rec(i + 1, chosen, val, blocked)

    import sys
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * n + 100))
    try:
        rec(0, [], 0.0, np.zeros(n, dtype=bool))
    finally:
        sys.setrecursionlimit(limit)
    exhausted = nodes <= node_budget
    return [int(order[i]) for i in best], exhausted


def _greedy_with_swaps(weights: np.ndarray, conflict: np.ndarray, target: float) -> list[int]:
    order = np.argsort(-weights, kind="stable")
    chosen: list[int] = []
    blocked = np.zeros(len(weights), dtype=bool)
    for i in order:
        if not blocked[i]:
            chosen.append(int(i))
            blocked |= conflict[i]
    val = weights[chosen].sum() if chosen else 0.0
    improved = True
    while val < target and improved:
        improved = False
        # 1-for-many swap: drop one chosen cube, refill greedily
        for drop in list(chosen):
            rest = [c for c in chosen if c != drop]
            blk = np.zeros(len(weights), dtype=bool)
            for c in rest:
                blk |= conflict[c]
            blk[drop] = True
            trial = list(rest)
            for i in order:
                if not blk[i] and i not in trial:
                    trial.append(int(i))
                    blk |= conflict[i]
            tv = weights[trial].sum()
            if tv > val + 1e-15 * max(1.0, abs(val)):
                chosen, val, improved = trial, tv, True
                break
    return chosen


def find_bunch(view: LatticeView, q: Cube, selected, s: float, eps: float,
               cap: int = 5000, exact_limit: int = 20,
               by_level: dict[int, np.ndarray] | None = None) -> Bunch | None:
    """A non-trivial bunch of selected cubes dominating Q from below, or None.

    Existence is decided exactly when a witness is found or when the
    candidate set has at most ``exact_limit`` members (branch and bound over
    all conflict-free subsets).  Larger candidate sets that greedy search
    cannot resolve fall back to greedy + swaps; a None answer is then marked
    by returning a Bunch with ``heuristic=True`` and no cubes.
    """
    cands = bunch_candidates(view, q, selected, s, eps, by_level)
    if not cands:
        return None
    if len(cands) > cap:
        raise CapacityError(f"cube {q.code()}: {len(cands)} bunch candidates exceed cap {cap}")
    dens = view.densities(s)
    idx = np.array([view.index[c] for c in cands])
    gaps = np.array([q.level - c.level for c in cands], dtype=float)
    contrib = dens[idx] ** 2 * 2.0 ** (-2 * eps * gaps) * view.mass[idx]
    target = view.density_of(q, s) ** 2 * view.mass_of(q)
    if contrib.sum() < target:
        return None
    conflict = _conflicts(cands)
    chosen = _greedy_with_swaps(contrib, conflict, target) if len(cands) > exact_limit else []
    if chosen and contrib[chosen].sum() >= target:
        return Bunch([cands[i] for i in sorted(chosen, key=lambda j: cands[j])], q)
    if len(cands) <= exact_limit:
        best, exhausted = _max_weight_independent(contrib, conflict, target)
        if best and contrib[best].sum() >= target:
            return Bunch([cands[i] for i in sorted(best, key=lambda j: cands[j])], q)
        if exhausted:
            return None
    # unresolved: no witness, search not exhaustive
    return Bunch([], q, heuristic=True)


def find_bunch_brute(view: LatticeView, q: Cube, selected, s: float, eps: float) -> bool:
    """Exhaustive subset oracle: does any non-empty candidate subset form a bunch?"""
    cands = bunch_candidates(view, q, selected, s, eps)
    if len(cands) > 16:
        raise CapacityError("brute-force bunch oracle limited to 16 candidates")
    sel = set(selected)
    for mask in range(1, 1 << len(cands)):
        sub = [cands[i] for i in range(len(cands)) if mask >> i & 1]
        if not Bunch(sub, q).violations(view, sel, s, eps):
            return True
    return False


def select_downward(view: LatticeView, upward: SelectionResult, s: float, eps: float,
                    cap: int = 5000, exact_limit: int = 20) -> SelectionResult:
    """Cubes of D_sel admitting no non-trivial dominating bunch."""
    by_level = _selected_by_level(view, upward.selected)
    sel = upward.selected_set
    kept, certs, heur = [], {}, []
    for q in upward.selected:
        if view.mass_of(q) <= 0:
            continue
        b = find_bunch(view, q, sel, s, eps, cap, exact_limit, by_level)
        if b is None:
            kept.append(q)
        elif b.heuristic and not b.cubes:
            kept.append(q)
            heur.append(q)
        else:
            certs[q] = b
    warnings = list(upward.warnings)
    if heur:
        warnings.append(f"{len(heur)} cubes kept by heuristic bunch search (not proven undominated)")
    return SelectionResult(kept, certs, _energy(view, s, upward.selected), _energy(view, s, kept),
                           warnings, heur)
