"""Declarative sweeps over measures, CSV emission and the equivalence experiment."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .energy import growth_constant, scale_window, wolff_dyadic, wolff_integral
from .lattice import LatticeView, default_levels
from .measure import (DomainError, Measure, MeasureSpec, ParameterError, cantor,
                      cantor_ratio_for_dimension, generate, lebesgue_cube)
from .operators import OddBump, RieszKernel, SmoothKernel, bump_family, operator_norm, parse_kernel
from .oscillation import goal_a_test
from .reflectionless import StructureHypothesis, reflectionless_defect, verify_structure
from .selection import CapacityError, select_downward, select_upward

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TASKS = ("wolff", "czo-norm", "select", "theta", "reflect", "equivalence")
# dependency order: measure -> energy -> selection -> operators/oscillation -> reflectionless
TASK_ORDER = {"wolff": 0, "select": 1, "czo-norm": 2, "theta": 3, "reflect": 4, "equivalence": 5}

HEADERS = {
    "wolff": ["measure_id", "s", "n", "r_min", "r_max", "wolff_integral", "wolff_dyadic", "growth_constant"],
    "select": ["cube", "mass", "density", "in_Dsel", "in_Dhat", "certificate", "measure_id", "n", "s", "eps"],
    "czo-norm": ["measure_id", "kernel", "n", "norm", "residual", "s", "seed"],
    "theta": ["cube", "phi_index", "theta", "ratio", "lp_residual", "n_nodes", "measure_id", "n", "s", "A"],
    "reflect": ["measure_id", "n", "M", "defect", "structure_checked", "structure_passed", "violations"],
    "violations": ["check", "location", "magnitude", "measure_id", "n"],
    "equivalence": ["family", "n", "s", "wolff_per_mass", "riesz_norm_sq", "smooth_norm_sq_max",
                    "retention_sel", "retention_hat", "goal_a_min", "seed"],
}


class ConfigError(ValueError):
    pass


@dataclass
class MeasureEntry:
    id: str
    family: str
    params: dict[str, Any]
    sweep: str = "generation"       # which parameter the "n" values feed
    n: list[int] = field(default_factory=list)

    def spec_for(self, n: int | None) -> MeasureSpec:
        p = dict(self.params)
        if n is not None:
            p[self.sweep] = int(n)
        return MeasureSpec(self.family, p)


@dataclass
class ExperimentConfig:
    measures: list[MeasureEntry] = field(default_factory=list)
    tasks: list[str] = field(default_factory=list)
    s: list[float] = field(default_factory=lambda: [0.5])
    eps: list[float] = field(default_factory=lambda: [0.1])
    A: list[float] = field(default_factory=lambda: [2.0])
    seeds: list[int] = field(default_factory=lambda: [0])
    kernels: list[str] = field(default_factory=lambda: ["riesz"])
    bumps: int = 3
    reflect_M: float = 1.0
    equivalence: dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        entries = []
        for i, m in enumerate(data.pop("measures", [])):
            m = dict(m)
            if "family" not in m:
                raise ConfigError(f"measure #{i} has no family")
            entries.append(MeasureEntry(id=str(m.pop("id", f"m{i}")), family=m.pop("family"),
                                        params=dict(m.pop("params", {})),
                                        sweep=m.pop("sweep", "generation"),
                                        n=[int(v) for v in m.pop("n", [])]))
            if m:
                raise ConfigError(f"measure #{i}: unknown keys {sorted(m)}")

        def as_list(key, default):
            v = data.pop(key, default)
            return list(v) if isinstance(v, (list, tuple)) else [v]

        cfg = cls(measures=entries, tasks=list(data.pop("tasks", [])),
                  s=[float(v) for v in as_list("s", [0.5])],
                  eps=[float(v) for v in as_list("eps", [0.1])],
                  A=[float(v) for v in as_list("A", [2.0])],
                  seeds=[int(v) for v in as_list("seeds", [0])],
                  kernels=[str(v) for v in as_list("kernels", ["riesz"])],
                  bumps=int(data.pop("bumps", 3)),
                  reflect_M=float(data.pop("reflect_M", 1.0)),
                  equivalence=dict(data.pop("equivalence", {})))
        data.pop("out", None)
        if data:
            raise ConfigError(f"unknown config keys {sorted(data)}")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        for t in self.tasks:
            if t not in TASKS:
                raise ConfigError(f"unknown task {t!r}")
        for e in self.measures:
            for n in (e.n or [None])[:1]:
                try:
                    generate(e.spec_for(n))
                except (ParameterError, DomainError) as exc:
                    raise ConfigError(f"measure {e.id!r} does not resolve: {exc}") from exc
        if "equivalence" in self.tasks:
            s = self.equivalence.get("s", self.s[0])
            if float(s).is_integer():
                raise ConfigError("equivalence requires non-integer s")
        for a in self.A:
            if a <= 1:
                raise ConfigError("A must exceed 1")


# -- sweep points --------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    index: int
    entry: MeasureEntry
    n: int | None
    s: float
    eps: float
    A: float


def sweep_points(cfg: ExperimentConfig) -> list[SweepPoint]:
    out = []
    for entry in cfg.measures:
        for n, s, eps, A in itertools.product(entry.n or [None], cfg.s, cfg.eps, cfg.A):
            out.append(SweepPoint(len(out), entry, n, s, eps, A))
    return out


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def _levels_and_view(mu: Measure) -> LatticeView:
    return LatticeView(mu, *default_levels(mu))


def _run_point(cfg: ExperimentConfig, pt: SweepPoint) -> dict[str, list[list]]:
    tasks = sorted((t for t in cfg.tasks if t != "equivalence"), key=TASK_ORDER.get)
    rows: dict[str, list[list]] = {t: [] for t in tasks}
    if not tasks:
        return rows
    if "reflect" in tasks:
        rows["violations"] = []
    mid, n, s = pt.entry.id, pt.n, pt.s
    mu = generate(pt.entry.spec_for(n))
    view = _levels_and_view(mu) if {"wolff", "select", "theta"} & set(tasks) else None
    upward = None
    for task in tasks:
        if task == "wolff":
            r_lo, r_hi = scale_window(view)
            rows[task].append([mid, s, n, r_lo, r_hi, wolff_integral(mu, None, r_lo, r_hi, s),
                               wolff_dyadic(view, s), growth_constant(view, s)])
        elif task == "select":
            upward = select_upward(view, s, pt.eps)
            down = select_downward(view, upward, s, pt.eps)
            dens = view.densities(s)
            for j, q in enumerate(view.cubes):
                cert = upward.certificates.get(q)
                rows[task].append([q.code(), view.mass[j], dens[j], q in upward.selected_set,
                                   q in down.selected_set, "" if cert is None else cert.code(),
                                   mid, n, s, pt.eps])
        elif task == "czo-norm":
            eps_trunc = mu.r_min
            for spec in cfg.kernels:
                for seed in cfg.seeds:
                    K = parse_kernel(spec, s, seed=seed)
                    est = operator_norm(K, mu, eps_trunc, seed=seed)
                    rows[task].append([mid, spec, n, est.norm, est.residual, s, seed])
        elif task == "theta":
            if upward is None:
                upward = select_upward(view, s, pt.eps)
            cubes = sorted(upward.selected, key=lambda q: (q.level, q.corner))
            rep = goal_a_test(mu, cubes, bump_family(cfg.bumps, mu.d), pt.A, s)
            for r in rep.rows:
                rows[task].append([r["cube"], r["phi_index"], r["theta"], r["ratio"], r["lp_residual"],
                                   r["n_nodes"], mid, n, s, pt.A])
        elif task == "reflect":
            M = cfg.reflect_M
            phi = OddBump(M=M)
            lo, hi = mu.points.min(axis=0), mu.points.max(axis=0)
            checked, passed, nviol = False, "", 0
            if mu.meta.get("family") == "plane-lattice":
                lo, hi = lo + M, hi - M
                hyp = StructureHypothesis.from_plane_lattice(mu.meta)
                rep = verify_structure(mu, hyp, 1e-6, radius=2.5 / mu.meta["resolution"])
                checked, passed, nviol = True, rep.passed, len(rep.violations)
                for v in rep.violations:
                    rows["violations"].append([v["check"], v["location"], v["magnitude"], mid, n])
            rows[task].append([mid, n, M, reflectionless_defect(mu, phi, (lo, hi)), checked, passed, nviol])
    return rows


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _point_job(args):
    cfg_dict, pt_index, parts_dir = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    pt = sweep_points(cfg)[pt_index]
    try:
        rows = _run_point(cfg, pt)
        error = None
    except Exception as exc:  # a failing point must not abort the sweep
        rows, error = {}, f"{type(exc).__name__}: {exc}"
    payload = {"index": pt_index, "error": error,
               "rows": {k: [[_fmt(v) for v in r] for r in rs] for k, rs in rows.items()}}
    if parts_dir is not None:
        _write_atomic(Path(parts_dir) / f"point_{pt_index:05d}.json", json.dumps(payload))
    return payload


# -- equivalence ----------------------------------------------------------------

@dataclass
class Verdict:
    quantity: str
    slope: float
    reference_slope: float
    label: str          # growing | bounded | inconclusive


@dataclass
class EquivalenceReport:
    family: str
    s: float
    points: list[dict]
    verdicts: dict[str, Verdict]
    verdict: str        # violates both | satisfies both | cross | inconclusive
    expected: str
    reference: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == self.expected

    def summary(self) -> dict:
        return {"family": self.family, "s": self.s, "verdict": self.verdict, "expected": self.expected,
                "passed": self.passed,
                "slopes": {k: {"slope": v.slope, "reference": v.reference_slope, "label": v.label}
                           for k, v in self.verdicts.items()}}


FAMILIES = ("cantor-s", "cantor-t", "lebesgue")


def family_measure(family: str, s: float, n: int, t_offset: float = 0.3) -> Measure:
    """Member n of an equivalence family in dimension d = floor(s) + 1."""
    d = math.floor(s) + 1
    if family in ("cantor-s", "cantor-t"):
        ratio = cantor_ratio_for_dimension(s if family == "cantor-s" else s + t_offset, d)
        # midpoint quadrature of the continuum Cantor measure: each atom sits at
        # the centre of its generation-n cube rather than on a dyadic boundary
        return cantor(ratio, n, d, origin=np.full(d, 0.5 * ratio ** n))
    if family == "lebesgue":
        return lebesgue_cube(1.0, 2 ** n, d)
    raise ConfigError(f"unknown equivalence family {family!r}")


def fit_slope(n_values, values) -> float:
    n_values = np.asarray(n_values, dtype=float)
    if len(n_values) < 4:
        raise ConfigError("slope fits need at least 4 sweep points")
    return float(np.polyfit(n_values, np.asarray(values, dtype=float), 1)[0])


def classify(slope: float, reference: float, grow_frac: float = 0.5, bound_frac: float = 0.1) -> str:
    if reference <= 0:
        return "inconclusive"
    if slope > grow_frac * reference:
        return "growing"
    if abs(slope) < bound_frac * reference:
        return "bounded"
    return "inconclusive"


def _equivalence_point(family: str, s: float, n: int, seed: int, eps: float, goal_a: bool,
                       smooth_M=(1.0,)) -> dict:
    mu = family_measure(family, s, n)
    view = _levels_and_view(mu)
    mass = mu.total_mass
    trunc = mu.r_min
    riesz = operator_norm(RieszKernel(s), mu, trunc, seed=seed)
    smooth = max(operator_norm(SmoothKernel(OddBump(M=M, axis=0)), mu, trunc, seed=seed).norm ** 2
                 for M in smooth_M)
    up = select_upward(view, s, eps)
    try:
        retention_hat = select_downward(view, up, s, eps).retention
    except CapacityError as exc:
        log.warning("%s n=%d: %s", family, n, exc)
        retention_hat = float("nan")
    goal = float("nan")
    if goal_a:
        cubes = sorted(up.selected, key=lambda q: (q.level, q.corner))
        goal = goal_a_test(mu, cubes, bump_family(2, mu.d), 2.0, s).min_ratio
    return {"family": family, "n": n, "s": s, "wolff_per_mass": wolff_dyadic(view, s) / mass,
            "riesz_norm_sq": riesz.norm ** 2, "smooth_norm_sq_max": smooth,
            "retention_sel": up.retention, "retention_hat": retention_hat, "goal_a_min": goal,
            "seed": seed}


def _equivalence_rows(family, s, n_range, seeds, eps, goal_a):
    rows = []
    for n in n_range:
        pts = [_equivalence_point(family, s, n, seed, eps, goal_a) for seed in seeds]
        # the norm estimate is the max over seeds (power iteration underestimates)
        best = max(pts, key=lambda r: r["riesz_norm_sq"])
        rows.append(best)
    return rows


def equivalence_experiment(family: str, s: float, n_range=range(3, 7), seeds=(0,), eps: float = 0.1,
                           goal_a: bool = False, grow_frac: float = 0.5, bound_frac: float = 0.1,
                           reference_rows: list[dict] | None = None) -> EquivalenceReport:
    """Fit Wolff-per-mass and squared Riesz norm against n and classify both.

    Slopes are judged relative to the dimension-s Cantor family, which is
    known to violate both conditions.
    """
    if float(s).is_integer():
        raise ConfigError("equivalence requires non-integer s")
    if family not in FAMILIES:
        raise ConfigError(f"unknown equivalence family {family!r}")
    n_range = list(n_range)
    if len(n_range) < 4:
        raise ConfigError("slope fits need at least 4 sweep points")
    rows = _equivalence_rows(family, s, n_range, seeds, eps, goal_a)
    if family == "cantor-s":
        ref = rows
    elif reference_rows is not None:
        ref = reference_rows
    else:
        ref = _equivalence_rows("cantor-s", s, n_range, seeds, eps, False)
    verdicts = {}
    for q in ("wolff_per_mass", "riesz_norm_sq"):
        slope = fit_slope([r["n"] for r in rows], [r[q] for r in rows])
        rslope = fit_slope([r["n"] for r in ref], [r[q] for r in ref])
        verdicts[q] = Verdict(q, slope, rslope, classify(slope, rslope, grow_frac, bound_frac))
    labels = {v.label for v in verdicts.values()}
    if labels == {"growing"}:
        verdict = "violates both"
    elif labels == {"bounded"}:
        verdict = "satisfies both"
    elif labels == {"growing", "bounded"}:
        verdict = "cross"
    else:
        verdict = "inconclusive"
    expected = "violates both" if family == "cantor-s" else "satisfies both"
    return EquivalenceReport(family, s, rows, verdicts, verdict, expected, ref)


# -- driver -------------------------------------------------------------------

@dataclass
class RunResult:
    files: dict[str, Path]
    errors: list[dict]
    equivalence: list[EquivalenceReport]

    @property
    def passed(self) -> bool:
        return not self.errors and all(r.passed for r in self.equivalence)


def run(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> RunResult:
    """Execute every sweep point, then merge per-point results into one CSV per task."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = sweep_points(cfg)
    point_tasks = [t for t in cfg.tasks if t != "equivalence"]
    payloads = []
    if point_tasks and points:
        with tempfile.TemporaryDirectory(dir=out, prefix=".parts") as parts:
            args = [(cfg.to_dict(), p.index, parts) for p in points]
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    list(pool.map(_point_job, args))
            else:
                for a in args:
                    _point_job(a)
            for p in points:
                payloads.append(json.loads((Path(parts) / f"point_{p.index:05d}.json").read_text()))
    files: dict[str, Path] = {}
    errors = []
    merged: dict[str, list] = {}
    for pl in sorted(payloads, key=lambda x: x["index"]):
        if pl["error"]:
            pt = points[pl["index"]]
            log.error("sweep point %d (%s, n=%s) failed: %s", pl["index"], pt.entry.id, pt.n, pl["error"])
            errors.append({"index": pl["index"], "measure_id": pt.entry.id, "n": pt.n, "error": pl["error"]})
            continue
        for task, rs in pl["rows"].items():
            merged.setdefault(task, []).extend(rs)
    for task in sorted(set(merged) | set(point_tasks) | ({"violations"} if "reflect" in point_tasks else set())):
        path = out / f"{task.replace('-', '_')}.csv"
        _write_atomic(path, _csv_text(HEADERS[task], merged.get(task, [])))
        files[task] = path

    reports = []
    if "equivalence" in cfg.tasks:
        eq = cfg.equivalence
        s = float(eq.get("s", cfg.s[0]))
        n_range = list(eq.get("n", range(3, 7)))
        seeds = list(eq.get("seeds", cfg.seeds))
        ref = None
        rows = []
        for fam in eq.get("families", list(FAMILIES)):
            rep = equivalence_experiment(fam, s, n_range, seeds, eps=float(eq.get("eps", cfg.eps[0])),
                                         goal_a=bool(eq.get("goal_a", False)), reference_rows=ref)
            if fam == "cantor-s":
                ref = rep.points
            elif ref is None:
                ref = rep.reference
            reports.append(rep)
            rows.extend([[r[h] for h in HEADERS["equivalence"]] for r in rep.points])
        path = out / "equivalence.csv"
        _write_atomic(path, _csv_text(HEADERS["equivalence"], rows))
        files["equivalence"] = path

    summary = {"schema_version": SCHEMA_VERSION, "points": len(points), "errors": errors,
               "equivalence": [r.summary() for r in reports],
               "passed": not errors and all(r.passed for r in reports)}
    path = out / "summary.json"
    _write_atomic(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files["summary"] = path
    return RunResult(files, errors, reports)
