"""Command-line entry point: ``wolffczo <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments
from .experiments import HEADERS, ConfigError, ExperimentConfig, _csv_text
from .lattice import Cube, LatticeView, default_levels
from .measure import DomainError, ParameterError, generate, read_points, write_points
from .operators import OddBump, bump_family, operator_norm, parse_kernel
from .oscillation import theta
from .reflectionless import StructureHypothesis, verify_structure
from .selection import select_downward, select_upward


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _levels(arg: str | None, mu):
    if not arg:
        return default_levels(mu)
    lo, _, hi = arg.partition(":")
    return int(lo), int(hi)


def parse_family(spec: str, d: int) -> list[OddBump]:
    """``bumps:<k>`` (k bumps of growing support) or ``bump:<M>`` (one bump)."""
    kind, _, arg = spec.partition(":")
    if kind == "bumps":
        return bump_family(int(arg or 3), d)
    if kind == "bump":
        return [OddBump(M=float(arg or 1.0))]
    raise ValueError(f"unknown bump family {spec!r}")


def cmd_measure_gen(args) -> int:
    spec = json.loads(Path(args.spec).read_text())
    mu = generate(spec)
    write_points(mu, args.out)
    print(f"wrote {len(mu)} atoms (d={mu.d}, mass={mu.total_mass:.6g}) to {args.out}", file=sys.stderr)
    return 0


def cmd_select(args) -> int:
    mu = read_points(args.measure)
    view = LatticeView(mu, *_levels(args.levels, mu))
    up = select_upward(view, args.s, args.eps)
    down = select_downward(view, up, args.s, args.eps)
    for w in down.warnings:
        print(f"warning: {w}", file=sys.stderr)
    dens = view.densities(args.s)
    rows = []
    for j, q in enumerate(view.cubes):
        cert = up.certificates.get(q)
        rows.append([q.code(), view.mass[j], dens[j], q in up.selected_set, q in down.selected_set,
                     "" if cert is None else cert.code()])
    _emit(_csv_text(HEADERS["select"][:6], rows), args.out)
    print(f"retention D_sel={up.retention:.6g} D_hat={down.retention:.6g}", file=sys.stderr)
    return 0


def cmd_czo_norm(args) -> int:
    mu = read_points(args.measure)
    K = parse_kernel(args.kernel, args.s, seed=args.seed)
    eps = mu.r_min if args.epsilon is None else args.epsilon
    est = operator_norm(K, mu, eps, iters=args.iters, seed=args.seed)
    row = [Path(args.measure).stem, args.kernel, len(mu), est.norm, est.residual]
    _emit(_csv_text(HEADERS["czo-norm"][:5], [row]), args.out)
    return 0


def cmd_theta(args) -> int:
    mu = read_points(args.measure)
    q = Cube.parse(args.cube)
    if q.d != mu.d:
        raise DomainError(f"cube {args.cube} has dimension {q.d}, measure has {mu.d}")
    mass = q.mass(mu)
    norm = mass * mass / q.side ** args.s
    rows = []
    for j, phi in enumerate(parse_family(args.family, mu.d)):
        r = theta(mu, q, phi, args.A, args.s)
        rows.append([q.code(), j, r.value, r.value / norm if norm > 0 else float("nan"),
                     r.lp_residual, r.n_nodes])
    _emit(_csv_text(HEADERS["theta"][:6], rows), args.out)
    return 0


def cmd_reflect_verify(args) -> int:
    mu = read_points(args.measure)
    data = json.loads(Path(args.hyp).read_text())
    hyp = StructureHypothesis.from_dict(data)
    window = data.get("window")
    rep = verify_structure(mu, hyp, args.tol, window=window, radius=data.get("radius"))
    status = "PASS" if rep.passed else "FAIL"
    print(f"structure {status}: k={hyp.k}, |E|={len(hyp.offsets)}, checked={rep.checked}, "
          f"violations={len(rep.violations)}", file=sys.stderr)
    rows = [[v["check"], v["location"], v["magnitude"]] for v in rep.violations]
    _emit(_csv_text(HEADERS["violations"][:3], rows), args.out)
    return 0 if rep.passed else 1


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    res = experiments.run(cfg, args.out, jobs=args.jobs)
    for e in res.errors:
        print(f"error at point {e['index']} ({e['measure_id']}, n={e['n']}): {e['error']}", file=sys.stderr)
    for r in res.equivalence:
        slopes = ", ".join(f"{k}={v.slope:.4g} ({v.label})" for k, v in r.verdicts.items())
        print(f"{r.family}: {r.verdict} [expected {r.expected}] {slopes}")
    print(f"outputs in {args.out}; {'PASS' if res.passed else 'FAIL'}")
    return 0 if res.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wolffczo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("measure", help="measure generation").add_subparsers(dest="action", required=True)
    g = m.add_parser("gen", help="write a generated measure as a point-cloud file")
    g.add_argument("--spec", required=True, help="JSON file with family and params")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_measure_gen)

    s = sub.add_parser("select", help="domination selection on the triple lattice")
    s.add_argument("--measure", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--s", type=float, default=0.5)
    s.add_argument("--levels", help="m_min:m_max (default: from the cloud's scales)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_select)

    c = sub.add_parser("czo", help="singular integral operators").add_subparsers(dest="action", required=True)
    n = c.add_parser("norm", help="truncated operator norm on L^2(mu)")
    n.add_argument("--measure", required=True)
    n.add_argument("--kernel", default="riesz", help="riesz | smooth:<M> | random:<M>,<n0>")
    n.add_argument("--s", type=float, default=0.5)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--epsilon", type=float, help="truncation radius (default: r_min of the cloud)")
    n.add_argument("--iters", type=int, default=1000)
    n.add_argument("--out")
    n.set_defaults(func=cmd_czo_norm)

    t = sub.add_parser("theta", help="Lipschitz oscillation coefficient of one cube")
    t.add_argument("--measure", required=True)
    t.add_argument("--cube", required=True, help="m:k1,...,kd")
    t.add_argument("--A", type=float, default=2.0)
    t.add_argument("--family", default="bumps:3", help="bumps:<k> | bump:<M>")
    t.add_argument("--s", type=float, default=0.5)
    t.add_argument("--out")
    t.set_defaults(func=cmd_theta)

    r = sub.add_parser("reflect", help="reflectionless structure").add_subparsers(dest="action", required=True)
    v = r.add_parser("verify", help="check a cloud against a plane-union hypothesis (exit 1 on violations)")
    v.add_argument("--measure", required=True)
    v.add_argument("--hyp", required=True, help="JSON with basis, offsets, f (optional window, radius)")
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--out")
    v.set_defaults(func=cmd_reflect_verify)

    e = sub.add_parser("run", help="run an experiment config (exit 0 iff all verdicts pass)")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError, DomainError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
