"""Command-line front end.

    slq solve      --scenario FILE --out DIR
    slq simulate   --scenario FILE --out DIR [--paths N] [--dump-paths]
    slq verify     --scenario FILE --out DIR [--paths N]
    slq convexity  --scenario FILE --out DIR [--eps0 X]
    slq refine     --scenario FILE --out DIR --dims 2,4,6,8 [--grids ...]

Exit codes: 0 success, 1 I/O / configuration / numerical fault, 2 not
certified (or non-monotone refinement), 3 statistical rejection in
``verify``, 4 inconclusive convexity.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import convexity
from .errors import ConfigError, KNotInvertible, SLQError
from .riccati import _jsonable, riccati_iterate
from .sde import (Feedback, OpenLoop, estimate_cost, simulate, verify_value_function,
                  write_ensemble_csv, write_trajectories_csv)
from .spectral import load_scenario, project_scenario

EXIT_OK, EXIT_FAULT, EXIT_UNCERTIFIED, EXIT_REJECTED, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4
CONVEXITY_EXIT = {convexity.CERTIFIED: EXIT_OK, convexity.AGAINST: EXIT_UNCERTIFIED,
                  convexity.INCONCLUSIVE: EXIT_INCONCLUSIVE}
REFINE_SLACK = 0.10


def _ints(text):
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text}") from exc


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scenario(args):
    sc = load_scenario(args.scenario)
    if args.seed_override is not None:
        sc = replace(sc, seed=args.seed_override)
    if args.grids and args.command != "refine":
        sc = sc.regrid(args.grids[0])
    return sc


def _threads(args):
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("SLQ_THREADS", "1"))


def _solve(sc, args):
    return riccati_iterate(sc, tol=args.tol, max_iter=args.max_iter, rank_tol=args.rank_tol)


def cmd_solve(args, out: Path) -> int:
    sc = _scenario(args)
    try:
        sol = _solve(sc, args)
    except KNotInvertible as exc:
        print(f"not certified: {exc}", file=sys.stderr)
        _write_json(out / "certificate.json", {
            "schema": 1, "kind": "EvidenceAgainst", "j": exc.j, "node": exc.node,
            "kmin": exc.kmin, "reason": str(exc)})
        return EXIT_UNCERTIFIED
    sol.write(out)
    cert = sol.certificate
    print(f"{cert.kind}: kmin={cert.kmin:.6g} pmin={cert.pmin:.6g} "
          f"iterations={sol.iterations} P(t0)-value={sol.value():.10g}")
    return EXIT_OK if cert.certified else EXIT_UNCERTIFIED


def cmd_simulate(args, out: Path) -> int:
    sc = _scenario(args)
    n_paths = args.paths or sc.mc_paths
    if args.policy == "zero":
        policy = OpenLoop(np.zeros((sc.grid.m + 1, sc.k)))
    else:
        try:
            sol = _solve(sc, args)
        except KNotInvertible as exc:
            print(f"no feedback available: {exc}", file=sys.stderr)
            return EXIT_UNCERTIFIED
        policy = Feedback(sol.theta)
    ens = simulate(sc, policy, n_paths, keep_paths=args.dump_paths, threads=_threads(args))
    est = estimate_cost(sc, policy, ens)
    with open(out / "ensemble.csv", "w", newline="") as fh:
        write_ensemble_csv(fh, sc, ens)
    if args.dump_paths:
        with open(out / "trajectories.csv", "w", newline="") as fh:
            write_trajectories_csv(fh, ens)
    _write_json(out / "cost.json", {"schema": 1, "policy": policy.kind, "mean": est.mean,
                                    "stderr": est.stderr, "bias": est.bias,
                                    "extrapolated": est.extrapolated,
                                    "extrapolated_stderr": est.extrapolated_stderr,
                                    "n_paths": est.n_paths, "exact": est.exact,
                                    "seed": ens.seed})
    print(f"{policy.kind} cost {est.estimate:.10g} +/- {est.scale:.3g} ({n_paths} paths)")
    return EXIT_OK


def cmd_verify(args, out: Path) -> int:
    sc = _scenario(args)
    try:
        sol = _solve(sc, args)
    except KNotInvertible as exc:
        print(f"not certified: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    n_paths = args.paths or sc.mc_paths
    rep = verify_value_function(sc, sol, n_paths, n_perturb=args.perturbations,
                                n_margin=args.margins, threads=_threads(args),
                                inject_bias=args.inject_bias)
    _write_json(out / "verify.json", rep.to_dict())
    cl = rep.closed_loop
    print(f"value {rep.value:.10g}  MC {cl.estimate:.10g} +/- {cl.scale:.3g}  "
          f"z={rep.z_value:.3f}  max|z|={rep.max_abs_z:.3f}")
    return EXIT_OK if rep.ok else EXIT_REJECTED


def cmd_convexity(args, out: Path) -> int:
    sc = _scenario(args)
    rep = convexity.assess(sc, tol=args.tol, max_iter=args.max_iter, eps0=args.eps0,
                           basis_size=args.basis_size)
    with open(out / "convexity.json", "w") as fh:
        json.dump(_jsonable(rep.to_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{rep.verdict} lambda={rep.lam} witness={rep.witness} "
          f"hessian_lambda_min={rep.hessian_lambda_min}")
    return CONVEXITY_EXIT[rep.verdict]


def refine_study(sc, dims, grids=None, full_path=False, tol=1e-9, max_iter=50,
                 rank_tol=1e-10):
    """Discrepancy of each truncation against the finest one.

    For each grid, compares ``P_{n_i}`` with the leading ``n_i x n_i`` block of
    ``P_{n_max}`` (at ``t0``, or sup over nodes with ``full_path``).
    Returns rows ``(n, m, discrepancy)`` and whether every column is
    non-increasing within 10% slack.
    """
    if len(dims) < 2 or any(b <= a for a, b in zip(dims, dims[1:])):
        raise ConfigError("refine needs at least two strictly increasing dims")
    if dims[0] < 1 or dims[-1] > sc.n:
        raise ConfigError(f"dims must lie in 1..{sc.n}")
    rows, ok = [], True
    for m in grids or [sc.grid.m]:
        base = sc if m == sc.grid.m else sc.regrid(m)
        sols = {n: riccati_iterate(project_scenario(base, n), tol=tol, max_iter=max_iter,
                                   rank_tol=rank_tol).P.values for n in dims}
        ref = sols[dims[-1]]
        disc = []
        for n in dims:
            d = sols[n] - ref[:, :n, :n]
            norms = np.linalg.norm(d, axis=(1, 2))
            disc.append(float(norms.max() if full_path else norms[0]))
            rows.append((n, m, disc[-1]))
        ok &= all(b <= (1 + REFINE_SLACK) * a + 1e-12 for a, b in zip(disc, disc[1:]))
    return rows, ok


def cmd_refine(args, out: Path) -> int:
    sc = _scenario(args)
    if not args.dims:
        raise ConfigError("refine needs --dims")
    rows, ok = refine_study(sc, args.dims, args.grids, args.full_path, args.tol,
                            args.max_iter, args.rank_tol)
    with open(out / "refine.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "m", "discrepancy"])
        for n, m, d in rows:
            w.writerow([n, m, format(d, ".17g")])
    for n, m, d in rows:
        print(f"n={n:3d} m={m:6d} discrepancy={d:.6e}")
    if not ok:
        print("discrepancies not monotone", file=sys.stderr)
    return EXIT_OK if ok else EXIT_UNCERTIFIED


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify,
            "convexity": cmd_convexity, "refine": cmd_refine}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slq", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", required=True, help="TOML or JSON scenario file")
        s.add_argument("--out", default=".", help="artifact directory")
        s.add_argument("--paths", type=int, default=None)
        s.add_argument("--seed-override", type=int, default=None)
        s.add_argument("--tol", type=float, default=1e-9)
        s.add_argument("--max-iter", type=int, default=50)
        s.add_argument("--rank-tol", type=float, default=1e-10)
        s.add_argument("--dims", type=_ints, default=None)
        s.add_argument("--grids", type=_ints, default=None)
        s.add_argument("--threads", type=int, default=None)
        s.add_argument("--inject-bias", type=float, default=0.0, help=argparse.SUPPRESS)
        if name == "simulate":
            s.add_argument("--policy", choices=["feedback", "zero"], default="feedback")
            s.add_argument("--dump-paths", action="store_true")
        if name == "verify":
            s.add_argument("--perturbations", type=int, default=20)
            s.add_argument("--margins", type=int, default=50)
        if name == "convexity":
            s.add_argument("--eps0", type=float, default=None)
            s.add_argument("--basis-size", type=int, default=None)
        if name == "refine":
            s.add_argument("--full-path", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except (OSError, SLQError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
