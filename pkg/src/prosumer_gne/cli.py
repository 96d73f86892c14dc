"""Command-line front end: ``prosumer-gne {solve,oracle,eta-sweep,verify}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import equivalent, runtime, verify
from .errors import InfeasibleError, NotPDError, ScenarioError
from .scenarios import BUILTINS, ScenarioFile, builtin

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_INFEASIBLE = 0, 1, 2, 3
DEFAULT_SWEEP = (0.0, 0.1, 0.2, 0.33)
SWEEP_TARGET = 0.01

log = logging.getLogger("prosumer_gne")


def _load(args) -> ScenarioFile:
    if args.scenario is not None:
        return ScenarioFile.load(args.scenario)
    return builtin(args.builtin)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def _tolerances(sf, args, **extra):
    return sf.tolerances(max_iter=args.max_iter, kkt=args.tol, consensus=args.tol, **extra)


def cmd_solve(args) -> int:
    sf = _load(args)
    scenario = sf.to_instance()
    steps = sf.step_sizes(scenario.graph, eta=args.eta)
    ref = equivalent.solve_scenario(scenario)
    rep = runtime.run_sgne(scenario, steps, _tolerances(sf, args), reference=ref.point.p, audit=args.audit)
    out = _out_dir(args)
    report = rep.to_dict()
    report["oracle_rel_err_inf"] = float(np.abs(rep.p - ref.point.p).max() / max(1.0, np.abs(ref.point.p).max()))
    _write_json(out / "report.json", report)
    rep.write_trace_csv(out / "trace.csv")
    print(f"{rep.stop_reason} after {rep.iterations} iterations; mu_c={rep.mu_c:.6g}")
    print("p = " + ", ".join(f"{x:.4f}" for x in rep.p))
    if args.audit:
        print(f"locality audit: {'ok' if rep.audit.ok else 'VIOLATED'}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_oracle(args) -> int:
    sf = _load(args)
    scenario = sf.to_instance()
    rep = equivalent.solve_scenario(scenario, tol=args.tol if args.tol is not None else 1e-10)
    pt = rep.point
    report = {
        "method": "oracle",
        "p": pt.p.tolist(),
        "b": rep.b_star.tolist(),
        "mu_c": pt.mu_c,
        "lam": pt.lam.tolist(),
        "iterations": rep.bisection_iters,
        "stop_reason": runtime.CONVERGED,
        "residuals": {"res_kkt": rep.kkt_residual},
    }
    _write_json(_out_dir(args) / "report.json", report)
    print(f"oracle: mu_c={pt.mu_c:.6g} after {rep.bisection_iters} bisections; kkt={rep.kkt_residual:.3e}")
    print("p = " + ", ".join(f"{x:.4f}" for x in pt.p))
    return EXIT_OK


def sweep(sf: ScenarioFile, etas, max_iter=200_000, target=SWEEP_TARGET, out=None):
    """Iterations to reach ``target`` relative error for each inertia value.

    Returns rows ``(eta, iterations or None, report)`` in sorted-eta order.
    """
    scenario = sf.to_instance()
    ref = equivalent.solve_scenario(scenario).point.p
    rows = []
    for eta in sorted(etas):
        steps = sf.step_sizes(scenario.graph, eta=eta)
        stop = runtime.StopTolerances(max_iter=max_iter, rel_err_target=target)
        rep = runtime.run_sgne(scenario, steps, stop, reference=ref)
        if out is not None:
            rep.write_trace_csv(Path(out) / f"trace_eta_{eta:g}.csv")
        rows.append((eta, rep.iterations_to(target), rep))
    return rows


def is_monotone(rows) -> bool:
    counts = [it for _, it, _ in rows]
    if any(c is None for c in counts):
        return False
    return all(b <= a for a, b in zip(counts, counts[1:]))


def cmd_eta_sweep(args) -> int:
    sf = _load(args)
    etas = args.eta or list(DEFAULT_SWEEP)
    out = _out_dir(args)
    rows = sweep(sf, etas, max_iter=args.max_iter or 200_000, out=out)
    base = rows[0][1]
    with (out / "eta_sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("eta", "iterations", "converged", "ratio"))
        for eta, it, _ in rows:
            ratio = "" if it is None or not base else f"{it / base:.4f}"
            w.writerow((repr(float(eta)), "" if it is None else it, it is not None, ratio))
            print(f"eta={eta:<8g} iterations={'NonConvergent' if it is None else it:<14} ratio={ratio}")
    mono = is_monotone(rows)
    print(f"monotone nonincreasing: {'yes' if mono else 'no'}")
    return EXIT_OK if mono else EXIT_NOT_CONVERGED


def cmd_verify(args) -> int:
    sf = _load(args)
    results = verify.run_suite(sf, seed=args.seed, max_iter=args.max_iter or 200_000)
    sys.stdout.write(verify.summary(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NOT_CONVERGED


COMMANDS = {"solve": cmd_solve, "oracle": cmd_oracle, "eta-sweep": cmd_eta_sweep, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prosumer-gne", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=name != "eta-sweep")
        src.add_argument("--scenario", metavar="PATH", help="scenario JSON file")
        src.add_argument("--builtin", metavar="NAME", choices=sorted(BUILTINS),
                         default="ieee123" if name == "eta-sweep" else None)
        if name == "eta-sweep":
            p.add_argument("--eta", type=float, action="append", metavar="F",
                           help="inertia value (repeatable); default 0, 0.1, 0.2, 0.33")
        else:
            p.add_argument("--eta", type=float, metavar="F", help="override the scenario's inertia")
        p.add_argument("--max-iter", type=int, metavar="N")
        p.add_argument("--tol", type=float, metavar="F",
                       help="KKT and consensus tolerance (bisection tolerance for oracle)")
        p.add_argument("--out", default=".", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, metavar="N", help="sampling seed for verify")
        p.add_argument("--audit", action="store_true", help="record and check message locality")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ScenarioError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NotPDError as exc:
        print(f"invalid step sizes: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
