"""Command-line entry point: ``gsls {gen,synth,eval,bench,validate}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .bench import METHODS, ExperimentConfig, make_instance, run_benchmark
from .errors import GslsError
from .gss import GraphSymmetricSystem
from .lqr import FilterResponse, h2_cost, optimal_responses
from .sls import achieved_cost, cor1_bound, is_stabilizing, residual
from .synthesis import (
    NORM_MODES,
    SynthesisConfig,
    SynthesisOutcome,
    naive_projection,
    robust_projection,
    robust_sls_synthesize,
)
from .validation import run_validation


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _clean(obj):
    """Replace non-finite floats by their ``repr`` so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def _emit(obj):
    print(json.dumps(_clean(obj), indent=2, allow_nan=False))


def _synth_flags(p):
    p.add_argument("--hops", "-F", type=int, default=3, help="number of hop taps F")
    p.add_argument("--fir-len", type=int, default=10)
    p.add_argument("--gamma", type=float, default=0.98)
    p.add_argument("--norm-mode", choices=NORM_MODES, default="hinf_grid")
    p.add_argument("--grid-size", type=int, default=1024)
    p.add_argument("--margin", type=float, default=0.005)
    p.add_argument("--solver-tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--bisect-gamma", action="store_true")


def build_parser():
    parser = _Parser(prog="gsls", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a random system to a JSON file")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--nodes", type=int, default=10)
    g.add_argument("--k-nearest", type=int, default=3)
    g.add_argument("--out", required=True)

    s = sub.add_parser("synth", help="synthesize one F-hop controller")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--system", help="system JSON written by gen")
    src.add_argument("--seed", type=int, help="generate the instance from this seed")
    s.add_argument("--nodes", type=int, default=10)
    s.add_argument("--k-nearest", type=int, default=3)
    s.add_argument("--method", choices=METHODS, required=True)
    s.add_argument("--out", help="write the response JSON here")
    _synth_flags(s)

    e = sub.add_parser("eval", help="costs and stability of a saved response")
    e.add_argument("--system", required=True)
    e.add_argument("--response", required=True)
    e.add_argument("--grid-size", type=int, default=1024)

    b = sub.add_parser("bench", help="run the seeded benchmark")
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--config", help="JSON file whose keys override the flags")
    b.add_argument("--trials", type=int, default=50)
    b.add_argument("--nodes", type=int, default=10)
    b.add_argument("--k-nearest", type=int, default=3)
    b.add_argument("--fir-len", type=int, default=10)
    b.add_argument("--gamma", type=float, default=0.98)
    b.add_argument("--f-min", type=int, default=1)
    b.add_argument("--f-max", type=int, default=None)
    b.add_argument("--methods", default=",".join(METHODS))
    b.add_argument("--grid-size", type=int, default=1024)
    b.add_argument("--margin", type=float, default=0.005)
    b.add_argument("--norm-mode", choices=NORM_MODES, default="hinf_grid")
    b.add_argument("--workers", type=int, default=None)
    b.add_argument("--out", default=".", help="output directory for the CSV files")

    v = sub.add_parser("validate", help="run the property suite on random instances")
    v.add_argument("--trials", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--nodes", type=int, default=6)
    return parser


def _load_system(path) -> GraphSymmetricSystem:
    return GraphSymmetricSystem.from_json(Path(path).read_text())


def _evaluate(gss, response, grid_size=1024):
    res = residual(gss, response)
    stab = is_stabilizing(res, grid_size)
    nominal = h2_cost(gss, response)
    return {
        "certified": stab.certified,
        "exact_stable": stab.exact,
        "stability_margin": stab.margin,
        "delta_norm_upper": stab.hinf_upper,
        "nominal_cost": nominal,
        "achieved_cost": achieved_cost(gss, response, res) if stab.exact else math.inf,
        "cor1_bound": cor1_bound(nominal, stab.hinf_upper),
    }


def cmd_gen(args):
    gss = make_instance(args.seed, args.nodes, args.k_nearest)
    Path(args.out).write_text(gss.to_json())
    _emit({"out": args.out, "n": gss.n, "edges": len(gss.gmd.edges), "diameter": gss.gmd.diameter()})


def cmd_synth(args):
    gss = _load_system(args.system) if args.system else make_instance(args.seed, args.nodes, args.k_nearest)
    opt = optimal_responses(gss, args.fir_len)
    if args.method == "naive":
        resp = naive_projection(gss, opt, args.hops)
        outcome = SynthesisOutcome("feasible", resp, diagnostics={"method": "naive"})
    else:
        cfg = SynthesisConfig(
            f_hops=args.hops, fir_len=args.fir_len, gamma=args.gamma, norm_mode=args.norm_mode,
            grid_size=args.grid_size, constraint_margin=args.margin, solver_tol=args.solver_tol,
            max_iters=args.max_iters, bisect_gamma=args.bisect_gamma,
        )
        outcome = robust_sls_synthesize(gss, cfg) if args.method == "robust_sls" else robust_projection(gss, opt, cfg)
    report = outcome.to_dict()
    report["method"] = args.method
    if args.method == "naive":
        report["status"] = "projected"
    if outcome.response is not None:
        report.update(_evaluate(gss, outcome.response, args.grid_size))
        if args.out:
            Path(args.out).write_text(outcome.response.to_json())
    _emit(report)


def cmd_eval(args):
    gss = _load_system(args.system)
    resp = FilterResponse.from_json(Path(args.response).read_text())
    _emit(_evaluate(gss, resp, args.grid_size))


def cmd_bench(args):
    f_max = args.f_max if args.f_max is not None else args.nodes
    data = {
        "n_nodes": args.nodes,
        "k_nearest": args.k_nearest,
        "n_trials": args.trials,
        "fir_len": args.fir_len,
        "gamma": args.gamma,
        "f_range": list(range(args.f_min, f_max + 1)),
        "methods": [m.strip() for m in args.methods.split(",") if m.strip()],
        "seed": args.seed,
        "grid_size": args.grid_size,
        "margin": args.margin,
        "norm_mode": args.norm_mode,
        "output_path": args.out,
        "workers": args.workers,
    }
    if args.config:
        data.update(json.loads(Path(args.config).read_text()))
    result = run_benchmark(ExperimentConfig.from_dict(data))
    _emit({"out": str(args.out), "fig1": result.fig1, "fig2": result.fig2,
           "status_counts": result.metadata["status_counts"]})


def cmd_validate(args):
    checks = run_validation(args.trials, args.seed, args.nodes)
    _emit([{"name": c.name, "passed": c.passed, "worst": c.worst, "tol": c.tol} for c in checks])
    return 0 if all(c.passed for c in checks) else 1


COMMANDS = {"gen": cmd_gen, "synth": cmd_synth, "eval": cmd_eval, "bench": cmd_bench, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
        return COMMANDS[args.command](args) or 0
    except CliError as exc:
        print(json.dumps({"error": "InvalidArgs", "message": str(exc)}), file=sys.stderr)
        return 2
    except (GslsError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
