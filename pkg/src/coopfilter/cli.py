"""Command-line front end.

Subcommands: ``dare``, ``run``, ``ensemble``, ``check``, ``improvement``.
Exit codes: 0 ok, 1 usage or input error, 2 numerical failure,
3 invariant failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import check_improvement, improvement_sweep, run_invariant_suite
from .exceptions import NumericalError
from .experiments import build_model, resolve_config, run_scenario, window_configs
from .riccati import solve_centralized, solve_local

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3
_NUMERIC_ERRORS = {"NumericalError", "FactorizationError", "ConvergenceError"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(payload, out_dir, name):
    text = json.dumps(payload, indent=2, sort_keys=True, default=str)
    print(text)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")


def _need_model(cfg):
    model = build_model(cfg)
    if model is None:
        raise ValueError(f"scenario {cfg['scenario']!r} has no model; this command needs one")
    return model


def _steady_summary(model, steady):
    C, R = model.C, model.R
    return {
        "P": steady.P.tolist(),
        "L": steady.L.tolist(),
        "CPC^T+R": (C @ steady.P @ C.T + R).tolist(),
        "trace_P": float(np.trace(steady.P)),
        "rho_closed_loop": steady.rho_cl,
        "iterations": steady.iterations,
        "residual": steady.residual,
    }


def cmd_dare(cfg, args):
    model = _need_model(cfg)
    payload = {
        "config": cfg,
        "local": _steady_summary(model, solve_local(model)),
        "centralized": _steady_summary(model, solve_centralized(model)),
    }
    _emit(payload, args.out, "dare.json")
    return EXIT_OK


def cmd_run(cfg, args):
    out = Path(cfg["out"])
    window_configs(cfg)  # validate before fanning out
    agg = run_scenario(cfg, out)
    summary = {"out": str(out), "seeds": agg["seeds"], "errors": agg["errors"]}
    for key in ("R", "R_tilde", "gap"):
        if key in agg:
            summary[f"median_{key}_at_epoch_end"] = agg[key]["median"]
    print(json.dumps(summary, indent=2, default=str))
    if agg["errors"] and len(agg["errors"]) == len(agg["seeds"]):
        for msg in agg["errors"].values():
            print(f"coopfilter: {msg}", file=sys.stderr)
        numeric = all(msg.split(":", 1)[0] in _NUMERIC_ERRORS for msg in agg["errors"].values())
        return EXIT_NUMERIC if numeric else EXIT_USAGE
    return EXIT_OK


def cmd_check(cfg, args):
    model = build_model(cfg)
    ck = cfg["check"]
    cf = cfg["cofilter"]
    pe = None
    if model is not None:
        pe = {"beta": cf["beta"][0], "d": cfg["d"], "lam": cf["lam"], "T_init": cf["T_init"],
              "N_E": cf["N_E"]}
    suite = run_invariant_suite(
        model,
        d_max=int(ck["d_max"]),
        decay_d_max=int(ck["decay_d_max"]),
        orthogonality_delays=tuple(ck["orthogonality_delays"]),
        orthogonality_trials=int(ck["orthogonality_trials"]),
        orthogonality_length=int(ck["orthogonality_length"]),
        seed=int(cfg["monte_carlo"]["seed"]),
        pe_config=pe,
        d=int(cfg["d"]),
    )
    payload = {"config": cfg, **suite.to_dict()}
    _emit(payload, args.out, "check.json")
    for name, res in suite.checks.items():
        flag = "PASS" if res["passed"] else "FAIL"
        print(f"{flag} {name}", file=sys.stderr)
    return EXIT_OK if suite.passed else EXIT_INVARIANT


def cmd_improvement(cfg, args):
    model = _need_model(cfg)
    rep = check_improvement(model, int(cfg["d"]))
    payload = {"config": cfg, "report": rep.to_dict()}
    if args.sweep is not None:
        gaps = improvement_sweep(model, int(args.sweep))
        payload["sweep"] = {"d": list(range(len(gaps))), "trace_gap": gaps,
                            "nonincreasing": bool(np.all(np.diff(gaps) <= 1e-12))}
    _emit(payload, args.out, "improvement.json")
    return EXIT_OK


COMMANDS = {
    "dare": cmd_dare,
    "run": cmd_run,
    "ensemble": cmd_run,
    "check": cmd_check,
    "improvement": cmd_improvement,
}


def build_parser():
    parser = _Parser(prog="coopfilter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "dare": "solve local and centralized Riccati equations",
        "run": "simulate and run co-Filter against the model-based benchmarks",
        "ensemble": "run with a list of beta values (ensemble selection)",
        "check": "run the invariant suite; exit 3 on any failure",
        "improvement": "report the improvement certificate for the configured delay",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="YAML/JSON scenario file")
        p.add_argument("--scenario", help="override the scenario name")
        p.add_argument("--seed", type=int, help="base Monte Carlo seed")
        p.add_argument("--trials", type=int, help="number of Monte Carlo seeds")
        p.add_argument("--d", type=int, help="delay of the external channel")
        p.add_argument("--out", type=Path, help="output directory")
        if name == "ensemble":
            p.add_argument("--beta", type=float, nargs="+", help="beta grid")
        if name == "improvement":
            p.add_argument("--sweep", type=int, help="also report trace gaps for d = 0..SWEEP")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"scenario": args.scenario, "d": args.d,
                 "out": str(args.out) if args.out else None,
                 "monte_carlo": {k: v for k, v in (("seed", args.seed), ("trials", args.trials))
                                 if v is not None}}
    if getattr(args, "beta", None):
        overrides["cofilter"] = {"beta": args.beta}
    try:
        cfg = resolve_config(args.config, overrides)
        if args.command == "ensemble" and len(cfg["cofilter"]["beta"]) < 2:
            print("coopfilter: note: ensemble with a single beta is a plain run",
                  file=sys.stderr)
        return COMMANDS[args.command](cfg, args)
    except NumericalError as exc:
        print(f"coopfilter: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"coopfilter: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
