"""Scenario construction and Monte Carlo orchestration used by the CLI."""

from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .analysis import RegretTrace, benchmark_errors, regret
from .cofilter import (
    PredictionTrace,
    WindowConfig,
    epoch_start,
    max_epochs,
    required_length,
    run_ensemble,
)
from .model import SystemModel, example1, example2, load_model
from .riccati import delayed_chain
from .simulate import ObservationStream, Trajectory, gen_consensus_system, gen_trajectory
from .simulate import load_trajectory_csv

SCENARIOS = ("example1", "example2", "consensus", "csv_traffic", "custom")

DEFAULTS = {
    "scenario": "example1",
    "model": None,
    "n": 10,
    "system_seed": 0,
    "csv": {"path": None, "sigma": 0.1},
    "d": 1,
    "cofilter": {"beta": [2.0], "lam": 1.0, "T_init": 50, "N_E": 7},
    "monte_carlo": {"trials": 1, "seed": 0},
    "check": {"d_max": 10, "decay_d_max": 20, "orthogonality_trials": 2000,
              "orthogonality_length": 500, "orthogonality_delays": [1, 3]},
    "sweep": 10,
    "out": "results",
}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(path=None, overrides=None) -> dict:
    """Defaults, then the config file, then command-line overrides.

    A ``model`` given as a string is a path relative to the config file.
    """
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping")
        cfg = _merge(cfg, data)
        base_dir = Path(path).resolve().parent
    cfg = _merge(cfg, {k: v for k, v in (overrides or {}).items() if v is not None})
    if cfg["scenario"] not in SCENARIOS:
        raise ValueError(f"unknown scenario {cfg['scenario']!r}; choose from {SCENARIOS}")
    if isinstance(cfg["model"], str):
        p = Path(cfg["model"])
        cfg["model"] = str(p if p.is_absolute() else base_dir / p)
    csv_path = cfg["csv"].get("path")
    if csv_path and not Path(csv_path).is_absolute():
        cfg["csv"]["path"] = str(base_dir / csv_path)
    beta = cfg["cofilter"]["beta"]
    cfg["cofilter"]["beta"] = [float(b) for b in (beta if isinstance(beta, list) else [beta])]
    return cfg


def build_model(cfg: dict) -> SystemModel | None:
    """The configured system, or ``None`` for data-driven scenarios."""
    sc = cfg["scenario"]
    if sc == "example1":
        return example1()
    if sc == "example2":
        return example2()
    if sc == "consensus":
        return gen_consensus_system(int(cfg["n"]), int(cfg["system_seed"]))
    if sc == "custom":
        src = cfg["model"]
        if src is None:
            raise ValueError("scenario 'custom' needs a 'model' entry")
        return load_model(src) if isinstance(src, str) else SystemModel.from_dict(src)
    return None


def window_configs(cfg: dict, d: int | None = None, N_E: int | None = None) -> list:
    cf = cfg["cofilter"]
    d = cfg["d"] if d is None else d
    N_E = cf["N_E"] if N_E is None else N_E
    return [WindowConfig(beta=b, d=int(d), lam=float(cf["lam"]), T_init=int(cf["T_init"]),
                         N_E=int(N_E)) for b in cf["beta"]]


@dataclass
class TrialResult:
    seed: int
    trace: PredictionTrace
    regret: RegretTrace | None = None
    baseline: PredictionTrace | None = None


def run_model_trial(model: SystemModel, cfgs, seed: int, gram_every=None) -> TrialResult:
    """Simulate one run and score co-Filter against both model-based benchmarks."""
    d = cfgs[0].d
    N = required_length(cfgs[0].T_init, cfgs[0].N_E)
    traj = gen_trajectory(model, N, seed)
    trace = run_ensemble(ObservationStream(traj, d), cfgs, gram_every=gram_every)
    chain = delayed_chain(model, d)
    e_del, e_loc = benchmark_errors(model, traj, chain)
    return TrialResult(seed=seed, trace=trace, regret=regret(trace, e_del, e_loc))


def run_data_trial(traj: Trajectory, cfgs, gram_every=None) -> TrialResult:
    """Cooperative vs local-only online learners on data without a model.

    The local-only learner sees an empty external channel and no delay.
    """
    T_init = cfgs[0].T_init
    N_E = min(cfgs[0].N_E, max_epochs(len(traj), T_init))
    if N_E < 1:
        raise ValueError(f"trajectory of {len(traj)} steps is too short for T_init={T_init}")
    cfgs = [WindowConfig(c.beta, c.d, c.lam, c.T_init, N_E) for c in cfgs]
    trace = run_ensemble(ObservationStream(traj, cfgs[0].d), cfgs, gram_every=gram_every)
    empty = np.zeros(traj.y.shape[:-1] + (0,))
    local = Trajectory(x=None, y=traj.y, y_e=empty, seed=traj.seed, model_free_only=True)
    local_cfgs = [WindowConfig(c.beta, 0, c.lam, c.T_init, N_E) for c in cfgs]
    baseline = run_ensemble(ObservationStream(local, 0), local_cfgs)
    return TrialResult(seed=traj.seed, trace=trace, baseline=baseline)


def epoch_end_steps(T_init: int, N_E: int) -> list[int]:
    return [2 * epoch_start(l, T_init) - 2 for l in range(1, N_E + 1)]


def band(values) -> dict:
    """Median and 1-sigma band of a (runs, points) array."""
    v = np.asarray(values, dtype=float)
    mean, std = v.mean(axis=0), v.std(axis=0)
    return {"median": np.median(v, axis=0).tolist(), "mean": mean.tolist(),
            "std": std.tolist(), "lower": (mean - std).tolist(), "upper": (mean + std).tolist()}


def _dump_comment(cfg, seed):
    return "config: " + json.dumps(cfg, sort_keys=True) + f"\nseed: {seed}"


def _seed_job(args):
    cfg, seed, out = args
    out = Path(out)
    try:
        model = build_model(cfg)
        cfgs = window_configs(cfg)
        if model is not None:
            res = run_model_trial(model, cfgs, seed)
        else:
            traj = load_trajectory_csv(cfg["csv"]["path"], float(cfg["csv"]["sigma"]), seed)
            res = run_data_trial(traj, cfgs)
    except Exception as exc:  # noqa: BLE001 - one seed's failure must not sink the rest
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}
    comment = _dump_comment(cfg, seed)
    res.trace.to_csv(out / f"trace_seed{seed}.csv", comment=comment)
    row = {"seed": seed, "warnings": res.trace.warnings, "k": res.trace.k.tolist()}
    if res.regret is not None:
        res.regret.to_csv(out / f"regret_seed{seed}.csv", comment=comment)
        row["R"] = res.regret.R.tolist()
        row["R_tilde"] = res.regret.R_tilde.tolist()
        row["regret_k"] = res.regret.k.tolist()
    if res.baseline is not None:
        res.baseline.to_csv(out / f"trace_local_seed{seed}.csv", comment=comment)
        n = min(len(res.trace), len(res.baseline))
        row["gap"] = np.cumsum(res.trace.sq_err[:n] - res.baseline.sq_err[:n]).tolist()
        row["regret_k"] = res.trace.k[:n].tolist()
    return row


def worker_count(n_jobs: int) -> int:
    try:
        cap = int(os.environ.get("COOPFILTER_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_jobs))


def run_scenario(cfg: dict, out) -> dict:
    """Run every Monte Carlo seed, write per-seed CSVs and ``aggregate.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mc = cfg["monte_carlo"]
    seeds = [int(mc["seed"]) + i for i in range(int(mc["trials"]))]
    jobs = [(cfg, s, str(out)) for s in seeds]
    workers = worker_count(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_seed_job, jobs))
    else:
        rows = [_seed_job(j) for j in jobs]

    ok = [r for r in rows if "error" not in r]
    agg = {"config": cfg, "seeds": seeds,
           "errors": {r["seed"]: r["error"] for r in rows if "error" in r},
           "warnings": {r["seed"]: r["warnings"] for r in ok if r["warnings"]}}
    if ok:
        k = np.asarray(ok[0]["regret_k"])
        ends = [e for e in epoch_end_steps(cfg["cofilter"]["T_init"], cfg["cofilter"]["N_E"])
                if k[0] <= e <= k[-1]]
        idx = [int(e - k[0]) for e in ends]
        agg["epoch_end_k"] = ends
        agg["N_at_epoch_end"] = [i + 1 for i in idx]
        for key in ("R", "R_tilde", "gap"):
            if key in ok[0]:
                agg[key] = band([np.asarray(r[key])[idx] for r in ok])
    with open(out / "aggregate.json", "w") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True, default=str)
    return agg
