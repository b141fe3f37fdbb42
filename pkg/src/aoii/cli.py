"""Command-line experiment runner.

Subcommands and their outputs:

``condition-sweep``
    CSV ``a,t_max,p,q1,q_last,hazard_monotone,Q1,Q2,Q3,satisfied``; a per-``a``
    pass/fail/mixed summary goes to stderr (or ``--summary PATH``).
``perf``
    CSV ``sweep,value,theta_optimal,theta_rvi,theta_lazy,theta_sim,sim_se,condition1,flag``
    for one swept parameter of the Geometric or Zipf family.
``solve``
    JSON solve summary; ``--policy-out`` writes the greedy policy as CSV ``delta,t,i,a``.
``simulate``
    JSON simulation summary; ``--trace PATH`` writes CSV ``k,X,Xhat,Delta,a,t,i,d``.
``compare``
    JSON ``{equal, witnesses}`` for the solver policy against a named policy.

Parameters come from defaults, then ``--config`` (a flat JSON object), then
flags. Every output starts with a header that records the resolved
parameters, tool version and seed: ``#`` lines for CSV, a ``header`` key for JSON.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 a check flagged.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from .analytic import check_condition1, optimal_expected_aoii_linear
from .mdp import TruncationConfig, build_truncated, reachable_states
from .model import (
    Geometric,
    Linear,
    SourceModel,
    ValidationError,
    Zipf,
    delay_from_params,
    penalty_from_params,
)
from .policies import LazyThreshold, TablePolicy, by_name, equal_on_reachable, write_policy_csv
from .sim import SimConfig, sample_path, simulate
from .solvers import ConvergenceError, MultichainError, discounted_vi, policy_evaluation, policy_iteration, rvi

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_FLAG = 0, 2, 3, 4

# destinations and worker count do not change results, so headers omit them
OUTPUT_KEYS = ("out", "config", "workers", "summary", "policy_out", "trace")

GRID_P = "0.05:0.45:0.05"
GRID_A = "0:5:0.25"
GRID_TMAX = "3:11:1"

DEFAULTS: Dict[str, object] = {
    "p": 0.3,
    "delay": "geometric",
    "p_s": 0.7,
    "a": 3.0,
    "t_max": 5,
    "pmf": None,
    "T": 1,
    "penalty": "linear",
    "alpha": 1.0,
    "beta": 0.0,
    "kappa": 1.0,
    "base": 2.0,
    "values": None,
    "slope": None,
    "delta_max": 100,
    "tmax_trunc": None,
    "eps": 1e-9,
    "max_iter": 200_000,
    "seed": 0,
    "workers": 1,
    # condition-sweep
    "a_values": GRID_A,
    "tmax_values": GRID_TMAX,
    "p_values": GRID_P,
    # perf
    "family": "geometric",
    "sweep": "p",
    "sweep_values": None,
    "lazy_tmax_trunc": 40,
    "sim_horizon": 0,
    "check_tol": 1e-3,
    # solve / compare
    "method": "rvi",
    "gamma": 0.95,
    "all_states": False,
    "policy": "strong-preemptive",
    # simulate
    "horizon": 1_000_000,
    "warmup": 10_000,
    "prob": 0.5,
}

SWEEP_DEFAULTS = {
    ("geometric", "p"): GRID_P,
    ("geometric", "p_s"): "0.1:0.9:0.1",
    ("zipf", "p"): GRID_P,
    ("zipf", "a"): "2.5:5:0.25",
    ("zipf", "t_max"): GRID_TMAX,
}


# --------------------------------------------------------------------------
# parameter handling
# --------------------------------------------------------------------------


def parse_grid(spec) -> List[float]:
    """``"0.1,0.2"`` or ``"start:stop:step"`` (inclusive) or a list."""
    if isinstance(spec, (list, tuple)):
        return [float(x) for x in spec]
    if isinstance(spec, (int, float)):
        return [float(spec)]
    spec = str(spec).strip()
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        if step <= 0 or stop < start:
            raise ValidationError([f"bad range {spec!r}"])
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 10) for k in range(n)]
    out = [float(x) for x in spec.split(",") if x.strip()]
    if not out:
        raise ValidationError([f"empty grid {spec!r}"])
    return out


def _floats(spec) -> Optional[tuple]:
    if spec is None:
        return None
    return tuple(parse_grid(spec))


def resolve(args: argparse.Namespace) -> Dict[str, object]:
    """Defaults, then the config file, then explicitly given flags."""
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValidationError([f"{path}: config must be a flat JSON object"])
        unknown = sorted(set(doc) - set(DEFAULTS) - {"command"})
        if unknown:
            raise ValidationError([f"{path}: unknown keys {unknown}"])
        cfg.update({k: v for k, v in doc.items() if k != "command"})
    for k, v in vars(args).items():
        if k in DEFAULTS:
            cfg[k] = v
    cfg["command"] = args.command
    return cfg


def build_models(cfg):
    source = SourceModel(float(cfg["p"]))
    kind = cfg["delay"]
    dp = {"kind": kind}
    if kind == "geometric":
        dp["p_s"] = cfg["p_s"]
    elif kind == "zipf":
        dp.update(a=cfg["a"], t_max=cfg["t_max"])
    elif kind == "explicit":
        dp["pmf"] = _floats(cfg["pmf"])
        if dp["pmf"] is None:
            raise ValidationError(["explicit delay needs --pmf"])
    elif kind == "deterministic":
        dp["T"] = cfg["T"]
    delay = delay_from_params(dp)
    pp = {"kind": cfg["penalty"], "alpha": cfg["alpha"], "beta": cfg["beta"], "kappa": cfg["kappa"], "base": cfg["base"]}
    if cfg["penalty"] == "table":
        pp.update(values=_floats(cfg["values"]), slope=cfg["slope"])
    return source, delay, penalty_from_params(pp)


def truncation(cfg) -> TruncationConfig:
    t = cfg["tmax_trunc"]
    return TruncationConfig(int(cfg["delta_max"]), None if t is None else int(t))


def header(cfg) -> Dict[str, object]:
    params = {k: v for k, v in sorted(cfg.items()) if k not in OUTPUT_KEYS}
    return {"tool": "aoii", "version": __version__, "seed": cfg["seed"], "params": params}


def csv_header(cfg) -> str:
    h = header(cfg)
    return (
        f"# tool: aoii {h['version']}\n"
        f"# seed: {h['seed']}\n"
        f"# params: {json.dumps(h['params'], sort_keys=True)}\n"
    )


def json_doc(cfg, result: dict) -> str:
    return json.dumps({"header": header(cfg), "result": result}, sort_keys=True, indent=2) + "\n"


def emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _map(fn: Callable, items: list, workers: int) -> list:
    # results come back in submission order regardless of completion order
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _fmt(x) -> str:
    if isinstance(x, np.generic):
        x = x.item()
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv(cols, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(r[c]) for c in cols) + "\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# condition-sweep
# --------------------------------------------------------------------------

SWEEP_COLS = ("a", "t_max", "p", "q1", "q_last", "hazard_monotone", "Q1", "Q2", "Q3", "satisfied")


def _condition_point(pt):
    a, t_max, p = pt
    rep = check_condition1(SourceModel(p), Zipf(a, t_max))
    d = rep.as_dict()
    d["a"] = a
    return d


def condition_sweep(a_values, tmax_values, p_values, workers: int = 1):
    """Rows in ``(a, t_max, p)`` grid order plus a per-``a`` summary."""
    grid = [(a, int(t), p) for a in a_values for t in tmax_values for p in p_values]
    rows = _map(_condition_point, grid, workers)
    summary = {}
    for a in a_values:
        sat = [r["satisfied"] for r in rows if r["a"] == a]
        summary[a] = "pass" if all(sat) else ("fail" if not any(sat) else "mixed")
    return rows, summary


def cmd_condition_sweep(cfg) -> int:
    rows, summary = condition_sweep(
        parse_grid(cfg["a_values"]), [int(t) for t in parse_grid(cfg["tmax_values"])],
        parse_grid(cfg["p_values"]), int(cfg["workers"]),
    )
    emit(csv_header(cfg) + _csv(SWEEP_COLS, rows), cfg.get("out"))
    text = "".join(f"a={a:g}: {v}\n" for a, v in summary.items())
    if cfg.get("summary"):
        emit(text, cfg["summary"])
    else:
        sys.stderr.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# perf
# --------------------------------------------------------------------------

PERF_COLS = ("sweep", "value", "theta_optimal", "theta_rvi", "theta_lazy", "theta_sim", "sim_se", "condition1", "flag")


def perf_point(job) -> dict:
    cfg, value = job
    cfg = dict(cfg)
    sweep = cfg["sweep"]
    cfg[sweep] = int(value) if sweep == "t_max" else value
    cfg["delay"] = cfg["family"]
    source, delay, f = build_models(cfg)
    if not isinstance(f, Linear):
        raise ValidationError(["perf needs a linear penalty"])
    closed = optimal_expected_aoii_linear(source, delay, f.alpha, f.beta)
    mdp = build_truncated(source, delay, f, truncation(cfg))
    theta_rvi = rvi(mdp, float(cfg["eps"])).theta
    lazy_t = cfg["lazy_tmax_trunc"] if isinstance(delay, Geometric) else cfg["tmax_trunc"]
    lazy_mdp = build_truncated(
        source, delay, f, TruncationConfig(int(cfg["delta_max"]), None if lazy_t is None else int(lazy_t))
    )
    _, theta_lazy = policy_evaluation(lazy_mdp, LazyThreshold())
    cond = check_condition1(source, delay).satisfied if delay.bounded else None
    row = {
        "sweep": sweep,
        "value": value,
        "theta_optimal": closed,
        "theta_rvi": theta_rvi,
        "theta_lazy": theta_lazy,
        "theta_sim": None,
        "sim_se": None,
        "condition1": cond,
        "flag": abs(closed - theta_rvi) > float(cfg["check_tol"]),
    }
    if int(cfg["sim_horizon"]) > 0:
        h = int(cfg["sim_horizon"])
        res = simulate(source, delay, f, by_name("tp" if delay.bounded else "sp", delay),
                       SimConfig(h, min(int(cfg["warmup"]), h // 10), int(cfg["seed"])))
        row["theta_sim"], row["sim_se"] = res.avg_penalty, res.std_error
    return row


def perf_rows(cfg) -> List[dict]:
    fam, sweep = cfg["family"], cfg["sweep"]
    if (fam, sweep) not in SWEEP_DEFAULTS:
        raise ValidationError([f"cannot sweep {sweep!r} for the {fam} family"])
    values = parse_grid(cfg["sweep_values"] or SWEEP_DEFAULTS[(fam, sweep)])
    return _map(perf_point, [(cfg, v) for v in values], int(cfg["workers"]))


def cmd_perf(cfg) -> int:
    rows = perf_rows(cfg)
    emit(csv_header(cfg) + _csv(PERF_COLS, rows), cfg.get("out"))
    return EXIT_FLAG if any(r["flag"] for r in rows) else EXIT_OK


# --------------------------------------------------------------------------
# solve / simulate / compare
# --------------------------------------------------------------------------


def _solve(cfg, mdp):
    method = cfg["method"]
    n = int(cfg["max_iter"])
    if method == "rvi":
        return rvi(mdp, float(cfg["eps"]), max_iter=n)
    if method == "pi":
        return policy_iteration(mdp, by_name(cfg["policy"], mdp.delay), max_rounds=n)
    if method == "vi":
        return discounted_vi(mdp, float(cfg["gamma"]), float(cfg["eps"]), max_iter=n)
    raise ValidationError([f"unknown method {method!r}"])


def cmd_solve(cfg) -> int:
    source, delay, f = build_models(cfg)
    mdp = build_truncated(source, delay, f, truncation(cfg))
    res = _solve(cfg, mdp)
    reach = None if cfg["all_states"] else reachable_states(mdp, res.policy)
    out = json.loads(res.to_json())
    out.update(n_states=mdp.n_states, reachable=None if reach is None else len(reach))
    if reach is not None:
        out["all_transmit_on_reachable"] = bool(all(res.policy.table[k] == 1 for k in reach))
    emit(json_doc(cfg, out), cfg.get("out"))
    if cfg.get("policy_out"):
        buf = io.StringIO()
        buf.write(csv_header(cfg))
        write_policy_csv(res.policy, mdp, buf, only=reach)
        emit(buf.getvalue(), cfg["policy_out"])
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    source, delay, f = build_models(cfg)
    if cfg["policy"] == "optimal":
        policy = rvi(build_truncated(source, delay, f, truncation(cfg)), float(cfg["eps"])).policy
    else:
        policy = by_name(cfg["policy"], delay, float(cfg["prob"]))
    sc = SimConfig(int(cfg["horizon"]), int(cfg["warmup"]), int(cfg["seed"]))
    res = simulate(source, delay, f, policy, sc)
    emit(json_doc(cfg, json.loads(res.to_json())), cfg.get("out"))
    if cfg.get("trace"):
        tr = sample_path(source, delay, f, policy, int(cfg.get("trace_length") or 1000), int(cfg["seed"]))
        buf = io.StringIO()
        buf.write(csv_header(cfg))
        tr.to_csv(buf)
        emit(buf.getvalue(), cfg["trace"])
    return EXIT_OK


def cmd_compare(cfg) -> int:
    source, delay, f = build_models(cfg)
    mdp = build_truncated(source, delay, f, truncation(cfg))
    res = _solve(cfg, mdp)
    other = by_name(cfg["policy"], delay)
    equal, wit = equal_on_reachable(res.policy, other, mdp)
    out = {"equal": equal, "policy": other.name, "witnesses": [list(w) for w in wit], "theta": res.theta}
    emit(json_doc(cfg, out), cfg.get("out"))
    return EXIT_OK if equal else EXIT_FLAG


COMMANDS = {
    "condition-sweep": cmd_condition_sweep,
    "perf": cmd_perf,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", metavar="PATH", help="flat JSON config; flags override it")
    p.add_argument("--out", metavar="PATH", help="output file (default stdout)")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("--delta-max", dest="delta_max", type=int, default=S)
    p.add_argument("--tmax-trunc", dest="tmax_trunc", type=int, default=S)
    p.add_argument("--eps", type=float, default=S)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=S)
    m = p.add_argument_group("model")
    m.add_argument("--p", type=float, default=S, help="source flip probability")
    m.add_argument("--delay", choices=["geometric", "zipf", "explicit", "deterministic"], default=S)
    m.add_argument("--ps", dest="p_s", type=float, default=S, help="Geometric success probability")
    m.add_argument("--a", type=float, default=S, help="Zipf exponent")
    m.add_argument("--tmax", dest="t_max", type=int, default=S, help="Zipf upper bound on transmission time")
    m.add_argument("--pmf", default=S, help="explicit delay PMF, comma-separated")
    m.add_argument("--T", dest="T", type=int, default=S, help="deterministic delay")
    m.add_argument("--penalty", choices=["linear", "quadratic", "logarithmic", "table"], default=S)
    m.add_argument("--alpha", type=float, default=S)
    m.add_argument("--beta", type=float, default=S)
    m.add_argument("--kappa", type=float, default=S)
    m.add_argument("--base", type=float, default=S)
    m.add_argument("--values", default=S, help="table penalty values, comma-separated")
    m.add_argument("--slope", type=float, default=S)


def make_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    ap = argparse.ArgumentParser(prog="aoii", description="AoII with preemption: solvers, sweeps and simulation")
    ap.add_argument("--version", action="version", version=f"aoii {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("condition-sweep", help="optimality condition over a Zipf grid")
    _common(p)
    p.add_argument("--a-values", dest="a_values", default=S)
    p.add_argument("--tmax-values", dest="tmax_values", default=S)
    p.add_argument("--p-values", dest="p_values", default=S)
    p.add_argument("--summary", metavar="PATH")

    p = sub.add_parser("perf", help="optimal vs non-preemptive cost along one parameter")
    _common(p)
    p.add_argument("--family", choices=["geometric", "zipf"], default=S)
    p.add_argument("--sweep", choices=["p", "p_s", "a", "t_max"], default=S)
    p.add_argument("--sweep-values", dest="sweep_values", default=S)
    p.add_argument("--lazy-tmax-trunc", dest="lazy_tmax_trunc", type=int, default=S)
    p.add_argument("--sim-horizon", dest="sim_horizon", type=int, default=S)
    p.add_argument("--warmup", type=int, default=S)
    p.add_argument("--check-tol", dest="check_tol", type=float, default=S)

    p = sub.add_parser("solve", help="solve the truncated MDP")
    _common(p)
    p.add_argument("--method", choices=["rvi", "pi", "vi"], default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--policy", default=S, help="initial policy for policy iteration")
    p.add_argument("--policy-out", dest="policy_out", metavar="PATH")
    p.add_argument("--all-states", dest="all_states", action="store_true", default=S)

    p = sub.add_parser("simulate", help="Monte Carlo under a named policy")
    _common(p)
    p.add_argument("--policy", default=S, help="policy name, or 'optimal' for the RVI policy")
    p.add_argument("--horizon", type=int, default=S)
    p.add_argument("--warmup", type=int, default=S)
    p.add_argument("--prob", type=float, default=S, help="action probability of the random policy")
    p.add_argument("--trace", metavar="PATH")
    p.add_argument("--trace-length", dest="trace_length", type=int)

    p = sub.add_parser("compare", help="solver policy vs a named policy on the reachable set")
    _common(p)
    p.add_argument("--method", choices=["rvi", "pi"], default=S)
    p.add_argument("--policy", default=S)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    where = args.config or "command line"
    try:
        cfg = resolve(args)
        for k in ("out", "summary", "policy_out", "trace", "trace_length"):
            if getattr(args, k, None) is not None:
                cfg[k] = getattr(args, k)
        return COMMANDS[args.command](cfg)
    except (ValidationError, ValueError, KeyError, OSError) as e:
        print(f"aoii: invalid input ({where}): {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, MultichainError) as e:
        print(f"aoii: solver failure ({where}): {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
