"""Command-line harness: ``scsg run | compare | verify | bounds``.

Exit codes: 0 success, 1 verification failure, 2 configuration error.
Set ``SCSG_LOG`` (e.g. ``INFO``, ``DEBUG``) for log output on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis, verify
from .config import ConfigError, ExperimentConfig, MethodSpec, load_config
from .experiment import build_problem, run_method
from .optimizer import (
    THEORY_GAMMA,
    BudgetError,
    constant_schedule,
    schedule_version1,
    schedule_version2,
    schedule_version3,
)
from .plot import line_plot
from .problems import UnsupportedOperation
from .sampling import ParameterError

log = logging.getLogger("scsg")

CSV_HEADER = ("epoch_or_step", "ifo_cumulative", "f_value", "grad_norm_sq", "B", "b", "N", "eta")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# --------------------------------------------------------------------------
# file helpers
# --------------------------------------------------------------------------


def fmt_float(v: float) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else format(float(v), ".17g")


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _json_clean(obj.tolist())
    return obj


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    write_atomic(path, json.dumps(_json_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def trace_rows(trace) -> list[tuple]:
    return [(r.j, r.ifo, r.f_value, r.grad_norm_sq, r.B, r.b, r.N, r.eta) for r in trace.records]


def trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for j, ifo, f, g, B, b, N, eta in trace_rows(trace):
        w.writerow([j, ifo, fmt_float(f), fmt_float(g), B, b, N, fmt_float(eta)])
    return buf.getvalue()


def read_trace_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: (float(v) if k in ("f_value", "grad_norm_sq", "eta") else int(v)) for k, v in row.items()}
                for row in reader]


def trace_filename(method: str, seed: int) -> str:
    return f"{method}_seed{seed}.csv"


# --------------------------------------------------------------------------
# jobs
# --------------------------------------------------------------------------


def _job(problem_dict: dict, method_dict: dict, budget: dict, seed: int, out_dir: str | None) -> dict:
    """Run one (method, seed) pair in isolation; writes its CSV when ``out_dir`` is given."""
    from .config import ProblemSpec

    problem = ProblemSpec.from_dict(problem_dict)
    method = MethodSpec(**method_dict)
    oracle = build_problem(problem)
    res = run_method(oracle, method, budget, seed, data_seed=problem.seed)
    tr = res.trace
    if out_dir is not None:
        write_atomic(Path(out_dir) / trace_filename(method.name, seed), trace_csv(tr))
    last = tr.records[-1]
    return {
        "method": method.name,
        "kind": method.kind,
        "seed": seed,
        "epochs": tr.epochs,
        "total_ifo": tr.total_ifo,
        "metrics_ifo": tr.metrics_count,
        "initial_f": tr.initial_f,
        "initial_grad_norm_sq": tr.initial_grad_norm_sq,
        "final_f": last.f_value,
        "final_grad_norm_sq": last.grad_norm_sq,
        "best_f": float(np.nanmin([tr.initial_f] + [r.f_value for r in tr.records])),
        "best_grad_norm_sq": tr.best_grad_norm_sq(),
        "output_epoch": tr.output_epoch,
        "output_rule": None if method.kind == "sgd" else (method.output_rule or "smooth_sample"),
        "output_f": res.output_f,
        "output_grad_norm_sq": res.output_grad_norm_sq,
        "constants": res.constants.to_dict(),
        "advisory_constants": res.constants.advisory,
        "warnings": list(tr.warnings),
        "rows": trace_rows(tr),
    }


def run_jobs(cfg: ExperimentConfig, out_dir: Path | None, jobs: int) -> list[dict]:
    problem = cfg.problem.to_dict()
    tasks = [(problem, m.to_dict(), cfg.budget, seed, None if out_dir is None else str(out_dir))
             for m in cfg.methods for seed in cfg.seeds]
    log.info("running %d jobs with %d workers", len(tasks), jobs)
    if jobs <= 1 or len(tasks) == 1:
        return [_job(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_job, *t) for t in tasks]
        return [f.result() for f in futures]


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _load(args, path) -> ExperimentConfig:
    cfg = load_config(path)
    if args.seed_count is not None:
        cfg = cfg.with_seed_count(args.seed_count)
    return cfg


def _out_dir(args, cfg: ExperimentConfig | None, default: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    if cfg is not None and cfg.out_dir:
        return Path(cfg.out_dir)
    return Path(default)


def cmd_run(args) -> int:
    if len(args.config) != 1:
        raise ConfigError("run takes exactly one --config")
    cfg = _load(args, args.config[0])
    out = _out_dir(args, cfg, "runs")
    results = run_jobs(cfg, out, args.jobs)
    summary = {
        "generated_at": _timestamp(),
        "config": cfg.to_dict(),
        "runs": [{k: v for k, v in r.items() if k != "rows"} | {"trace": trace_filename(r["method"], r["seed"])}
                 for r in results],
    }
    write_json(out / "summary.json", summary)
    print(f"wrote {len(results)} trace(s) and summary.json to {out}")
    return EXIT_OK


def _step_value(ifos: np.ndarray, vals: np.ndarray, initial: float, grid: np.ndarray) -> np.ndarray:
    """Value of the most recent record at or before each grid point."""
    pos = np.searchsorted(ifos, grid, side="right") - 1
    full = np.concatenate([[initial], vals])
    return full[pos + 1]


def compare_results(results: list[dict], method_names: list[str]) -> dict:
    """Median-over-seeds curves on a shared IFO grid and the best-gradient verdict."""
    shared = min(r["total_ifo"] for r in results)
    grid = np.unique(np.concatenate([[0]] + [[row[1] for row in r["rows"] if row[1] <= shared] for r in results]))
    curves, best = {}, {}
    for name in method_names:
        runs = [r for r in results if r["method"] == name]
        fs, gs, bests = [], [], []
        for r in runs:
            ifos = np.array([row[1] for row in r["rows"]], dtype=float)
            f = np.array([row[2] for row in r["rows"]], dtype=float)
            g = np.array([row[3] for row in r["rows"]], dtype=float)
            fs.append(_step_value(ifos, f, r["initial_f"], grid))
            gs.append(_step_value(ifos, g, r["initial_grad_norm_sq"], grid))
            upto = g[ifos <= shared]
            bests.append(float(np.nanmin(np.concatenate([[r["initial_grad_norm_sq"]], upto]))))
        curves[name] = (np.median(fs, axis=0), np.median(gs, axis=0))
        best[name] = float(np.median(bests))
    lo = min(best.values())
    winners = [k for k, v in best.items() if v <= lo * (1 + 1e-12)]
    return {
        "grid": grid,
        "curves": curves,
        "verdict": {
            "shared_budget_ifo": int(shared),
            "statistic": "median over seeds of min-so-far grad_norm_sq within the shared budget",
            "best_grad_norm_sq": best,
            "winner": winners[0] if len(winners) == 1 else None,
            "tie": len(winners) > 1,
            "tied": winners if len(winners) > 1 else [],
        },
    }


def cmd_compare(args) -> int:
    configs = [_load(args, p) for p in args.config]
    base = configs[0]
    methods: list[MethodSpec] = []
    for c in configs:
        if dataclasses.replace(c.problem, data_seed=c.problem.seed) != dataclasses.replace(
                base.problem, data_seed=base.problem.seed):
            raise ConfigError("compare: methods are configured on mismatched problems")
        if c.budget != base.budget:
            raise ConfigError("compare: configs use different budgets")
        if c.seeds != base.seeds:
            raise ConfigError("compare: configs use different seeds")
        methods.extend(c.methods)
    names = [m.name for m in methods]
    if len(names) < 2:
        raise ConfigError("compare: needs at least two methods")
    if len(set(names)) != len(names):
        raise ConfigError("compare: method names must be unique across configs")
    merged = ExperimentConfig(base.problem, methods, base.budget, base.seeds, base.name, base.out_dir,
                              base.seed_spec)
    out = _out_dir(args, base, "compare")
    results = run_jobs(merged, out, args.jobs)
    cmp = compare_results(results, names)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ifo_cumulative"] + [f"{n}_{col}" for n in names for col in ("f_value", "grad_norm_sq")])
    for i, t in enumerate(cmp["grid"]):
        row = [int(t)]
        for n in names:
            f, g = cmp["curves"][n]
            row += [fmt_float(f[i]), fmt_float(g[i])]
        w.writerow(row)
    write_atomic(out / "merged.csv", buf.getvalue())

    x = cmp["grid"].tolist()
    write_atomic(out / "loss.svg", line_plot({n: (x, cmp["curves"][n][0]) for n in names},
                                             title="median objective vs IFO", xlabel="IFO", ylabel="f"))
    write_atomic(out / "grad_norm.svg", line_plot({n: (x, cmp["curves"][n][1]) for n in names},
                                                  title="median squared gradient norm vs IFO", xlabel="IFO",
                                                  ylabel="|grad f|^2"))
    verdict = dict(cmp["verdict"], generated_at=_timestamp(), config=merged.to_dict(),
                   seeds=list(merged.seeds))
    write_json(out / "verdict.json", verdict)
    v = cmp["verdict"]
    print("tie: " + ", ".join(v["tied"]) if v["tie"] else f"winner: {v['winner']}")
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify.run_suite(args.suite)
    report["generated_at"] = _timestamp()
    out = Path(args.out) if args.out is not None else Path(f"verify_{args.suite}.json")
    if out.suffix != ".json":
        out = out / f"verify_{args.suite}.json"
    write_json(out, report)
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  [{c['suite']}] {c['name']}")
    print(f"report: {out}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


REQUIRED_CONSTANTS = ("epsilon", "n", "delta_f", "h_star")
OPTIONAL_CONSTANTS = ("L", "mu", "gamma")


def bounds_report(constants: dict) -> dict:
    """Side-by-side cost estimates for SCSG schedules and the SGD/SVRG baselines.

    ``favored`` ranks the order-of-magnitude rates (no constants, logs dropped)
    so every method is treated alike; ``favored_explicit`` ranks only the
    non-advisory costs computed from bounds with explicit constants.
    """
    unknown = sorted(set(constants) - set(REQUIRED_CONSTANTS) - set(OPTIONAL_CONSTANTS))
    if unknown:
        raise ConfigError(f"bounds: unknown constants {', '.join(unknown)}")
    missing = [k for k in REQUIRED_CONSTANTS if constants.get(k) is None]
    if missing:
        raise ConfigError(f"bounds: missing constants {', '.join(missing)}")
    for k, v in constants.items():
        if v is not None and (not isinstance(v, (int, float)) or isinstance(v, bool)):
            raise ConfigError(f"bounds: constant {k} must be a number")
    eps, n, df, H = (float(constants[k]) for k in REQUIRED_CONSTANTS)
    n = int(constants["n"])
    if not (eps > 0 and n >= 1 and df >= 0 and H >= 0):
        raise ConfigError("bounds: need epsilon > 0, n >= 1, delta_f >= 0, h_star >= 0")
    L_given = constants.get("L") is not None
    L = float(constants["L"]) if L_given else 1.0
    gamma = float(constants.get("gamma") or THEORY_GAMMA)
    mu = constants.get("mu")
    inputs = {"epsilon": eps, "n": n, "delta_f": df, "h_star": H, "L": L,
              "L_source": "given" if L_given else "default", "mu": mu, "gamma": gamma}

    reports = {}
    v1 = schedule_version1(eps, H, L, n, gamma=gamma)
    B1 = v1(1).B
    T1 = analysis.epochs_to_eps_v1(eps, df, B1, L)
    reports["scsg-v1"] = {"B": B1, "b": 1, "epochs": T1, "cost": analysis.expected_cost(v1, T1),
                          "rule": "constant batch; epochs from the constant-batch rate", "advisory": False}

    v2 = schedule_version2(L, n, gamma=gamma)
    T2 = analysis.epochs_to_eps_smooth(v2, eps, L, gamma, df, H, n)
    reports["scsg-v2"] = {"B_first": v2(1).B, "B_last": v2(T2).B if T2 else None, "b": 1, "epochs": T2,
                          "cost": analysis.expected_cost(v2, T2) if T2 else None,
                          "rule": "growing batch; epochs from the smooth bound", "advisory": False}

    svrg = constant_schedule(n, 1, gamma / (L * n ** (2 / 3)), name="svrg")
    Ts = analysis.epochs_to_eps_smooth(svrg, eps, L, gamma, df, H, n)
    reports["svrg"] = {"B": n, "b": 1, "epochs": Ts, "cost": analysis.expected_cost(svrg, Ts) if Ts else None,
                       "rule": "full batch; epochs from the smooth bound", "advisory": False}

    reports["sgd"] = {"cost": L * df * (1.0 / eps + H / eps**2), "epochs": None,
                      "rule": "textbook surrogate L*delta_f*(1/eps + H*/eps^2); constants not tight",
                      "advisory": True}

    rates = {"smooth": {"sgd": 1 / eps**2, "svrg": n + n ** (2 / 3) / eps,
                        "scsg": min(eps ** (-5 / 3), n ** (2 / 3) / eps)}}
    explicit = {k: r["cost"] for k, r in reports.items() if r["cost"] is not None and not r["advisory"]}
    result = {"inputs": inputs, "smooth": reports, "rates": rates,
              "favored": {"smooth": min(rates["smooth"], key=rates["smooth"].get)},
              "favored_explicit": {"smooth": min(explicit, key=explicit.get)}}

    if mu is not None:
        mu = float(mu)
        if not mu > 0:
            raise ConfigError("bounds: mu must be positive")
        pl = {}
        v3 = schedule_version3(eps, H, L, mu, n, gamma=gamma)
        T3 = analysis.epochs_to_eps_pl(v3, eps, L, gamma, mu, df, H, n)
        pl["scsg-v3"] = {"B": v3(1).B, "b": 1, "epochs": T3, "cost": analysis.expected_cost(v3, T3) if T3 else None,
                         "rule": "constant batch; epochs from the P-L bound", "advisory": False,
                         "notes": analysis.bound_pl(v3, 1, L, gamma, mu, df, H, n).notes}
        Tp = analysis.epochs_to_eps_pl(svrg, eps, L, gamma, mu, df, H, n)
        pl["svrg"] = {"B": n, "b": 1, "epochs": Tp, "cost": analysis.expected_cost(svrg, Tp) if Tp else None,
                      "rule": "full batch; epochs from the P-L bound", "advisory": False}
        pl["sgd"] = {"cost": L * H / (mu**2 * eps) + L / mu * math.log(max(df / eps, 1.0)), "epochs": None,
                     "rule": "textbook surrogate L*H*/(mu^2 eps) + (L/mu) log(delta_f/eps); constants not tight",
                     "advisory": True}
        result["pl"] = pl
        m = min(1 / (mu * eps), n)
        rates["pl"] = {"sgd": 1 / (mu**2 * eps), "svrg": n + n ** (2 / 3) / mu, "scsg": m + m ** (2 / 3) / mu}
        result["favored"]["pl"] = min(rates["pl"], key=rates["pl"].get)
        explicit = {k: r["cost"] for k, r in pl.items() if r["cost"] is not None and not r["advisory"]}
        result["favored_explicit"]["pl"] = min(explicit, key=explicit.get)
    return result


def cmd_bounds(args) -> int:
    if len(args.config) != 1:
        raise ConfigError("bounds takes exactly one --config (a constants JSON file)")
    path = args.config[0]
    try:
        constants = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(constants, dict):
        raise ConfigError(f"{path}: expected a JSON object of constants")
    report = bounds_report(constants)
    report["generated_at"] = _timestamp()
    out = Path(args.out) if args.out is not None else Path("bounds.json")
    if out.suffix != ".json":
        out = out / "bounds.json"
    write_json(out, report)
    v1 = report["smooth"]["scsg-v1"]
    print(f"scsg-v1: B={v1['B']} epochs={v1['epochs']} cost={v1['cost']:.6g}")
    print(f"favored: {report['favored']}")
    print(f"report: {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scsg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", action="append", default=[], required=config_required, metavar="PATH")
        p.add_argument("--out", metavar="DIR", default=None)
        p.add_argument("--jobs", type=int, default=1, metavar="N")
        p.add_argument("--seed-count", type=int, default=None, metavar="K")

    common(sub.add_parser("run", help="run every (method, seed) job and write CSV traces"))
    common(sub.add_parser("compare", help="run methods on one problem and emit merged curves, plots, verdict"))
    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("suite", choices=verify.SUITES + ("all",))
    common(p, config_required=False)
    common(sub.add_parser("bounds", help="evaluate theoretical cost estimates from a constants file"))
    return parser


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "verify": cmd_verify, "bounds": cmd_bounds}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SCSG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if args.seed_count is not None and args.seed_count < 1:
        parser.error("--seed-count must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ParameterError, BudgetError, UnsupportedOperation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
