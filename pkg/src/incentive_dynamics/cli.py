"""Command-line experiment runner.

Subcommands:
  run --config PATH [--jobs N] [--out DIR]   execute a run + analyses
  verify --config PATH                        run the analysis suite only
  list-fixtures                               show builtin routing fixtures

One JSON config describes one experiment: the game, the run parameters, the
incentive update (externality-based by default, or the naive social-cost
gradient baseline), and any requested analyses. Outputs: trajectory.csv,
summary.json, analysis/*.json, and a plot.py rendering residual and
social-cost curves. Exit codes: 0 success, 1 invalid config, 2 convergence
failure (or a failed verification check).
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import aggregative as agg
from . import analysis, routing
from .dynamics import (RunConfig, StepSchedule, StrategyUpdateRule,
                       TrajectoryRecord, run_coupled)
from .errors import ConvergenceError, GameError, SpecError
from .games import AtomicGame

PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Render residual and social-cost curves from trajectory.csv.\"\"\"
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
ks, residuals, costs = [], [], []
with open(here / "trajectory.csv") as fh:
    for row in csv.DictReader(fh):
        ks.append(int(row["k"]))
        residuals.append(float(row["residual"]))
        costs.append(float(row["social_cost"]))

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
ax1.semilogy(ks, residuals)
ax1.set_xlabel("iteration")
ax1.set_ylabel("fixed-point residual")
ax2.plot(ks, costs)
ax2.set_xlabel("iteration")
ax2.set_ylabel("social cost")
fig.tight_layout()
fig.savefig(here / "trajectory.png", dpi=150)
print("wrote", here / "trajectory.png")
"""


class ConfigError(SpecError):
    pass


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed JSON in {path} at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "game" not in data:
        raise ConfigError('config is missing the required "game" key')
    return data


def build_game(spec: dict):
    """Returns (kind, model) with kind in {"aggregative", "routing"}."""
    if not isinstance(spec, dict):
        raise ConfigError('"game" must be an object')
    if "builtin" in spec:
        return "routing", routing.load_fixture(spec["builtin"])
    if "aggregative" in spec:
        return "aggregative", agg.from_json(spec["aggregative"])
    if "routing" in spec:
        return "routing", routing.network_from_json(spec["routing"])
    raise ConfigError('"game" needs one of "builtin", "aggregative", "routing"')


def build_run_config(run_spec: dict) -> RunConfig:
    run_spec = dict(run_spec or {})
    sched = StepSchedule(**run_spec.pop("schedule", {}))
    rule = StrategyUpdateRule(**run_spec.pop("rule", {}))
    run_spec.pop("x0", None)
    run_spec.pop("p0", None)
    return RunConfig(schedule=sched, rule=rule, **run_spec)


def _initial_points(kind, model, run_spec):
    run_spec = run_spec or {}
    if kind == "routing":
        x0 = (np.asarray(run_spec["x0"], float) if "x0" in run_spec
              else model.uniform_route_flow())
        p0 = (np.asarray(run_spec["p0"], float) if "p0" in run_spec
              else np.zeros(model.n_edges))
    else:
        x0 = (np.asarray(run_spec["x0"], float) if "x0" in run_spec
              else np.zeros(model.n))
        p0 = (np.asarray(run_spec["p0"], float) if "p0" in run_spec
              else np.zeros(model.n))
    return x0, p0


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, TrajectoryRecord):
        return obj.summary()
    if isinstance(obj, analysis.StabilityReport):
        return {"start_points": _jsonable(obj.start_points),
                "endpoints": _jsonable(obj.endpoints),
                "distances": obj.distances,
                "all_converged": obj.all_converged}
    return obj


def run_analysis(kind, model, item: dict):
    item = dict(item)
    op = item.pop("op", None)
    if op == "verify_fixed_point_optimality":
        if "p" in item:
            p = np.asarray(item.pop("p"), float)
        elif kind == "aggregative":
            p = agg.optimal_incentive(model)
        else:
            p = routing.optimal_edge_tolls(model)
        return analysis.verify_fixed_point_optimality(model, p, **item)
    if op == "ode_probe":
        starts = [np.asarray(s, float) for s in item.pop("start_points")]
        cfg = analysis.OdeProbeConfig(**item.pop("config", {}))
        return analysis.ode_probe_slow_dynamics(model, starts, cfg, **item)
    if op == "condition_c1":
        samples = [np.asarray(s, float) for s in item.pop("p_samples")]
        return analysis.check_condition_C1(model, samples, **item)
    if op == "condition_c2":
        samples = [np.asarray(s, float) for s in item.pop("p_samples")]
        if "weight" in item:
            weight = np.asarray(item.pop("weight"), float)
        elif kind == "aggregative":
            weight = np.linalg.inv(model.M).T
        else:
            raise ConfigError("condition_c2 needs an explicit weight matrix")
        return analysis.check_condition_C2(model, weight, samples, **item)
    if op == "global_conditions":
        if kind != "aggregative":
            raise ConfigError("global_conditions applies to aggregative games")
        return agg.check_global_conditions(model)
    if op == "local_conditions":
        if kind != "aggregative":
            raise ConfigError("local_conditions applies to aggregative games")
        return agg.check_local_conditions(model)
    if op == "counterexample":
        grid_csv = item.pop("grid_csv", None)
        report = analysis.reproduce_counterexample(**item)
        if grid_csv:
            analysis.counterexample_grid_csv(report, grid_csv)
        report.pop("externality_runs", None)
        report.pop("grid_values", None)
        report.pop("grid_costs", None)
        return report
    if op == "nondegeneracy":
        if kind != "routing":
            raise ConfigError("nondegeneracy applies to routing games")
        tolls = np.asarray(item.pop("tolls", np.zeros(model.n_edges)), float)
        return {"verdict": routing.nondegeneracy_check(model, tolls, **item)}
    if op == "uniqueness_probe":
        p = np.asarray(item.pop("p"), float)
        out = analysis.multistart_uniqueness_probe(model, p, **item)
        out.pop("solutions", None)
        return out
    if op == "schedule_assumptions":
        return StepSchedule(**item).assumption_report()
    raise ConfigError(f"unknown analysis op {op!r}")


def run_experiment(config_path, out_dir=None) -> int:
    try:
        data = load_config(config_path)
        kind, model = build_game(data["game"])
        run_spec = data.get("run", {})
        config = build_run_config(run_spec)
        x0, p0 = _initial_points(kind, model, run_spec)
        out = Path(out_dir or data.get("output_dir") or Path(config_path).with_suffix(""))
    except (GameError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out.mkdir(parents=True, exist_ok=True)
    update = data.get("incentive_update", "externality")
    try:
        if update == "gradient_baseline":
            grad = None
            if kind == "routing" and model.n_edges == 2 and len(model.od_pairs) == 1:
                grad = analysis.two_link_clarke_gradient
            record = analysis.run_gradient_baseline(
                model, p0, schedule=config.schedule,
                max_iterations=config.max_iterations, gradient=grad)
        elif update == "externality":
            if kind == "routing":
                record = routing.run_toll_adaptation(model, x0, p0, config)
            else:
                record = run_coupled(model.to_game(), x0, p0, config)
        else:
            print(f"error: unknown incentive_update {update!r}", file=sys.stderr)
            return 1
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    record.to_csv(out / "trajectory.csv")
    record.to_json_summary(out / "summary.json")
    (out / "plot.py").write_text(PLOT_SCRIPT)

    failures = 0
    analyses = data.get("analyses", [])
    if analyses:
        adir = out / "analysis"
        adir.mkdir(exist_ok=True)
        for idx, item in enumerate(analyses):
            if item.get("op") == "counterexample" and "grid_csv" not in item:
                item = dict(item, grid_csv=str(adir / "counterexample_grid.csv"))
            try:
                result = run_analysis(kind, model, item)
            except GameError as exc:
                print(f"error in analysis {item.get('op')!r}: {exc}", file=sys.stderr)
                return 1
            name = item.get("op", f"analysis{idx}")
            with open(adir / f"{idx:02d}_{name}.json", "w") as fh:
                json.dump(_jsonable(result), fh, indent=2)
            if isinstance(result, dict) and result.get("passed") is False:
                failures += 1

    if update != "gradient_baseline" and not record.converged:
        print("run did not converge within the iteration budget", file=sys.stderr)
        return 2
    if failures:
        print(f"{failures} analysis check(s) failed", file=sys.stderr)
        return 2
    print(f"wrote {out}/trajectory.csv, summary.json"
          + (", analysis/" if analyses else ""))
    return 0


def run_directory(dir_path, jobs: int, out_dir=None) -> int:
    configs = sorted(Path(dir_path).glob("*.json"))
    if not configs:
        print(f"error: no *.json configs in {dir_path}", file=sys.stderr)
        return 1
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        codes = list(pool.map(
            lambda c: run_experiment(c, Path(out_dir) / c.stem if out_dir else None),
            configs))
    return max(codes)


def verify(config_path) -> int:
    try:
        data = load_config(config_path)
        kind, model = build_game(data["game"])
    except (GameError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    analyses = data.get("analyses", [])
    if not analyses:
        print("error: verify needs at least one entry in \"analyses\"", file=sys.stderr)
        return 1
    failures = []
    for item in analyses:
        op = item.get("op", "?")
        try:
            result = run_analysis(kind, model, item)
        except GameError as exc:
            print(f"error in analysis {op!r}: {exc}", file=sys.stderr)
            return 1
        verdict = result.get("passed") if isinstance(result, dict) else None
        if isinstance(result, dict) and "verdict" in result:
            verdict = result["verdict"] == "pass"
        status = {True: "pass", False: "FAIL", None: "info"}[verdict]
        print(f"[{status}] {op}")
        if verdict is False:
            failures.append(op)
    if failures:
        print("failed checks: " + ", ".join(failures), file=sys.stderr)
        return 2
    return 0


def list_fixtures() -> int:
    for name, (_, desc) in sorted(routing.FIXTURES.items()):
        print(f"{name:10s} {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incentive-dynamics",
        description="Adaptive incentive-design simulations over atomic and "
                    "non-atomic games.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("--config", required=True,
                       help="JSON config file, or a directory of configs with --jobs")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="fan a config directory over N worker threads")
    p_run.add_argument("--out", default=None, help="output directory override")

    p_verify = sub.add_parser("verify", help="run the analysis suite only")
    p_verify.add_argument("--config", required=True)

    sub.add_parser("list-fixtures", help="list builtin routing fixtures")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-fixtures":
        return list_fixtures()
    if args.command == "verify":
        return verify(args.config)
    if Path(args.config).is_dir():
        return run_directory(args.config, max(args.jobs, 1), args.out)
    return run_experiment(args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
