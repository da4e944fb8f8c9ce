"""Command-line entry point: ``compile``, ``run``, ``montecarlo``,
``benchmark`` and ``report``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or parse error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import experiments
from .mission import MissionConfig, RunTrace, as_fsa, convergence_report, run
from .product import write_grid_csv
from .scltl import FormulaError, compile_text
from .world import ConfigError, GridWorld, SensorModel, load_map

OUT_DIR_ENV = "ROVERCOPTER_OUT_DIR"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("rovercopter")


def default_config_path() -> Path:
    return Path(str(resources.files("rovercopter") / "data" / "sim1_config.json"))


def _parse_cell(text: str) -> tuple[int, int]:
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'i,j', got {text!r}")
    return i, j


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return sizes


def load_experiment(path: str | Path | None) -> tuple[dict, Path]:
    """Experiment config JSON and the directory relative paths resolve against."""
    path = Path(path) if path else default_config_path()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data, path.parent


def _load_world(args, cfg: dict, base: Path) -> GridWorld:
    map_path = args.map or cfg.get("map")
    if map_path is None:
        raise ConfigError("no map given (use --map or a 'map' key in the config)")
    p = Path(map_path)
    if not p.is_absolute() and not args.map:
        p = base / p
    try:
        return load_map(p)
    except FileNotFoundError:
        raise ConfigError(f"map file not found: {p}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"map file {p} is not valid JSON: {exc}")


def _mission_config(args, cfg: dict) -> MissionConfig:
    data = dict(cfg.get("mission", {}))
    overrides = {
        "T_c": args.T_c, "T_r": args.T_r, "alpha": args.alpha, "threshold": args.threshold,
        "k_max": args.k_max, "vi_horizon": args.horizon, "automaton_mode": args.automaton_mode,
        "exploration": args.exploration, "seed": args.seed, "snapshot_every": args.snapshot_every,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return MissionConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc))


def _sensors(cfg: dict) -> tuple[SensorModel, SensorModel]:
    try:
        return SensorModel.from_json(cfg["rover_sensor"]), SensorModel.from_json(cfg["copter_sensor"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"sensor configuration incomplete: {exc}")


def _formula(args, cfg: dict) -> str:
    text = args.formula or cfg.get("formula")
    if not text:
        raise ConfigError("no formula given (use --formula or a 'formula' key in the config)")
    return text


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------


def cmd_compile(args) -> int:
    ap = [a.strip() for a in args.ap.split(",") if a.strip()]
    if not ap:
        raise ConfigError("--ap must list at least one proposition")
    fsa = compile_text(args.formula, ap)
    out = _out_dir(args)
    dot = Path(args.dot) if args.dot else out / "fsa.dot"
    js = Path(args.json) if args.json else out / "fsa.json"
    dot.write_text(fsa.to_dot())
    _write_json(js, fsa.to_json())
    print(f"states: {fsa.n_states}  accepting: {len(fsa.accepting)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, base = load_experiment(args.config)
    world = _load_world(args, cfg, base)
    config = _mission_config(args, cfg)
    rover_sensor, copter_sensor = _sensors(cfg)
    formula = _formula(args, cfg)
    fsa = as_fsa(formula, world.atomic_props)
    x_r = world.index(*args.rover_start) if args.rover_start else None
    x_c = world.index(*args.copter_start) if args.copter_start else None
    for cell in (args.rover_start, args.copter_start):
        if cell and not world.in_bounds(*cell):
            raise ConfigError(f"start {list(cell)} out of bounds")
    out = _out_dir(args)
    trace = run(world, fsa, config, rover_sensor, copter_sensor, x_r, x_c)
    trace.write(out, world)
    for ap in world.atomic_props:
        write_grid_csv(out / f"belief_{ap}.csv", trace.beliefs.values[:, world.prop_index(ap)],
                       world.width, world.height)
    write_grid_csv(out / "b_max.csv", trace.b_max, world.width, world.height)
    _write_json(out / "map.json", world.to_json())
    _write_json(out / "config.json", {
        "formula": formula, "mission": asdict(config),
        "rover_sensor": rover_sensor.to_json(), "copter_sensor": copter_sensor.to_json(),
    })
    s = trace.summary(world)
    print(f"status: {s['status']}  k: {s['k_final']}  value: {s['final_value']:.6f}  "
          f"satisfied: {s['ground_truth_satisfied']}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg, base = load_experiment(args.config)
    world = _load_world(args, cfg, base)
    config = _mission_config(args, cfg)
    rover_sensor, copter_sensor = _sensors(cfg)
    formula = _formula(args, cfg)
    as_fsa(formula, world.atomic_props)                # surface formula errors early
    mc = cfg.get("montecarlo", {})
    trials = args.trials if args.trials is not None else int(mc.get("trials", 100))
    random_starts = mc.get("random_starts", True) and not args.fixed_starts
    threads = args.threads if args.threads is not None else 1
    out = _out_dir(args)
    results = experiments.montecarlo(world, formula, config, rover_sensor, copter_sensor,
                                     trials, random_starts, threads)
    experiments.write_montecarlo_csv(out / "montecarlo.csv", results, world)
    agg = experiments.aggregate(results)
    _write_json(out / "montecarlo_summary.json", agg)
    print("arm     complete  satisfied  mean_explore_s")
    for arm in ("local", "global"):
        print(f"{arm:<7} {agg[arm + '_complete']:>8}  {agg[arm + '_satisfied']:>9}  "
              f"{agg[arm + '_mean_explore_s']:.6f}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg, _ = load_experiment(args.config) if args.config else ({}, None)
    bench = cfg.get("benchmark", {})
    sizes = args.sizes or bench.get("sizes") or [6, 9, 12, 15, 50, 100]
    if any(n < 1 for n in sizes):
        raise ConfigError("grid sizes must be at least 1")
    repeats = args.repeats if args.repeats is not None else int(bench.get("repeats", 1))
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args)
    rows = experiments.benchmark(sizes, seed=seed, repeats=repeats)
    with open(out / "benchmark.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["n", "width", "height", "states", "sweeps", "seconds"])
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"n={r['n']:<4} states={r['states']:<5} seconds={r['seconds']:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        world = load_map(run_dir / "map.json")
        with open(run_dir / "config.json") as fh:
            cfg = json.load(fh)
        snaps = np.load(run_dir / "snapshots.npz")
    except FileNotFoundError as exc:
        raise ConfigError(f"incomplete run directory: {exc}")
    fsa = as_fsa(cfg["formula"], world.atomic_props)
    trace = RunTrace()
    for t in range(len(snaps["k"])):
        trace.snapshots.append({key: snaps[key][t] for key in
                                ("k", "beliefs", "visits", "n_obs", "n_correct")})
    mission = cfg.get("mission", {})
    rows = convergence_report(trace, world, fsa, values=not args.no_values, every=args.every,
                              rover_success=mission.get("rover_success", 0.95))
    out = Path(args.out_dir) if args.out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    fields = ["k", "theorem1_gap", "corollary1_row_gap", "value_gap", "min_visits",
              "min_correct_ratio", "entropy_sum"]
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    last = rows[-1]
    print(f"snapshots: {len(rows)}  final theorem1_gap: {last['theorem1_gap']:.6g}  "
          f"row_gap: {last['corollary1_row_gap']:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="base RNG seed")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
    common.add_argument("--threads", type=int, help="worker processes (montecarlo only)")
    common.add_argument("-v", "--verbose", action="store_true")

    mission = argparse.ArgumentParser(add_help=False)
    mission.add_argument("--config", help="experiment config JSON (default: bundled Simulation-1 setup)")
    mission.add_argument("--map", help="map JSON, overrides the config's map")
    mission.add_argument("--formula", help="scLTL formula, overrides the config's formula")
    mission.add_argument("--T-c", dest="T_c", type=int)
    mission.add_argument("--T-r", dest="T_r", type=int)
    mission.add_argument("--alpha", type=float)
    mission.add_argument("--threshold", type=float)
    mission.add_argument("--k-max", dest="k_max", type=int)
    mission.add_argument("--horizon", type=int, help="value-iteration horizon (default: fixed point)")
    mission.add_argument("--automaton-mode", choices=["ground_truth", "belief_sampled"])
    mission.add_argument("--exploration", choices=["local", "global"])
    mission.add_argument("--snapshot-every", type=int)

    p = argparse.ArgumentParser(prog="rovercopter", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", parents=[common], help="compile an scLTL formula to an FSA")
    c.add_argument("--formula", required=True)
    c.add_argument("--ap", required=True, help="comma-separated atomic propositions")
    c.add_argument("--dot")
    c.add_argument("--json")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", parents=[common, mission], help="single mission run")
    r.add_argument("--rover-start", type=_parse_cell, help="i,j")
    r.add_argument("--copter-start", type=_parse_cell, help="i,j")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("montecarlo", parents=[common, mission],
                       help="paired local/global exploration comparison")
    m.add_argument("--trials", type=int)
    m.add_argument("--fixed-starts", action="store_true", help="use the map's start cells")
    m.set_defaults(func=cmd_montecarlo)

    b = sub.add_parser("benchmark", parents=[common], help="value-iteration scaling table")
    b.add_argument("--config")
    b.add_argument("--sizes", type=_parse_sizes, help="comma-separated cell counts")
    b.add_argument("--repeats", type=int)
    b.set_defaults(func=cmd_benchmark)

    rp = sub.add_parser("report", parents=[common], help="convergence diagnostics of a run")
    rp.add_argument("run_dir")
    rp.add_argument("--every", type=int, default=1, help="use every n-th snapshot")
    rp.add_argument("--no-values", action="store_true", help="skip per-snapshot value gaps")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "montecarlo" and args.trials is not None and args.trials < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (FormulaError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:                           # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
