"""Paired local/global Monte Carlo comparison and value-iteration scaling
benchmark."""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .mdp import build_grid_mdp
from .mission import MissionConfig, as_fsa, run
from .product import build_product, synthesize_policy
from .world import BeliefMap, ConfigError, GridWorld, SensorModel

BENCHMARK_FORMULA = "!O U (!O & A)"
MC_FIELDS = ("trial", "start_r", "start_c", "local_complete", "global_complete",
             "local_satisfied", "global_satisfied", "local_k", "global_k",
             "local_explore_s", "global_explore_s")


@dataclass
class TrialResult:
    trial: int
    start_r: int
    start_c: int
    local_complete: bool
    global_complete: bool
    local_satisfied: bool
    global_satisfied: bool
    local_k: int
    global_k: int
    local_explore_s: float
    global_explore_s: float

    def row(self, world: GridWorld) -> dict:
        out = asdict(self)
        out["start_r"] = "%d;%d" % world.pos(self.start_r)
        out["start_c"] = "%d;%d" % world.pos(self.start_c)
        return out


def draw_starts(world: GridWorld, rng: np.random.Generator, avoid: str | None = "O") -> tuple[int, int]:
    """Uniform rover and copter starts; the rover avoids cells labeled ``avoid``."""
    rover_cells = [x for x in range(world.n_cells)
                   if avoid is None or avoid not in world.labels[x]]
    if not rover_cells:
        raise ConfigError("no admissible rover start cell")
    x_r = rover_cells[int(rng.integers(len(rover_cells)))]
    x_c = int(rng.integers(world.n_cells))
    return x_r, x_c


def run_trial(world: GridWorld, formula: str, config: MissionConfig, rover_sensor: SensorModel,
              copter_sensor: SensorModel, trial: int, random_starts: bool = True) -> TrialResult:
    seed = config.seed + trial
    if random_starts:
        x_r, x_c = draw_starts(world, np.random.default_rng([seed, 1]))
    else:
        x_r, x_c = world.index(*world.rover_start), world.index(*world.copter_start)
    arms = {}
    for mode in ("local", "global"):
        # identical seed, hence identical sensor/motion streams, for both arms
        cfg = replace(config, exploration=mode, seed=seed, snapshot_every=0)
        arms[mode] = run(world, formula, cfg, rover_sensor, copter_sensor, x_r, x_c)
    lo, gl = arms["local"], arms["global"]
    return TrialResult(trial, x_r, x_c, lo.status == "complete", gl.status == "complete",
                       lo.ground_truth_satisfied, gl.ground_truth_satisfied, lo.k, gl.k,
                       float(np.mean(lo.exploration_phase_s)) if lo.exploration_phase_s else 0.0,
                       float(np.mean(gl.exploration_phase_s)) if gl.exploration_phase_s else 0.0)


def _trial_job(args):
    return run_trial(*args)


def montecarlo(world: GridWorld, formula: str, config: MissionConfig, rover_sensor: SensorModel,
               copter_sensor: SensorModel, n_trials: int, random_starts: bool = True,
               threads: int = 1) -> list[TrialResult]:
    """Trial ``t`` uses seed ``config.seed + t`` for both arms."""
    if n_trials < 1:
        raise ConfigError("trial count must be at least 1")
    config.validate()
    jobs = [(world, formula, config, rover_sensor, copter_sensor, t, random_starts)
            for t in range(n_trials)]
    if threads <= 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_trial_job, jobs))


def aggregate(results: list[TrialResult]) -> dict:
    def mean_phase(attr, flag=None):
        # trials whose mission completed before any exploration contribute no phase time
        vals = [getattr(r, attr) for r in results if getattr(r, attr) > 0]
        return float(np.mean(vals)) if vals else 0.0

    return {
        "trials": len(results),
        "local_complete": sum(r.local_complete for r in results),
        "global_complete": sum(r.global_complete for r in results),
        "local_satisfied": sum(r.local_satisfied for r in results),
        "global_satisfied": sum(r.global_satisfied for r in results),
        "local_mean_explore_s": mean_phase("local_explore_s"),
        "global_mean_explore_s": mean_phase("global_explore_s"),
    }


def write_montecarlo_csv(path: str | Path, results: list[TrialResult], world: GridWorld) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MC_FIELDS)
        w.writeheader()
        for r in results:
            w.writerow(r.row(world))


def grid_shape(n: int) -> tuple[int, int]:
    """Factor pair of ``n`` closest to square, width >= height."""
    if n < 1:
        raise ConfigError("grid size must be at least 1")
    h = max(d for d in range(1, math.isqrt(n) + 1) if n % d == 0)
    return n // h, h


def benchmark_world(n: int) -> GridWorld:
    w, h = grid_shape(n)
    return GridWorld.from_cells(w, h, ("A", "O"))


def benchmark(sizes, seed: int = 0, rover_success: float = 0.95, repeats: int = 1) -> list[dict]:
    """Wall-clock of building and solving the product for each grid size,
    random uniform priors in (0, 1); best of ``repeats``."""
    rng = np.random.default_rng(seed)
    out = []
    for n in sizes:
        world = benchmark_world(n)
        fsa = as_fsa(BENCHMARK_FORMULA, world.atomic_props)
        mdp = build_grid_mdp(world, rover_success)
        values = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=(world.n_cells, world.n_props))
        beliefs = BeliefMap(world, values)
        best = math.inf
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            product = build_product(mdp, fsa, beliefs, 0)
            syn = synthesize_policy(product)
            best = min(best, time.perf_counter() - t0)
        w, h = grid_shape(n)
        out.append({"n": n, "width": w, "height": h, "states": product.n_states,
                    "sweeps": syn.sweeps, "seconds": best})
    return out
