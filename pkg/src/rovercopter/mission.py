"""Rover mission execution, the alternating exploration/mission loop and
convergence diagnostics against the ground-truth product."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exploration import entropy, global_explore, local_explore
from .mdp import FiniteMdp, build_grid_mdp, reachability_value_iteration, sample_transition
from .product import (
    ProductBeliefMdp,
    _assemble,
    build_product,
    compute_b_max,
    synthesize_policy,
    true_en_tensor,
)
from .scltl import Formula, Fsa, compile as compile_fsa, parse_formula
from .world import (
    BeliefMap,
    ConfigError,
    GridWorld,
    ObservationStats,
    SensorModel,
    check_sensor_cover,
    sweep_and_update,
)

AUTOMATON_MODES = ("ground_truth", "belief_sampled")
EXPLORATION_MODES = ("global", "local")


@dataclass
class MissionConfig:
    T_c: int = 5
    T_r: int = 3
    alpha: float = 1.5
    threshold: float = 0.98
    k_max: int = 300
    vi_horizon: int | None = None       # None: iterate to a fixed point
    automaton_mode: str = "ground_truth"
    exploration: str = "global"
    seed: int = 0
    snapshot_every: int = 1             # rounds between belief snapshots; 0 disables
    rover_success: float = 0.95
    copter_success: float = 0.9

    def validate(self) -> None:
        if self.T_c < 1 or self.T_r < 1:
            raise ConfigError("T_c and T_r must be at least 1")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("threshold must lie in (0, 1]")
        if self.k_max < 0:
            raise ConfigError("k_max must be nonnegative")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.vi_horizon is not None and self.vi_horizon < self.T_r:
            raise ConfigError("value-iteration horizon must be at least T_r")
        if self.automaton_mode not in AUTOMATON_MODES:
            raise ConfigError(f"automaton_mode must be one of {AUTOMATON_MODES}")
        if self.exploration not in EXPLORATION_MODES:
            raise ConfigError(f"exploration must be one of {EXPLORATION_MODES}")
        for p in (self.rover_success, self.copter_success):
            if not 0.0 < p <= 1.0:
                raise ConfigError("motion success probabilities must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "MissionConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown mission config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass
class MissionOutcome:
    position: int
    q: int
    b_max: np.ndarray
    status: str
    value: float
    policy: np.ndarray
    values: np.ndarray
    product: ProductBeliefMdp
    events: list = field(default_factory=list)


def _solve(rover_mdp, fsa, beliefs, x, q, horizon):
    product = build_product(rover_mdp, fsa, beliefs, x, q)
    syn = synthesize_policy(product, horizon=horizon)
    return product, syn


def mission_execution(rover_mdp: FiniteMdp, fsa: Fsa, sensor: SensorModel, beliefs: BeliefMap,
                      x_r: int, q: int, T_r: int, config: MissionConfig,
                      rng: np.random.Generator, k0: int = 0,
                      stats: ObservationStats | None = None) -> MissionOutcome:
    """Plan on the current beliefs, execute ``T_r`` rover steps with sensing,
    then re-plan and recompute ``b_max``.

    ``q`` is the automaton state after reading the labels of the cells the
    rover has already left; the label of the current cell is read on the
    next move, matching the product transition.
    """
    world = beliefs.world
    product, syn = _solve(rover_mdp, fsa, beliefs, x_r, q, config.vi_horizon)
    x = x_r
    events = []
    for step in range(T_r):
        s = product.index(x, q)
        u = int(syn.policy[s])
        if config.automaton_mode == "ground_truth":
            x_next = sample_transition(rover_mdp, x, u, rng)
            q_next = fsa.step(q, world.label_mask(x, fsa.ap))
        else:
            x_next, q_next = product.split(sample_transition(product.mdp, s, u, rng))
        x, q = x_next, q_next
        obs = []
        sweep_and_update(sensor, rng, beliefs, world, x, obs, stats)
        events.append({"step": k0 + step + 1, "agent": "rover", "pos": list(world.pos(x)),
                       "input": rover_mdp.inputs[u], "q": q,
                       "q_label": fsa.step(q, world.label_mask(x, fsa.ap)),
                       "observations": obs})
    product, syn = _solve(rover_mdp, fsa, beliefs, x, q, config.vi_horizon)
    b_max = compute_b_max(product, syn.policy, x, T_r, q)
    value = float(syn.values[product.index(x, q)])
    status = "complete" if value > config.threshold else "pending"
    return MissionOutcome(x, q, b_max, status, value, syn.policy, syn.values, product, events)


@dataclass
class RunTrace:
    k: int = 0
    rounds: int = 0
    status: str = "pending"
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    rover_path: list = field(default_factory=list)
    q_path: list = field(default_factory=list)
    ground_truth_satisfied: bool = False
    stats: ObservationStats | None = None
    beliefs: BeliefMap | None = None
    value: float = 0.0
    b_max: np.ndarray | None = None
    n_succ: list = field(default_factory=list)
    planning_s: float = 0.0
    exploration_s: float = 0.0
    exploration_phase_s: list = field(default_factory=list)

    def summary(self, world: GridWorld | None = None) -> dict:
        out = {
            "status": self.status,
            "k_final": self.k,
            "rounds": self.rounds,
            "ground_truth_satisfied": self.ground_truth_satisfied,
            "final_value": self.value,
            "wall_clock_planning_s": self.planning_s,
            "wall_clock_exploration_s": self.exploration_s,
            "mean_exploration_phase_s": (float(np.mean(self.exploration_phase_s))
                                         if self.exploration_phase_s else 0.0),
        }
        if world is not None and self.beliefs is not None:
            out["theorem1_gap_final"] = theorem1_gap(self.beliefs.values, world)
        return out

    def write(self, out_dir: str | Path, world: GridWorld) -> None:
        """``trace.jsonl``, ``summary.json`` and ``snapshots.npz`` in ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "trace.jsonl", "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(self.summary(world), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.snapshots:
            np.savez_compressed(
                out_dir / "snapshots.npz",
                k=np.array([s["k"] for s in self.snapshots]),
                beliefs=np.stack([s["beliefs"] for s in self.snapshots]),
                visits=np.stack([s["visits"] for s in self.snapshots]),
                n_obs=np.stack([s["n_obs"] for s in self.snapshots]),
                n_correct=np.stack([s["n_correct"] for s in self.snapshots]),
            )


def as_fsa(formula, ap) -> Fsa:
    if isinstance(formula, Fsa):
        return formula
    if isinstance(formula, str):
        formula = parse_formula(formula, ap)
    if not isinstance(formula, Formula):
        raise TypeError("formula must be text, a Formula or an Fsa")
    return compile_fsa(formula, ap)


def _snapshot(trace: RunTrace, k: int, beliefs: BeliefMap, stats: ObservationStats) -> None:
    trace.snapshots.append({"k": k, "beliefs": beliefs.values.copy(), "visits": stats.visits.copy(),
                            "n_obs": stats.n_obs.copy(), "n_correct": stats.n_correct.copy()})


def run(world: GridWorld, formula, config: MissionConfig, rover_sensor: SensorModel,
        copter_sensor: SensorModel, rover_start: int | None = None,
        copter_start: int | None = None, beliefs: BeliefMap | None = None,
        on_round=None) -> RunTrace:
    """Alternate copter exploration and rover mission execution until the
    mission is complete or the clock reaches ``config.k_max``.

    ``on_round(trace, beliefs)`` is called after every round; a true return
    value ends the run early (status ``budget_exhausted`` unless complete).
    """
    config.validate()
    check_sensor_cover(world, rover_sensor, copter_sensor)
    fsa = as_fsa(formula, world.atomic_props)
    x_r = world.index(*world.rover_start) if rover_start is None else rover_start
    x_c = world.index(*world.copter_start) if copter_start is None else copter_start
    for x in (x_r, x_c):
        if not 0 <= x < world.n_cells:
            raise ConfigError(f"start cell {x} out of bounds")

    rover_mdp = build_grid_mdp(world, config.rover_success)
    copter_mdp = build_grid_mdp(world, config.copter_success)
    rover_rng, copter_rng = (np.random.default_rng(s)
                             for s in np.random.SeedSequence(config.seed).spawn(2))
    beliefs = BeliefMap.initial(world) if beliefs is None else beliefs
    stats = ObservationStats(world)
    explore = global_explore if config.exploration == "global" else local_explore

    trace = RunTrace(stats=stats, beliefs=beliefs)
    q = fsa.q0
    trace.rover_path.append(x_r)
    trace.q_path.append(q)
    t0 = time.perf_counter()
    product, syn = _solve(rover_mdp, fsa, beliefs, x_r, q, config.vi_horizon)
    b_max = compute_b_max(product, syn.policy, x_r, config.T_r, q)
    value = float(syn.values[product.index(x_r, q)])
    trace.planning_s += time.perf_counter() - t0
    if config.snapshot_every:
        _snapshot(trace, 0, beliefs, stats)
    k = 0
    status = "complete" if value > config.threshold else "pending"
    while status != "complete" and k < config.k_max:
        t0 = time.perf_counter()
        expl = explore(copter_mdp, copter_sensor, beliefs, b_max, config.alpha, x_c,
                       config.T_c, copter_rng, k0=k, stats=stats)
        dt = time.perf_counter() - t0
        trace.exploration_s += dt
        trace.exploration_phase_s.append(dt)
        x_c = expl.position
        trace.n_succ.append(expl.n_succ)
        trace.records.append({"k": k, "phase": "exploration", "mode": config.exploration,
                              "n_succ": expl.n_succ if config.exploration == "global" else None,
                              "targets": expl.targets})
        trace.records.extend(expl.events)
        k += config.T_c

        t0 = time.perf_counter()
        me = mission_execution(rover_mdp, fsa, rover_sensor, beliefs, x_r, q, config.T_r,
                               config, rover_rng, k0=k, stats=stats)
        trace.planning_s += time.perf_counter() - t0
        trace.records.append({"k": k, "phase": "mission"})
        trace.records.extend(me.events)
        for ev in me.events:
            trace.rover_path.append(world.index(*ev["pos"]))
            trace.q_path.append(ev["q"])
        k += config.T_r
        x_r, q, b_max, value, status = me.position, me.q, me.b_max, me.value, me.status
        trace.rounds += 1
        trace.records.append({"k": k, "phase": "status", "value": value, "status": status})
        if config.snapshot_every and trace.rounds % config.snapshot_every == 0:
            _snapshot(trace, k, beliefs, stats)
        if on_round is not None and on_round(trace, beliefs):
            break

    trace.k = k
    trace.status = "complete" if status == "complete" else "budget_exhausted"
    trace.value = value
    trace.b_max = b_max
    word = [world.label_mask(x, fsa.ap) for x in trace.rover_path]
    trace.ground_truth_satisfied = fsa.accepts(word)
    return trace


# ---------------------------------------------------------------------------
# Ground truth and diagnostics


def ground_truth_product(rover_mdp: FiniteMdp, fsa: Fsa, world: GridWorld,
                         x_r: int = 0, q: int | None = None) -> ProductBeliefMdp:
    """Product with the true labels: ``p_r(x'|x,u)`` iff ``L(x) in en(q, q')``."""
    return _assemble(rover_mdp, fsa, true_en_tensor(world, fsa), x_r, q)


def theorem1_gap(values: np.ndarray, world: GridWorld) -> float:
    return float(np.abs(np.asarray(values) - world.truth()).max())


def row_gap(en: np.ndarray, en_true: np.ndarray) -> float:
    """Largest total-variation distance between product rows.

    Each row factors as ``p_r(x'|x,u) * en[x,q,q']`` and ``p_r`` sums to one,
    so the distance only depends on the automaton factor.
    """
    return float(0.5 * np.abs(en - en_true).sum(axis=2).max())


def convergence_report(trace: RunTrace, world: GridWorld, fsa: Fsa,
                       rover_mdp: FiniteMdp | None = None, values: bool = True,
                       every: int = 1, rover_success: float = 0.95) -> list[dict]:
    """Per-snapshot belief gap, product-row gap, value gap, visit counts and
    map entropy."""
    if rover_mdp is None:
        rover_mdp = build_grid_mdp(world, rover_success)
    truth_product = ground_truth_product(rover_mdp, fsa, world)
    v_true = None
    if values:
        v_true = reachability_value_iteration(truth_product.mdp, truth_product.accepting).values
    out = []
    for idx, snap in enumerate(trace.snapshots):
        if idx % every and idx != len(trace.snapshots) - 1:
            continue
        bm = BeliefMap(world, snap["beliefs"])
        rec = {
            "k": int(snap["k"]),
            "theorem1_gap": theorem1_gap(bm.values, world),
            "min_visits": int(snap["visits"].min()),
            "entropy_sum": float(entropy(bm.values).sum()),
        }
        n_obs, n_cor = snap["n_obs"], snap["n_correct"]
        seen = n_obs > 0
        rec["min_correct_ratio"] = float((n_cor[seen] / n_obs[seen]).min()) if seen.any() else None
        prod = build_product(rover_mdp, fsa, bm, 0)
        rec["corollary1_row_gap"] = row_gap(prod.en, truth_product.en)
        if values:
            v = synthesize_policy(prod).values
            rec["value_gap"] = float(np.abs(v - v_true).max())
        out.append(rec)
    return out
