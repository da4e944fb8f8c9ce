"""Copter exploration driven by belief entropy and the rover's reach map."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import TIE_TOL, FiniteMdp, reachability_value_iteration, sample_transition
from .world import BeliefMap, SensorModel, sweep_and_update


def entropy(b):
    """Binary entropy in bits, ``0 log 0 := 0``; works on scalars and arrays."""
    arr = np.asarray(b, dtype=float)
    if ((arr < 0) | (arr > 1)).any() or np.isnan(arr).any():
        raise ValueError("entropy is defined on [0, 1] only")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(arr * np.log2(arr)) - (1 - arr) * np.log2(1 - arr)
    h = np.where((arr == 0) | (arr == 1), 0.0, h)
    return float(h) if h.ndim == 0 else h


def acquisition_field(beliefs: BeliefMap, b_max: np.ndarray, alpha: float,
                      props) -> np.ndarray:
    """``W`` for every cell: entropy summed over ``props`` plus ``alpha * b_max``."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    cols = [beliefs.world.prop_index(a) for a in props]
    W = entropy(beliefs.values[:, cols]).reshape(beliefs.world.n_cells, len(cols)).sum(axis=1)
    return W + alpha * np.asarray(b_max, dtype=float)


def acquisition(beliefs: BeliefMap, b_max: np.ndarray, alpha: float, x: int, props=None) -> float:
    props = beliefs.world.atomic_props if props is None else props
    cols = [beliefs.world.prop_index(a) for a in props]
    return float(sum(entropy(beliefs.values[x, c]) for c in cols) + alpha * b_max[x])


def _first_max(values: np.ndarray) -> int:
    best = values.max()
    return int(np.flatnonzero(values >= best - TIE_TOL)[0])


@dataclass
class ExplorationOutcome:
    position: int
    steps: int
    n_succ: int = 0
    events: list = field(default_factory=list)
    targets: list = field(default_factory=list)


def local_explore(copter_mdp: FiniteMdp, sensor: SensorModel, beliefs: BeliefMap,
                  b_max: np.ndarray, alpha: float, x_c: int, T_c: int,
                  rng: np.random.Generator, k0: int = 0, stats=None) -> ExplorationOutcome:
    """One-step greedy exploration for ``T_c`` steps."""
    if T_c < 1:
        raise ValueError("T_c must be at least 1")
    world = beliefs.world
    x = x_c
    out = ExplorationOutcome(x, 0)
    for step in range(T_c):
        W = acquisition_field(beliefs, b_max, alpha, sensor.props)
        expected = np.empty(copter_mdp.n_inputs)
        for u in range(copter_mdp.n_inputs):
            idx, p = copter_mdp.row(x, u)
            expected[u] = p @ W[idx]
        u = _first_max(expected)
        x = sample_transition(copter_mdp, x, u, rng)
        obs = []
        sweep_and_update(sensor, rng, beliefs, world, x, obs, stats)
        out.events.append({"step": k0 + step + 1, "agent": "copter", "pos": list(world.pos(x)),
                           "input": copter_mdp.inputs[u], "observations": obs})
    out.position = x
    out.steps = T_c
    return out


def global_explore(copter_mdp: FiniteMdp, sensor: SensorModel, beliefs: BeliefMap,
                   b_max: np.ndarray, alpha: float, x_c: int, T_c: int,
                   rng: np.random.Generator, k0: int = 0, stats=None) -> ExplorationOutcome:
    """Repeatedly pick the cell of highest acquisition and drive there.

    When the copter already sits on the selected cell it holds position for
    one step (the reach policy's input at the target) so that every selection
    consumes motion budget.
    """
    if T_c < 1:
        raise ValueError("T_c must be at least 1")
    world = beliefs.world
    x = x_c
    out = ExplorationOutcome(x, 0)
    # reach policies depend only on the copter MDP, so they live on it
    policies: dict[int, np.ndarray] = copter_mdp.__dict__.setdefault("_reach_policies", {})
    steps = 0
    while steps < T_c:
        W = acquisition_field(beliefs, b_max, alpha, sensor.props)
        target = _first_max(W)
        out.targets.append({"step": k0 + steps, "target": list(world.pos(target)),
                            "acquisition": float(W[target]), "max_acquisition": float(W.max())})
        if target not in policies:
            policies[target] = reachability_value_iteration(copter_mdp, [target]).policy
        policy = policies[target]
        moved = False
        while steps < T_c and (x != target or not moved):
            u = int(policy[x])
            x = sample_transition(copter_mdp, x, u, rng)
            steps += 1
            moved = True
            obs = []
            sweep_and_update(sensor, rng, beliefs, world, x, obs, stats)
            out.events.append({"step": k0 + steps, "agent": "copter", "pos": list(world.pos(x)),
                               "input": copter_mdp.inputs[u], "target": list(world.pos(target)),
                               "observations": obs})
        if x == target:
            out.n_succ += 1
    out.position = x
    out.steps = steps
    return out
