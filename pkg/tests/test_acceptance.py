"""Acceptance suite.  Each test prints one ``CRITERION n: PASS|FAIL`` line
(visible in the terminal even when output is captured) and then asserts.

Criteria 2, 5-8 take minutes in total; they carry the ``slow`` marker so
``pytest -m "not slow"`` skips them, but the default run includes them.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from rovercopter import experiments
from rovercopter.cli import default_config_path, load_experiment
from rovercopter.mdp import FiniteMdp, build_grid_mdp, evaluate_policy, reachability_value_iteration
from rovercopter.mission import MissionConfig, as_fsa, ground_truth_product, run, theorem1_gap
from rovercopter.product import belief_en, build_product, synthesize_policy
from rovercopter.scltl import compile, compile_text
from rovercopter.world import BeliefMap, GridWorld, SensorModel, beta_at_distance, load_map

from oracles import (
    WordOracle,
    dense_rows,
    expectimax_reach,
    first_accept,
    first_good_prefix,
    formulas_up_to_depth,
    policy_enumeration_reach,
    product_rows_by_definition,
)

HERE = Path(__file__).parent


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


def test_criterion_1_belief_en(report):
    w = GridWorld.from_cells(2, 1, ("a", "b"), {(1, 0): ["a"]})
    bm = BeliefMap(w, [[0.1, 0.1], [0.9, 0.2]])
    fsa = compile_text("F a", ["a", "b"])
    got = [belief_en(bm, fsa, 0, 0, 0), belief_en(bm, fsa, 0, 0, 1), belief_en(bm, fsa, 1, 0, 1)]
    err = max(abs(g - e) for g, e in zip(got, (0.9, 0.1, 0.9)))
    assert report(1, err < 1e-12, f"values={got} max_err={err:.1e}")


@pytest.mark.slow
def test_criterion_2_compiler_oracle(report):
    atoms = ["a", "b", "c"]
    n_sym, max_len = 8, 5
    t0 = time.perf_counter()
    formulas = formulas_up_to_depth(atoms, 3)
    oracles = {L: WordOracle(atoms, L) for L in range(max_len + 1)}
    bad = []
    for f in formulas:
        fsa = compile(f, atoms)
        if first_accept(fsa, n_sym, max_len).tolist() != first_good_prefix(f, oracles, max_len).tolist():
            bad.append(f)
        if fsa.accepts([]) != bool(oracles[0].table(f, keep=False)[0, 0]):
            bad.append(f)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 60
    assert report(2, ok, f"formulas={len(formulas)} words<=len{max_len} mismatches={len(bad)} "
                         f"runtime={elapsed:.1f}s"), bad[:5]


def test_criterion_3_sensor_constants(report):
    checks = [
        (beta_at_distance(2.0, 0.5, 0.0), 1.0),
        (beta_at_distance(4.0, 0.4, 0.0), 0.9),
        (beta_at_distance(2.0, 0.4, 2.0), 0.5),
        (beta_at_distance(2.0, 0.5, 3.5), 0.5),
        (beta_at_distance(0.0, 0.4, 0.0), 0.9),
        (beta_at_distance(0.0, 0.4, 1.0), 0.5),
    ]
    err = max(abs(g - e) for g, e in checks)
    assert report(3, err < 1e-12, f"max_err={err:.1e} over {len(checks)} cases")


def test_criterion_4_value_iteration_oracle(report):
    rng = np.random.default_rng(44)
    worst, cases = 0.0, 0
    texts = ["F a", "!b U a", "X a", "a U X b", "!a U b"]
    for trial in range(40):
        n = int(rng.integers(1, 4))
        w = GridWorld.from_cells(n, 1, ("a", "b"))
        mdp = build_grid_mdp(w, float(rng.uniform(0.5, 1.0)))
        fsa = compile_text(texts[trial % len(texts)], ["a", "b"])
        if fsa.n_states > 3:
            continue
        vals = rng.random((n, 2))
        product = build_product(mdp, fsa, BeliefMap(w, vals), 0)
        ref = product_rows_by_definition(dense_rows(mdp), fsa.delta, vals)
        target = set(np.flatnonzero(product.accepting).tolist())
        for h in (1, 2, 3):
            V = synthesize_policy(product, horizon=h).values
            if product.n_states * product.mdp.n_inputs <= 9 and h <= 2:
                # exhaustive over every time-varying Markov policy
                E = policy_enumeration_reach(ref, target, h)
                worst = max(worst, float(np.abs(V - E).max()))
            for s in range(product.n_states):
                worst = max(worst, abs(V[s] - expectimax_reach(ref, target, s, h)))
            cases += 1
    # the two-cell worked example
    w = GridWorld.from_cells(2, 1, ("a", "b"), {(1, 0): ["a"]})
    bm = BeliefMap(w, [[0.1, 0.1], [0.9, 0.2]])
    product = build_product(FiniteMdp([np.eye(2)], ["stay"]), compile_text("F a", ["a", "b"]), bm, 1)
    v2 = synthesize_policy(product, horizon=2).values[product.s0]
    ok = worst < 1e-12 and abs(v2 - 0.99) <= 1e-15
    assert report(4, ok, f"cases={cases} max_err={worst:.1e} worked_value={v2!r}")


# ---------------------------------------------------------------------------
# criteria 5 and 6 share one batch of runs


CONVERGENCE_SEEDS = range(20)
CONVERGENCE_ROUNDS = 500


def convergence_world():
    return GridWorld.from_cells(4, 4, ("A", "O"), {(3, 3): ["A"], (1, 2): ["O"], (2, 1): ["O"]},
                                rover_start=(0, 0), copter_start=(3, 0))


@pytest.fixture(scope="module")
def convergence_runs():
    world = convergence_world()
    # zero range, magnitude 0.3: precision 0.8 on the occupied cell only
    rover = SensorModel.uniform("rover", ("A", "O"), 0.0, 0.3)
    copter = SensorModel.uniform("copter", ("A", "O"), 0.0, 0.3)
    traces = []
    t0 = time.perf_counter()
    for s in CONVERGENCE_SEEDS:
        # threshold 1.0 is never exceeded, so every run lasts the full budget
        cfg = MissionConfig(alpha=0.0, threshold=1.0, k_max=CONVERGENCE_ROUNDS * 8, seed=s,
                            exploration="global")
        traces.append(run(world, "!O U (!O & A)", cfg, rover, copter))
    return world, traces, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_belief_convergence(report, convergence_runs):
    world, traces, elapsed = convergence_runs
    gaps = [theorem1_gap(t.beliefs.values, world) for t in traces]
    first = []
    for t in traces:
        hit = [i for i, snap in enumerate(t.snapshots) if theorem1_gap(snap["beliefs"], world) < 0.01]
        first.append(hit[0] if hit else None)
    n_ok = sum(g < 0.01 for g in gaps)
    rounds = {t.rounds for t in traces}
    ok = n_ok >= 19 and rounds == {CONVERGENCE_ROUNDS} and elapsed < 120
    crossed = [f for f in first if f is not None]
    assert report(5, ok, f"runs_converged={n_ok}/20 max_final_gap={max(gaps):.1e} "
                         f"first_round_below_0.01=[{min(crossed)}..{max(crossed)}] "
                         f"runtime={elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_6_policy_convergence(report, convergence_runs):
    world, traces, _ = convergence_runs
    mdp = build_grid_mdp(world, MissionConfig().rover_success)
    fsa = as_fsa("!O U (!O & A)", world.atomic_props)
    truth = ground_truth_product(mdp, fsa, world)
    v_hat = reachability_value_iteration(truth.mdp, truth.accepting, max_sweeps=100_000).values
    worst_policy, worst_value, n_ok = 0.0, 0.0, 0
    for t in traces:
        bp = build_product(mdp, fsa, t.beliefs, 0)
        syn = synthesize_policy(bp)
        # the belief-product policy run on the true product
        v_pi = evaluate_policy(truth.mdp, syn.policy, truth.accepting, max_sweeps=100_000)
        gp = float(np.abs(v_pi - v_hat).max())
        gv = float(np.abs(syn.values - v_hat).max())
        worst_policy, worst_value = max(worst_policy, gp), max(worst_value, gv)
        n_ok += gp < 1e-3
    ok = n_ok == len(traces)
    assert report(6, ok, f"runs_within_1e-3={n_ok}/{len(traces)} max_policy_gap={worst_policy:.1e} "
                         f"max_value_gap={worst_value:.1e} (states={truth.n_states})")


# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_local_vs_global(report):
    cfg, base = load_experiment(default_config_path())
    world = load_map(base / cfg["map"])
    config = MissionConfig.from_dict(cfg["mission"])
    rover = SensorModel.from_json(cfg["rover_sensor"])
    copter = SensorModel.from_json(cfg["copter_sensor"])
    t0 = time.perf_counter()
    results = experiments.montecarlo(world, cfg["formula"], config, rover, copter,
                                     cfg["montecarlo"]["trials"], cfg["montecarlo"]["random_starts"])
    elapsed = time.perf_counter() - t0
    agg = experiments.aggregate(results)
    ok = (agg["global_complete"] >= agg["local_complete"]
          and agg["global_mean_explore_s"] > agg["local_mean_explore_s"])
    assert report(7, ok, f"trials={agg['trials']} complete global={agg['global_complete']} "
                         f"local={agg['local_complete']} mean_explore_s "
                         f"global={agg['global_mean_explore_s']:.4f} local={agg['local_mean_explore_s']:.4f} "
                         f"satisfied global={agg['global_satisfied']} local={agg['local_satisfied']} "
                         f"runtime={elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8_benchmark(report):
    cfg, _ = load_experiment(default_config_path())
    sizes = cfg["benchmark"]["sizes"]
    rows = experiments.benchmark(sizes, repeats=cfg["benchmark"]["repeats"])
    t = [r["seconds"] for r in rows]
    monotone = all(t[j] >= max(t[:j]) / 2 for j in range(1, len(t)))
    ok = rows[-1]["n"] == 100 and t[-1] < 60 and monotone
    detail = " ".join(f"n={r['n']}:{r['seconds'] * 1e3:.2f}ms" for r in rows)
    assert report(8, ok, f"{detail} monotone_within_2x={monotone}")


def test_criterion_9_property_suites(report):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(HERE / "test_properties.py")], capture_output=True, text=True,
                          cwd=HERE.parent)
    last = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    assert report(9, proc.returncode == 0, last), proc.stdout[-2000:]
