import json
import math

import numpy as np
import pytest

from rovercopter.world import (
    BeliefMap,
    ConfigError,
    GridWorld,
    ObservationStats,
    SensorModel,
    bayes_posterior,
    bayes_update,
    beta,
    beta_at_distance,
    check_sensor_cover,
    load_map,
    observe,
    sweep_and_update,
)


def grid(w=10, h=10, props=("A",), cells=None):
    return GridWorld.from_cells(w, h, props, cells or {})


# ---------------------------------------------------------------------------
# world and map files


def test_indexing_is_row_major():
    w = grid(4, 3)
    assert w.n_cells == 12
    assert w.index(1, 2) == 9
    assert w.pos(9) == (1, 2)


def test_labels_and_truth():
    w = grid(3, 1, ("A", "O"), {(2, 0): ["A", "O"], (0, 0): ["O"]})
    assert w.label(2) == {"A", "O"}
    assert w.label_mask(2) == 0b11
    assert w.label_mask(0, ["O", "A"]) == 0b01
    assert w.truth().tolist() == [[0, 1], [0, 0], [1, 1]]


@pytest.mark.parametrize("kwargs", [
    dict(width=0, height=2, atomic_props=("A",), labels=()),
    dict(width=1, height=1, atomic_props=("A",), labels=(frozenset({"B"}),)),
    dict(width=1, height=1, atomic_props=("A", "A"), labels=(frozenset(),)),
    dict(width=1, height=1, atomic_props=("A",), labels=(frozenset(),), rover_start=(1, 0)),
])
def test_invalid_worlds(kwargs):
    with pytest.raises(ConfigError):
        GridWorld(**kwargs)


def test_map_json_round_trip(tmp_path):
    w = GridWorld.from_cells(3, 2, ("A", "O"), {(1, 1): ["A"]}, rover_start=(2, 1),
                             copter_start=(0, 1), priors={(4, "A"): 0.3})
    path = tmp_path / "map.json"
    path.write_text(json.dumps(w.to_json()))
    back = load_map(path)
    assert back.labels == w.labels
    assert back.rover_start == (2, 1) and back.copter_start == (0, 1)
    assert back.priors == {(4, "A"): 0.3}
    assert BeliefMap.initial(back)[4, "A"] == 0.3


def test_malformed_map():
    with pytest.raises(ConfigError):
        GridWorld.from_json({"width": 2})
    with pytest.raises(ConfigError):
        GridWorld.from_json({"width": 2, "height": 2, "atomic_props": ["A"],
                             "cells": [{"pos": [5, 0], "labels": ["A"]}]})


def test_belief_map_bounds():
    w = grid(2, 1)
    with pytest.raises(ValueError):
        BeliefMap(w, [[0.5], [1.5]])
    with pytest.raises(ConfigError):
        BeliefMap.initial(w, 0.0)
    assert BeliefMap(w).values.tolist() == [[0.5], [0.5]]


def test_sensor_cover():
    w = grid(2, 1, ("A", "O"))
    rover = SensorModel.uniform("rover", ["A"], 2, 0.5)
    copter = SensorModel.uniform("copter", ["O"], 4, 0.4)
    check_sensor_cover(w, rover, copter)
    with pytest.raises(ConfigError):
        check_sensor_cover(w, rover)
    with pytest.raises(ConfigError):
        check_sensor_cover(w, rover, SensorModel.uniform("copter", ["O", "Z"], 1, 0.4))


def test_sensor_validation():
    with pytest.raises(ConfigError):
        SensorModel.uniform("rover", ["A"], 1, 0.6)
    with pytest.raises(ConfigError):
        SensorModel.uniform("rover", ["A"], -1, 0.4)


# ---------------------------------------------------------------------------
# sensor precision


def test_beta_constants():
    assert beta_at_distance(2, 0.5, 0) == 1.0
    assert beta_at_distance(4, 0.4, 0) == pytest.approx(0.9, abs=1e-12)
    assert beta_at_distance(3, 0.3, 3) == 0.5
    assert beta_at_distance(3, 0.3, 3.5) == 0.5
    assert beta_at_distance(0, 0.3, 0) == 0.8
    assert beta_at_distance(0, 0.3, 1) == 0.5


def test_beta_profile_decreasing_in_distance():
    d = np.linspace(0, 4, 41)
    vals = [beta_at_distance(4, 0.4, x) for x in d]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_beta_uses_euclidean_distance():
    w = grid(5, 5)
    s = SensorModel.uniform("copter", ["A"], 4, 0.4)
    d2 = 1 + 1
    expected = 0.4 / 4 ** 4 * (d2 - 16) ** 2 + 0.5
    assert beta(s, w, w.index(0, 0), w.index(1, 1), "A") == pytest.approx(expected, abs=1e-15)
    with pytest.raises(KeyError):
        beta(s, w, 0, 0, "O")


# ---------------------------------------------------------------------------
# observations and Bayes


def test_observe_deterministic_sensor():
    w = grid(2, 1, cells={(0, 0): ["A"]})
    s = SensorModel.uniform("rover", ["A"], 2, 0.5)
    rng = np.random.default_rng(0)
    assert all(observe(s, rng, 0, 0, "A", w) == 1 for _ in range(50))
    assert all(observe(s, rng, 1, 1, "A", w) == 0 for _ in range(50))


def test_observe_frequency():
    w = grid(1, 1, cells={(0, 0): ["A"]})
    s = SensorModel.uniform("copter", ["A"], 4, 0.4)
    rng = np.random.default_rng(1)
    z = [observe(s, rng, 0, 0, "A", w) for _ in range(100_000)]
    assert abs(np.mean(z) - 0.9) < 0.01


def test_observe_out_of_range():
    w = grid(5, 1)
    s = SensorModel.uniform("rover", ["A"], 2, 0.5)
    with pytest.raises(ValueError):
        observe(s, np.random.default_rng(0), 0, 4, "A", w)


def test_bayes_examples():
    assert bayes_posterior(0.5, 1, 0.9) == pytest.approx(0.9, abs=1e-15)
    assert bayes_posterior(0.37, 1, 0.5) == pytest.approx(0.37, abs=1e-15)
    assert bayes_posterior(0.37, 0, 0.5) == pytest.approx(0.37, abs=1e-15)
    assert bayes_posterior(1.0, 0, 0.8) == 1.0
    assert bayes_posterior(0.0, 1, 0.8) == 0.0


def test_bayes_degenerate_evidence_keeps_prior(caplog):
    assert bayes_posterior(1.0, 0, 1.0) == 1.0
    assert "degenerate evidence" in caplog.text


def test_bayes_update_writes_back():
    bm = BeliefMap(grid(2, 1))
    assert bayes_update(bm, 1, "A", 1, 0.9) == pytest.approx(0.9)
    assert bm[1, "A"] == pytest.approx(0.9) and bm[0, "A"] == 0.5


# ---------------------------------------------------------------------------
# sweeps


def test_sweep_counts():
    w = grid()
    s = SensorModel.uniform("rover", ["A"], 2, 0.5)
    rng = np.random.default_rng(0)
    assert sweep_and_update(s, rng, BeliefMap(w), w, w.index(5, 5)) == 13
    assert sweep_and_update(s, rng, BeliefMap(w), w, w.index(0, 0)) == 6
    zero = SensorModel.uniform("rover", ["A", "O"], 0, 0.3)
    w2 = grid(props=("A", "O"))
    rec = []
    assert sweep_and_update(zero, rng, BeliefMap(w2), w2, 7, rec) == 2
    assert {tuple(r["cell"]) for r in rec} == {w2.pos(7)}


def test_sweep_order_and_record():
    w = grid(3, 3, ("A", "O"))
    s = SensorModel("rover", {"A": 1, "O": 1}, {"A": 0.5, "O": 0.5})
    rec = []
    stats = ObservationStats(w)
    sweep_and_update(s, np.random.default_rng(0), BeliefMap(w), w, w.index(1, 1), rec, stats)
    cells = [tuple(r["cell"]) for r in rec]
    assert cells == [(1, 0), (1, 0), (0, 1), (0, 1), (1, 1), (1, 1), (2, 1), (2, 1), (1, 2), (1, 2)]
    assert [r["prop"] for r in rec[:2]] == ["A", "O"]
    # perfect at the centre, uninformative on the range boundary
    assert all(r["z"] == 0 and r["belief_after"] == 0.0 for r in rec[4:6])
    assert all(r["belief_after"] == 0.5 for r in rec[:4] + rec[6:])
    assert stats.visits[w.index(1, 1)] == 1
    assert stats.n_obs.sum() == 10 and stats.n_correct[w.index(1, 1)].tolist() == [1, 1]


def test_sweep_only_updates_sensor_props():
    w = grid(2, 1, ("A", "O"))
    bm = BeliefMap(w)
    sweep_and_update(SensorModel.uniform("copter", ["O"], 0, 0.4), np.random.default_rng(0), bm, w, 0)
    assert bm[0, "A"] == 0.5 and bm[0, "O"] != 0.5


def test_lattice_count_matches_formula():
    w = grid(21, 21)
    centre = w.index(10, 10)
    for r in [0, 1, 1.5, 2, 3, 4.2]:
        n = sum(1 for i in range(-5, 6) for j in range(-5, 6) if math.hypot(i, j) <= r)
        assert len(w.cells_within(centre, r)) == n
