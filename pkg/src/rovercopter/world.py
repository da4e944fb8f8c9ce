"""Grid environment, Bernoulli sensors and the environmental belief map."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid world, sensor or mission configuration."""


@dataclass(frozen=True, eq=False)
class GridWorld:
    """``width x height`` grid of cells ``[i, j]``; ground-truth labels per cell.

    Cells are indexed row-major: ``index = j * width + i``.
    """
    width: int
    height: int
    atomic_props: tuple[str, ...]
    labels: tuple[frozenset, ...]
    rover_start: tuple[int, int] = (0, 0)
    copter_start: tuple[int, int] = (0, 0)
    priors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("grid dimensions must be positive")
        if len(self.labels) != self.width * self.height:
            raise ConfigError("one label set per cell required")
        props = set(self.atomic_props)
        if len(props) != len(self.atomic_props):
            raise ConfigError("duplicate atomic propositions")
        for lab in self.labels:
            if not lab <= props:
                raise ConfigError(f"labels {sorted(lab - props)} not in atomic_props")
        for start in (self.rover_start, self.copter_start):
            if not self.in_bounds(*start):
                raise ConfigError(f"start {list(start)} out of bounds")

    @classmethod
    def from_cells(cls, width, height, atomic_props, cells: dict | None = None, **kw) -> "GridWorld":
        """``cells`` maps ``(i, j)`` to an iterable of proposition names."""
        labels = [frozenset()] * (width * height)
        for (i, j), names in (cells or {}).items():
            if not (0 <= i < width and 0 <= j < height):
                raise ConfigError(f"labeled cell {[i, j]} out of bounds")
            labels[j * width + i] = frozenset(names)
        return cls(width, height, tuple(atomic_props), tuple(labels), **kw)

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def n_props(self) -> int:
        return len(self.atomic_props)

    def in_bounds(self, i, j) -> bool:
        return 0 <= i < self.width and 0 <= j < self.height

    def index(self, i: int, j: int) -> int:
        return j * self.width + i

    def pos(self, x: int) -> tuple[int, int]:
        return x % self.width, x // self.width

    def prop_index(self, ap: str) -> int:
        return self.atomic_props.index(ap)

    def label(self, x: int) -> frozenset:
        return self.labels[x]

    def label_mask(self, x: int, ap_order: Sequence[str] | None = None) -> int:
        order = self.atomic_props if ap_order is None else ap_order
        return sum(1 << k for k, a in enumerate(order) if a in self.labels[x])

    def truth(self) -> np.ndarray:
        """Indicator array ``(n_cells, n_props)`` of the true labeling."""
        t = np.zeros((self.n_cells, self.n_props))
        for x, lab in enumerate(self.labels):
            for a in lab:
                t[x, self.prop_index(a)] = 1.0
        return t

    def distance(self, x: int, y: int) -> float:
        (i1, j1), (i2, j2) = self.pos(x), self.pos(y)
        return math.hypot(i1 - i2, j1 - j2)

    def cells_within(self, x: int, radius: float) -> list[int]:
        """Cells at Euclidean distance ``<= radius`` from ``x``, row-major."""
        i0, j0 = self.pos(x)
        r = int(math.floor(radius))
        out = []
        for j in range(max(0, j0 - r), min(self.height, j0 + r + 1)):
            for i in range(max(0, i0 - r), min(self.width, i0 + r + 1)):
                if (i - i0) ** 2 + (j - j0) ** 2 <= radius * radius:
                    out.append(j * self.width + i)
        return out

    def to_json(self) -> dict:
        cells = [
            {"pos": list(self.pos(x)), "labels": [a for a in self.atomic_props if a in lab]}
            for x, lab in enumerate(self.labels) if lab
        ]
        data = {
            "width": self.width,
            "height": self.height,
            "atomic_props": list(self.atomic_props),
            "cells": cells,
            "rover_start": list(self.rover_start),
            "copter_start": list(self.copter_start),
        }
        if self.priors:
            data["priors"] = [
                {"pos": list(self.pos(x)), "prop": ap, "value": v}
                for (x, ap), v in sorted(self.priors.items())
            ]
        return data

    @classmethod
    def from_json(cls, data: dict) -> "GridWorld":
        try:
            w, h = int(data["width"]), int(data["height"])
            props = tuple(data["atomic_props"])
            cells = {}
            for c in data.get("cells", []):
                i, j = c["pos"]
                cells[(int(i), int(j))] = c.get("labels", [])
            priors = {}
            for p in data.get("priors", []) or []:
                i, j = p["pos"]
                if not (0 <= i < w and 0 <= j < h):
                    raise ConfigError(f"prior at {[i, j]} out of bounds")
                if p["prop"] not in props:
                    raise ConfigError(f"prior for unknown proposition {p['prop']!r}")
                priors[(j * w + i, p["prop"])] = float(p["value"])
            return cls.from_cells(
                w, h, props, cells,
                rover_start=tuple(data.get("rover_start", (0, 0))),
                copter_start=tuple(data.get("copter_start", (0, 0))),
                priors=priors,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed map file: {exc}") from exc


def load_map(path: str | Path) -> GridWorld:
    with open(path) as fh:
        return GridWorld.from_json(json.load(fh))


class BeliefMap:
    """Posterior ``B(x |= ap)`` for every cell and proposition.

    Values live in ``self.values`` with shape ``(n_cells, n_props)``.
    """

    def __init__(self, world: GridWorld, values: np.ndarray | None = None):
        self.world = world
        if values is None:
            values = np.full((world.n_cells, world.n_props), 0.5)
        values = np.array(values, dtype=float)
        if values.shape != (world.n_cells, world.n_props):
            raise ValueError(f"belief array must have shape {(world.n_cells, world.n_props)}")
        if ((values < 0) | (values > 1)).any():
            raise ValueError("beliefs must lie in [0, 1]")
        self.values = values

    @classmethod
    def initial(cls, world: GridWorld, default: float = 0.5) -> "BeliefMap":
        """Uniform ``default`` overridden by the world's priors."""
        if not 0.0 < default < 1.0:
            raise ConfigError("initial beliefs must lie strictly inside (0, 1)")
        bm = cls(world, np.full((world.n_cells, world.n_props), default))
        for (x, ap), v in world.priors.items():
            if not 0.0 < v < 1.0:
                raise ConfigError(f"prior {v} for {ap} at cell {x} must lie in (0, 1)")
            bm.values[x, world.prop_index(ap)] = v
        return bm

    def __getitem__(self, key):
        x, ap = key
        if isinstance(ap, str):
            ap = self.world.prop_index(ap)
        return float(self.values[x, ap])

    def __setitem__(self, key, value):
        x, ap = key
        if isinstance(ap, str):
            ap = self.world.prop_index(ap)
        self.values[x, ap] = value

    def copy(self) -> "BeliefMap":
        return BeliefMap(self.world, self.values.copy())

    def grid(self, ap: str) -> np.ndarray:
        """Belief of ``ap`` as a ``(height, width)`` array (row ``j``)."""
        return self.values[:, self.world.prop_index(ap)].reshape(self.world.height, self.world.width)


@dataclass(frozen=True)
class SensorModel:
    """Bernoulli sensor: per-proposition range ``R`` and magnitude ``M``."""
    owner: str
    ranges: dict
    magnitudes: dict

    def __post_init__(self):
        if set(self.ranges) != set(self.magnitudes):
            raise ConfigError("ranges and magnitudes must cover the same propositions")
        for ap, r in self.ranges.items():
            if r < 0:
                raise ConfigError(f"negative sensor range for {ap}")
        for ap, m in self.magnitudes.items():
            if not 0.0 < m <= 0.5:
                raise ConfigError(f"sensor magnitude for {ap} must lie in (0, 0.5]")

    @classmethod
    def uniform(cls, owner: str, props: Iterable[str], radius: float, magnitude: float) -> "SensorModel":
        props = list(props)
        return cls(owner, {a: radius for a in props}, {a: magnitude for a in props})

    @property
    def props(self) -> tuple[str, ...]:
        return tuple(self.ranges)

    def to_json(self) -> dict:
        return {"owner": self.owner, "ranges": dict(self.ranges), "magnitudes": dict(self.magnitudes)}

    @classmethod
    def from_json(cls, data: dict) -> "SensorModel":
        return cls(data["owner"], dict(data["ranges"]), dict(data["magnitudes"]))


def check_sensor_cover(world: GridWorld, *sensors: SensorModel) -> None:
    covered = set()
    for s in sensors:
        extra = set(s.props) - set(world.atomic_props)
        if extra:
            raise ConfigError(f"{s.owner} sensor observes unknown propositions {sorted(extra)}")
        covered |= set(s.props)
    missing = set(world.atomic_props) - covered
    if missing:
        raise ConfigError(f"no sensor observes {sorted(missing)}")


def beta_at_distance(radius: float, magnitude: float, d: float) -> float:
    if radius == 0:
        return magnitude + 0.5 if d == 0 else 0.5
    if d > radius:
        return 0.5
    return magnitude / radius ** 4 * (d * d - radius * radius) ** 2 + 0.5


def beta(sensor: SensorModel, world: GridWorld, x: int, x_obs: int, ap: str) -> float:
    """Sensor precision for observing ``ap`` at ``x_obs`` from ``x``."""
    if ap not in sensor.ranges:
        raise KeyError(f"{sensor.owner} sensor cannot observe {ap!r}")
    return beta_at_distance(sensor.ranges[ap], sensor.magnitudes[ap], world.distance(x, x_obs))


def observe(sensor: SensorModel, rng: np.random.Generator, x: int, x_obs: int, ap: str,
            world: GridWorld) -> int:
    """Draw a binary measurement of ``ap`` at ``x_obs``; correct w.p. beta."""
    if ap not in sensor.ranges:
        raise KeyError(f"{sensor.owner} sensor cannot observe {ap!r}")
    if world.distance(x, x_obs) > sensor.ranges[ap]:
        raise ValueError(f"cell {world.pos(x_obs)} is outside the {ap} sensor range")
    b = beta(sensor, world, x, x_obs, ap)
    truth = 1 if ap in world.labels[x_obs] else 0
    return truth if rng.random() < b else 1 - truth


def bayes_posterior(b: float, z: int, precision: float) -> float:
    like_true = precision if z else 1.0 - precision
    like_false = 1.0 - precision if z else precision
    num = like_true * b
    den = num + like_false * (1.0 - b)
    if den == 0.0:
        log.warning("degenerate evidence: prior %s contradicts z=%s at precision %s", b, z, precision)
        return b
    return num / den


def bayes_update(beliefs: BeliefMap, x_obs: int, ap, z: int, precision: float) -> float:
    """Apply one Bernoulli measurement to ``B(x_obs |= ap)``; returns the posterior."""
    k = beliefs.world.prop_index(ap) if isinstance(ap, str) else ap
    post = bayes_posterior(float(beliefs.values[x_obs, k]), z, precision)
    beliefs.values[x_obs, k] = post
    return post


class ObservationStats:
    """Visit counts per cell plus measurement and correct-measurement counts
    per (cell, proposition)."""

    def __init__(self, world: GridWorld):
        self.visits = np.zeros(world.n_cells, dtype=np.int64)
        self.n_obs = np.zeros((world.n_cells, world.n_props), dtype=np.int64)
        self.n_correct = np.zeros((world.n_cells, world.n_props), dtype=np.int64)

    def copy(self) -> "ObservationStats":
        other = object.__new__(ObservationStats)
        other.visits = self.visits.copy()
        other.n_obs = self.n_obs.copy()
        other.n_correct = self.n_correct.copy()
        return other


def sweep_and_update(sensor: SensorModel, rng: np.random.Generator, beliefs: BeliefMap,
                     world: GridWorld, x: int, record: list | None = None,
                     stats: ObservationStats | None = None) -> int:
    """Measure every in-range (cell, prop) pair from ``x`` and update beliefs.

    Order is row-major over cells, then proposition order.  When ``record`` is
    given, one dict per measurement is appended to it.
    """
    props = [a for a in world.atomic_props if a in sensor.ranges]
    max_r = max((sensor.ranges[a] for a in props), default=-1.0)
    if stats is not None:
        stats.visits[x] += 1
    if max_r < 0:
        return 0
    count = 0
    for x_obs in world.cells_within(x, max_r):
        d = world.distance(x, x_obs)
        for ap in props:
            radius = sensor.ranges[ap]
            if d > radius:
                continue
            b = beta_at_distance(radius, sensor.magnitudes[ap], d)
            truth = 1 if ap in world.labels[x_obs] else 0
            z = truth if rng.random() < b else 1 - truth
            post = bayes_update(beliefs, x_obs, ap, z, b)
            count += 1
            if stats is not None:
                k = world.prop_index(ap)
                stats.n_obs[x_obs, k] += 1
                stats.n_correct[x_obs, k] += z == truth
            if record is not None:
                record.append({"cell": list(world.pos(x_obs)), "prop": ap, "z": z, "belief_after": post})
    return count
