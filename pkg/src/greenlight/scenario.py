"""Scenario documents: intersection template + overrides, per-movement
demand, scenario events, and simulation settings, loadable from YAML."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from . import core, sensing
from .core import ConfigurationError, ScenarioEvent, build_intersection
from .env import SignalEnv


@dataclass
class ScenarioConfig:
    template: str = "fourleg"
    lane_length: float = 150.0
    sat_headway: float = 2.0
    through_lanes: int = 2
    left_lanes: int = 1
    demand: dict = field(default_factory=dict)      # movement name -> veh/h
    demand_jitter: float = 0.0    # per-episode uniform demand rescale half-width
    events: list = field(default_factory=list)      # ScenarioEvent records
    duration: int = 3600
    seed: int = 0
    min_green: int = core.DEFAULT_MIN_GREEN
    yellow: int = core.DEFAULT_YELLOW
    k: int = sensing.DEFAULT_K
    window_len: int = sensing.DEFAULT_WINDOW_LEN

    def build_intersection(self):
        return build_intersection(
            self.template, lane_length=self.lane_length,
            sat_headway=self.sat_headway, through_lanes=self.through_lanes,
            left_lanes=self.left_lanes)

    def make_env(self, seed=None):
        seed = self.seed if seed is None else seed
        demand = self.demand
        if self.demand_jitter > 0:
            # Rescale every movement's rate once per episode so the policy
            # must read the observed queues instead of memorizing one static
            # demand pattern.
            rng = np.random.default_rng(seed)
            lo, hi = 1 - self.demand_jitter, 1 + self.demand_jitter
            demand = {name: rate * rng.uniform(lo, hi)
                      for name, rate in demand.items()}
        return SignalEnv(
            self.build_intersection(), demand,
            episode_len=self.duration,
            seed=seed,
            events=self.events, k=self.k, window_len=self.window_len,
            min_green=self.min_green, yellow=self.yellow)

    def to_dict(self):
        doc = asdict(self)
        doc["events"] = [asdict(e) for e in self.events]
        return {
            "intersection": {key: doc[key] for key in (
                "template", "lane_length", "sat_headway",
                "through_lanes", "left_lanes")},
            "demand": doc["demand"],
            "demand_jitter": doc["demand_jitter"],
            "events": doc["events"],
            "sim": {key: doc[key] for key in (
                "duration", "seed", "min_green", "yellow")},
            "sensing": {"k": doc["k"], "window_len": doc["window_len"]},
        }

    @classmethod
    def from_dict(cls, doc):
        inter = doc.get("intersection", {})
        sim = doc.get("sim", {})
        sens = doc.get("sensing", {})
        events = []
        for ev in doc.get("events", []):
            if not isinstance(ev, dict):
                raise ConfigurationError(f"bad event record: {ev!r}")
            events.append(ScenarioEvent(**ev))
        return cls(
            template=inter.get("template", "fourleg"),
            lane_length=inter.get("lane_length", 150.0),
            sat_headway=inter.get("sat_headway", 2.0),
            through_lanes=inter.get("through_lanes", 2),
            left_lanes=inter.get("left_lanes", 1),
            demand=dict(doc.get("demand", {})),
            demand_jitter=doc.get("demand_jitter", 0.0),
            events=events,
            duration=sim.get("duration", 3600),
            seed=sim.get("seed", 0),
            min_green=sim.get("min_green", core.DEFAULT_MIN_GREEN),
            yellow=sim.get("yellow", core.DEFAULT_YELLOW),
            k=sens.get("k", sensing.DEFAULT_K),
            window_len=sens.get("window_len", sensing.DEFAULT_WINDOW_LEN),
        )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict):
            raise ConfigurationError(f"scenario file {path} is not a mapping")
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)


# ---------------------------------------------------------------------------
# Built-in presets.  Demand is deliberately asymmetric (heavy north-south
# through traffic) so that adaptive controllers have room to beat fixed
# cycling, and is calibrated to stay under saturation for every template.

ROUTINE_DEMAND = {
    "N_through": 210, "S_through": 210,
    "N_left": 75, "S_left": 75,
    "E_through": 90, "W_through": 90,
    "E_left": 30, "W_left": 30,
}

# Emergency vehicles arrive on the lightly loaded east/west left movements
# (7 and 8), which an efficiency-trained controller serves rarely.
EMV_MOVEMENTS = (7, 8)


def routine_scenario(duration=3600):
    return ScenarioConfig(demand=dict(ROUTINE_DEMAND), duration=duration)


def training_scenario(duration=600, demand_jitter=0.0):
    """Routine demand with short episodes for policy optimization: frequent
    resets keep queues in the regime the occupancy features resolve well,
    which makes value estimation (and thus the advantage signal) far less
    noisy than on hour-long episodes.  A nonzero ``demand_jitter`` rescales
    every movement's rate once per episode, which forces the policy to react
    to the observed queues rather than memorize one static demand split."""
    return ScenarioConfig(demand=dict(ROUTINE_DEMAND), duration=duration,
                          demand_jitter=demand_jitter)


def emv_scenario(num_emv=3, duration=3600, first=400, spacing=500):
    """Routine demand plus evenly spaced emergency arrivals."""
    events = [ScenarioEvent(kind="emergency_spawn",
                            movement=EMV_MOVEMENTS[i % len(EMV_MOVEMENTS)],
                            start_time=first + i * spacing)
              for i in range(num_emv)]
    return ScenarioConfig(demand=dict(ROUTINE_DEMAND), events=events,
                          duration=duration)


# The regulation preset runs a heavier, left-turn-busy demand profile than
# the routine preset (mirroring that disruption studies are reported under
# their own load), with the blockage and the emergency arrivals placed late
# in the episode so that every vehicle they delay still clears before the
# horizon and shows up in the completed-vehicle metrics.
REGULATION_DEMAND = {
    "N_through": 210, "S_through": 210,
    "N_left": 75, "S_left": 75,
    "E_through": 90, "W_through": 90,
    "E_left": 120, "W_left": 120,
}

REGULATION_EMV_TIMES = (3000, 3100, 3195, 3270, 3370, 3430)


def regulation_scenario(duration=3600, start=3200, reg_duration=50,
                        emv_times=REGULATION_EMV_TIMES):
    """Both phase-1 (north-south through) movements blocked for a short
    window, plus emergency arrivals on the east/west left movements."""
    events = [
        ScenarioEvent(kind="regulation", movement=1,
                      start_time=start, duration=reg_duration),
        ScenarioEvent(kind="regulation", movement=2,
                      start_time=start, duration=reg_duration),
    ]
    events += [ScenarioEvent(kind="emergency_spawn",
                             movement=EMV_MOVEMENTS[i % len(EMV_MOVEMENTS)],
                             start_time=t)
               for i, t in enumerate(emv_times)]
    return ScenarioConfig(demand=dict(REGULATION_DEMAND), events=events,
                          duration=duration)
