"""Reference controllers behind the same decision interface as the learned
backbone: fixed-time cycling, Webster demand-proportional plans, and
max-pressure greedy selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensing import available_phases

WEBSTER_MIN_CYCLE = 30.0
WEBSTER_MAX_CYCLE = 120.0
WEBSTER_REPLAN_PERIOD = 300   # seconds of trailing demand per replan


@dataclass(frozen=True)
class ControllerDecision:
    target: int
    reason: str


class FixTimeController:
    """Cycle phases in id order with a constant green duration."""

    def __init__(self, cycle_phase_len=30):
        self.cycle_phase_len = cycle_phase_len

    def decide(self, world, obs=None, avail=None):
        sig = world.signal
        if sig.in_yellow:
            return ControllerDecision(sig.pending_phase, "fixtime:yellow")
        if sig.phase_elapsed >= self.cycle_phase_len:
            nxt = sig.active_phase % world.intersection.num_phases + 1
            return ControllerDecision(nxt, "fixtime:advance")
        return ControllerDecision(sig.active_phase, "fixtime:hold")


@dataclass(frozen=True)
class WebsterPlan:
    cycle: float              # nominal cycle from the classical formula, clamped
    greens: dict              # phase id -> green seconds (min-green floored)
    lost_time: float
    saturated: bool

    @property
    def cycle_effective(self):
        """Cycle actually run: green splits plus lost time."""
        return sum(self.greens.values()) + self.lost_time


def webster_plan(flows, intersection, *, min_green=10, yellow=3):
    """Classical cycle-length and split computation.

    ``flows`` maps movement id -> demand in veh/s.  The critical flow ratio
    of a phase is the max over its served movements of demand / saturation
    flow; C = (1.5 L + 5) / (1 - Y) clamped to [30, 120] with L = phases x
    yellow.  Splits are proportional to the critical ratios and floored at
    min_green, which can stretch the effective cycle beyond the nominal one.
    """
    phases = intersection.phases
    lost = len(phases) * yellow
    ratios = {}
    for p in phases:
        ys = []
        for mid in p.movements:
            mov = intersection.movement(mid)
            sat_flow = mov.lane_count / mov.sat_headway
            ys.append(flows.get(mid, 0.0) / sat_flow)
        ratios[p.id] = max(ys)
    total = sum(ratios.values())

    saturated = total >= 1.0
    if total <= 0:
        cycle = WEBSTER_MIN_CYCLE
    elif saturated:
        cycle = WEBSTER_MAX_CYCLE
    else:
        cycle = min(WEBSTER_MAX_CYCLE,
                    max(WEBSTER_MIN_CYCLE, (1.5 * lost + 5.0) / (1.0 - total)))

    effective = cycle - lost
    greens = {}
    for p in phases:
        share = 1.0 / len(phases) if total <= 0 else ratios[p.id] / total
        greens[p.id] = max(float(min_green), share * effective)
    return WebsterPlan(cycle=cycle, greens=greens, lost_time=lost,
                       saturated=saturated)


class WebsterController:
    """Run the Webster plan cyclically, replanning every 300 s from the
    trailing arrival counts."""

    def __init__(self, min_green=10, yellow=3):
        self.min_green = min_green
        self.yellow = yellow
        self.plan = None

    def _replan(self, world):
        recent = list(world.arrival_history)[-WEBSTER_REPLAN_PERIOD:]
        counts = np.sum(recent, axis=0) if recent else np.zeros(
            world.intersection.num_movements)
        flows = {m.id: counts[m.id - 1] / WEBSTER_REPLAN_PERIOD
                 for m in world.intersection.movements}
        self.plan = webster_plan(flows, world.intersection,
                                 min_green=self.min_green, yellow=self.yellow)

    def decide(self, world, obs=None, avail=None):
        if self.plan is None or (world.clock > 0
                                 and world.clock % WEBSTER_REPLAN_PERIOD == 0):
            self._replan(world)
        sig = world.signal
        if sig.in_yellow:
            return ControllerDecision(sig.pending_phase, "webster:yellow")
        if sig.phase_elapsed >= round(self.plan.greens[sig.active_phase]):
            nxt = sig.active_phase % world.intersection.num_phases + 1
            return ControllerDecision(nxt, "webster:advance")
        return ControllerDecision(sig.active_phase, "webster:hold")


def phase_pressure(world, pid):
    """Sum of upstream queue lengths over the phase's served movements;
    departure legs are unqueued in the single-intersection model, so the
    downstream term is zero."""
    return sum(world.queue_len(mid)
               for mid in world.intersection.phase(pid).movements)


class MaxPressureController:
    """Greedy argmax-pressure selection among the available phases."""

    def decide(self, world, obs=None, avail=None):
        avail = avail if avail is not None else available_phases(world)
        best = max(sorted(avail), key=lambda pid: (phase_pressure(world, pid),))
        # max() keeps the first of equal keys, so ascending order gives the
        # lowest-phase-id tie-break.
        return ControllerDecision(best, "maxpressure")
