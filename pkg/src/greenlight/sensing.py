"""Structured sensor observations: per-movement feature rows, the stacked
temporal window fed to the policy, and the legally available phase set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, WorldState

NUM_FEATURES = 7          # q, O_max, O_mean, turn_type, lane_count, is_green, min_green_ok
DEFAULT_WINDOW_LEN = 30   # seconds over which the flow rate q is measured
DEFAULT_K = 5             # stacked frames in the observation window
VEHICLE_FOOTPRINT = 7.5   # metres per queued vehicle: 5 m body + 2.5 m headway

FEATURE_NAMES = ("q", "O_max", "O_mean", "turn_type", "lane_count",
                 "is_green", "min_green_ok")


@dataclass(frozen=True)
class SensorState:
    """M x 7 matrix of per-movement features at one tick."""

    features: np.ndarray
    clock: int

    def row(self, mid):
        return self.features[mid - 1]

    def to_flat(self):
        """Row-major flat record for logging and the structured templater."""
        return self.features.reshape(-1).tolist()


@dataclass
class ObservationWindow:
    """Last K sensor frames, oldest first; zero-filled before warm-up."""

    num_movements: int
    k: int = DEFAULT_K
    frames: list = field(default_factory=list)

    def stacked(self):
        """(K, M, 7) array, zero frames prepended while warming up."""
        missing = self.k - len(self.frames)
        zeros = [np.zeros((self.num_movements, NUM_FEATURES))] * missing
        mats = zeros + [f.features for f in self.frames]
        return np.stack(mats)


def lane_occupancies(world, mid):
    """Per-lane occupancy ratios for a movement's point queue.

    The queue is split evenly across lanes (remainder to the lowest lanes),
    each queued vehicle occupying VEHICLE_FOOTPRINT metres, clamped to [0, 1].
    """
    mov = world.intersection.movement(mid)
    n = world.queue_len(mid)
    base, extra = divmod(n, mov.lane_count)
    loads = [base + (1 if i < extra else 0) for i in range(mov.lane_count)]
    return [min(1.0, load * VEHICLE_FOOTPRINT / mov.lane_length) for load in loads]


def build_sensor_state(world, window_len=DEFAULT_WINDOW_LEN):
    """Measure the current M x 7 feature matrix from world ground truth."""
    if window_len <= 0:
        raise DomainError("window_len must be > 0")
    inter = world.intersection
    sig = world.signal
    green_movs = set() if sig.in_yellow else inter.phase(sig.active_phase).movements
    min_green_ok = 1.0 if (not sig.in_yellow and sig.phase_elapsed >= sig.min_green) else 0.0

    recent = list(world.discharge_history)[-window_len:]
    counts = np.sum(recent, axis=0) if recent else np.zeros(inter.num_movements)

    rows = np.zeros((inter.num_movements, NUM_FEATURES))
    for m in inter.movements:
        occ = lane_occupancies(world, m.id)
        rows[m.id - 1] = (
            counts[m.id - 1] / window_len,
            max(occ),
            sum(occ) / len(occ),
            m.turn_type,
            m.lane_count,
            1.0 if m.id in green_movs else 0.0,
            min_green_ok,
        )
    return SensorState(features=rows, clock=world.clock)


def push(window, frame):
    """Append a frame to the window, evicting the oldest beyond K."""
    if frame.features.shape != (window.num_movements, NUM_FEATURES):
        raise DomainError(
            f"frame shape {frame.features.shape} does not match "
            f"({window.num_movements}, {NUM_FEATURES})")
    window.frames.append(frame)
    if len(window.frames) > window.k:
        window.frames.pop(0)
    return window


def available_phases(world):
    """Phases a controller may legally request right now.

    During yellow only the pending phase is admissible; under the min-green
    lock only the active phase; otherwise the full phase set.
    """
    sig = world.signal
    if sig.in_yellow:
        return [sig.pending_phase]
    if sig.phase_elapsed < sig.min_green:
        return [sig.active_phase]
    return [p.id for p in world.intersection.phases]
