"""Deterministic 1 s-tick point-queue microsimulation of a signalized intersection.

The model is intentionally simple so that every behaviour is oracle-checkable:
vehicles arrive from seeded Bernoulli processes, queue per movement, and are
discharged at a per-lane saturation rate while their movement holds green.
The signal state machine enforces a minimum green time and a fixed yellow
clearance interval between distinct phases.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

HISTORY_LEN = 600  # ticks of arrival/discharge history kept for flow estimates

DEFAULT_MIN_GREEN = 10
DEFAULT_YELLOW = 3


class ConfigurationError(ValueError):
    """Invalid topology, demand, or event configuration."""


class DomainError(ValueError):
    """An operation was called with arguments outside its domain."""


@dataclass
class Movement:
    """A directional traffic stream (through / left / right) on one approach."""

    id: int                 # 1-based
    name: str
    approach: str           # compass letter: N, S, E, W
    turn_type: int          # 0 through, 1 left, 2 right
    lane_count: int = 1
    lane_length: float = 150.0   # metres
    sat_headway: float = 2.0     # seconds per discharged vehicle per lane
    blocked: bool = False        # set while a regulation event is active

    def __post_init__(self):
        if self.lane_count < 1:
            raise ConfigurationError(f"movement {self.name}: lane_count must be >= 1")
        if self.lane_length <= 0:
            raise ConfigurationError(f"movement {self.name}: lane_length must be > 0")
        if self.sat_headway <= 0:
            raise ConfigurationError(f"movement {self.name}: sat_headway must be > 0")
        if self.turn_type not in (0, 1, 2):
            raise ConfigurationError(f"movement {self.name}: bad turn_type {self.turn_type}")


@dataclass(frozen=True)
class Phase:
    """A set of non-conflicting movements granted green simultaneously."""

    id: int                  # 1-based
    movements: frozenset


@dataclass
class Intersection:
    template: str
    movements: list          # ordered by id
    phases: list             # ordered by id
    conflict: np.ndarray     # MxM symmetric bool, index = movement id - 1

    @property
    def num_movements(self):
        return len(self.movements)

    @property
    def num_phases(self):
        return len(self.phases)

    @property
    def approaches(self):
        seen = []
        for m in self.movements:
            if m.approach not in seen:
                seen.append(m.approach)
        return seen

    def movement(self, mid):
        if not 1 <= mid <= len(self.movements):
            raise DomainError(f"unknown movement id {mid}")
        return self.movements[mid - 1]

    def movement_by_name(self, name):
        for m in self.movements:
            if m.name == name:
                return m
        raise ConfigurationError(f"unknown movement name {name!r}")

    def phase(self, pid):
        if not 1 <= pid <= len(self.phases):
            raise DomainError(f"unknown phase id {pid}")
        return self.phases[pid - 1]

    def phases_serving(self, mid):
        """Phase ids whose green serves the given movement, ascending."""
        return [p.id for p in self.phases if mid in p.movements]

    def validate(self):
        m = self.num_movements
        if self.conflict.shape != (m, m):
            raise ConfigurationError("conflict table shape mismatch")
        if not np.array_equal(self.conflict, self.conflict.T):
            raise ConfigurationError("conflict table must be symmetric")
        served = set()
        for p in self.phases:
            if not p.movements:
                raise ConfigurationError(f"phase {p.id} serves no movements")
            ids = sorted(p.movements)
            for i in ids:
                for j in ids:
                    if i != j and self.conflict[i - 1, j - 1]:
                        raise ConfigurationError(
                            f"phase {p.id} groups conflicting movements {i} and {j}")
            served |= p.movements
        if served != {m.id for m in self.movements}:
            raise ConfigurationError("every movement must appear in at least one phase")
        return self


@dataclass
class Vehicle:
    id: int
    cls: str                 # "regular" | "emergency"
    movement: int
    entry_time: int
    waiting: int = 0         # accumulated stationary seconds
    exit_time: int | None = None


@dataclass
class SignalState:
    active_phase: int
    phase_elapsed: int = 0      # seconds of green since activation
    in_yellow: bool = False
    yellow_remaining: int = 0
    pending_phase: int | None = None
    min_green: int = DEFAULT_MIN_GREEN
    yellow_len: int = DEFAULT_YELLOW


@dataclass(frozen=True)
class ScenarioEvent:
    kind: str                # "emergency_spawn" | "regulation"
    movement: int
    start_time: int
    duration: int = 0        # regulation only

    def __post_init__(self):
        if self.kind not in ("emergency_spawn", "regulation"):
            raise ConfigurationError(f"unknown event kind {self.kind!r}")
        if self.start_time < 0:
            raise ConfigurationError("event start_time must be >= 0")
        if self.kind == "regulation" and self.duration <= 0:
            raise ConfigurationError("regulation duration must be > 0")


@dataclass
class WorldState:
    """Full simulator ground truth for one episode."""

    intersection: Intersection
    signal: SignalState
    demand: dict             # movement id -> arrival prob per second
    queues: dict             # movement id -> list[Vehicle], head first
    completed: list
    events: list
    rng: np.random.Generator
    clock: int = 0
    entered: int = 0
    service_acc: dict = field(default_factory=dict)
    discharge_history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LEN))
    arrival_history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LEN))
    log: list = field(default_factory=list)
    _next_vid: int = 0
    _spawned: set = field(default_factory=set)

    def queue_len(self, mid):
        return len(self.queues[mid])

    def record(self, kind, *payload):
        self.log.append((self.clock, kind, payload))

    def check_conservation(self):
        in_queue = sum(len(q) for q in self.queues.values())
        if self.entered != in_queue + len(self.completed):
            raise AssertionError(
                f"vehicle conservation violated at t={self.clock}: "
                f"{self.entered} entered, {in_queue} queued, {len(self.completed)} done")


# ---------------------------------------------------------------------------
# Topology templates

_FOURLEG_MOVEMENTS = [
    ("N_through", "N", 0), ("S_through", "S", 0),
    ("N_left", "N", 1), ("S_left", "S", 1),
    ("E_through", "E", 0), ("W_through", "W", 0),
    ("E_left", "E", 1), ("W_left", "W", 1),
]
_FOURLEG_PHASES = [(1, (1, 2)), (2, (3, 4)), (3, (5, 6)), (4, (7, 8))]

_TJUNCTION_MOVEMENTS = [
    ("E_through", "E", 0), ("W_through", "W", 0),
    ("W_left", "W", 1), ("S_left", "S", 1),
]
_TJUNCTION_PHASES = [(1, (1, 2)), (2, (2, 3)), (3, (4,))]
_TJUNCTION_CONFLICTS = {(1, 3), (1, 4), (2, 4), (3, 4)}


def _fourleg_conflict(ma, mb):
    """Two movements conflict when their paths cross the same area."""
    ns = {"N", "S"}
    same_road = (ma.approach in ns) == (mb.approach in ns)
    if not same_road:
        return True
    if ma.approach == mb.approach:
        return False
    # Opposing approaches: a protected left crosses the opposing through.
    return {ma.turn_type, mb.turn_type} == {0, 1}


def build_intersection(template, *, lane_length=150.0, sat_headway=2.0,
                       through_lanes=2, left_lanes=1):
    """Build a parametric intersection from a named template.

    ``fourleg`` gives 8 controlled movements (4 through, 4 left; right turns
    are uncontrolled and not modelled) grouped into 4 phases.  ``tjunction``
    gives 4 movements in 3 phases.
    """
    if template == "fourleg":
        specs, phase_specs = _FOURLEG_MOVEMENTS, _FOURLEG_PHASES
    elif template == "tjunction":
        specs, phase_specs = _TJUNCTION_MOVEMENTS, _TJUNCTION_PHASES
    else:
        raise ConfigurationError(f"unknown template {template!r}")

    movements = []
    for i, (name, approach, turn) in enumerate(specs, start=1):
        lanes = through_lanes if turn == 0 else left_lanes
        movements.append(Movement(
            id=i, name=name, approach=approach, turn_type=turn,
            lane_count=lanes, lane_length=lane_length, sat_headway=sat_headway))

    m = len(movements)
    conflict = np.zeros((m, m), dtype=bool)
    if template == "fourleg":
        for a in movements:
            for b in movements:
                if a.id != b.id:
                    conflict[a.id - 1, b.id - 1] = _fourleg_conflict(a, b)
    else:
        for i, j in _TJUNCTION_CONFLICTS:
            conflict[i - 1, j - 1] = conflict[j - 1, i - 1] = True

    phases = [Phase(id=pid, movements=frozenset(ms)) for pid, ms in phase_specs]
    return Intersection(template=template, movements=movements, phases=phases,
                        conflict=conflict).validate()


# ---------------------------------------------------------------------------
# World construction and dynamics

def make_world(intersection, demand=None, *, seed=0, events=(),
               min_green=DEFAULT_MIN_GREEN, yellow=DEFAULT_YELLOW):
    """Create the initial WorldState.

    ``demand`` maps movement names (or ids) to veh/h; missing movements get
    zero demand.  Arrival probability per second is veh/h / 3600.
    """
    demand = demand or {}
    per_sec = {m.id: 0.0 for m in intersection.movements}
    for key, veh_per_hour in demand.items():
        mid = key if isinstance(key, int) else intersection.movement_by_name(key).id
        if veh_per_hour < 0:
            raise ConfigurationError(f"negative demand for movement {key}")
        per_sec[intersection.movement(mid).id] = veh_per_hour / 3600.0
    for ev in events:
        intersection.movement(ev.movement)  # raises on unknown movement

    world = WorldState(
        intersection=intersection,
        signal=SignalState(active_phase=1, min_green=min_green, yellow_len=yellow),
        demand=per_sec,
        queues={m.id: [] for m in intersection.movements},
        completed=[],
        events=sorted(events, key=lambda e: (e.start_time, e.movement)),
        rng=np.random.default_rng(seed),
        service_acc={m.id: 0.0 for m in intersection.movements},
    )
    world.record("phase_start", 1)
    return world


def request_phase(world, target):
    """Request a switch to ``target``.

    Returns True when the request was accepted (or is a no-op on the active
    phase), False when rejected by the min-green lock or an in-flight yellow.
    """
    sig = world.signal
    world.intersection.phase(target)  # raises DomainError on unknown id
    if sig.in_yellow:
        # Clearance interval cannot be preempted; the pending phase wins.
        world.record("request", target, 0)
        return False
    if target == sig.active_phase:
        return True
    if sig.phase_elapsed < sig.min_green:
        world.record("request", target, 0)
        return False
    sig.in_yellow = True
    sig.yellow_remaining = sig.yellow_len
    sig.pending_phase = target
    world.record("request", target, 1)
    world.record("yellow_start", sig.active_phase, target)
    return True


def apply_events(world):
    """Apply scenario events due at the current clock (idempotent per tick)."""
    inter = world.intersection
    for idx, ev in enumerate(world.events):
        if ev.kind == "emergency_spawn":
            if ev.start_time == world.clock and idx not in world._spawned:
                world._spawned.add(idx)
                _spawn(world, ev.movement, "emergency")
                world.record("emv_spawn", ev.movement)
        else:  # regulation
            mov = inter.movement(ev.movement)
            active = ev.start_time <= world.clock < ev.start_time + ev.duration
            if active and not mov.blocked:
                mov.blocked = True
                world.record("block_on", ev.movement)
            elif not active and mov.blocked and _no_other_regulation(world, ev, idx):
                mov.blocked = False
                world.record("block_off", ev.movement)
    return world


def _no_other_regulation(world, ev, idx):
    for j, other in enumerate(world.events):
        if j != idx and other.kind == "regulation" and other.movement == ev.movement \
                and other.start_time <= world.clock < other.start_time + other.duration:
            return False
    return True


def _spawn(world, mid, cls):
    veh = Vehicle(id=world._next_vid, cls=cls, movement=mid, entry_time=world.clock)
    world._next_vid += 1
    world.entered += 1
    world.queues[mid].append(veh)
    return veh


def step(world):
    """Advance the world by one second.  Returns the vehicles that departed."""
    world.clock += 1
    sig = world.signal

    # Signal update.  A tick that starts inside yellow serves no controlled
    # movement even if the pending phase activates during it, so the yellow
    # clearance occupies exactly yellow_len full seconds.
    yellow_tick = sig.in_yellow
    if sig.in_yellow:
        sig.yellow_remaining -= 1
        if sig.yellow_remaining == 0:
            sig.active_phase = sig.pending_phase
            sig.pending_phase = None
            sig.in_yellow = False
            sig.phase_elapsed = 0
            world.record("phase_start", sig.active_phase)
    else:
        sig.phase_elapsed += 1

    apply_events(world)

    # Seeded Bernoulli arrivals, movement id order for determinism.
    arrivals = np.zeros(world.intersection.num_movements, dtype=int)
    for m in world.intersection.movements:
        p = world.demand[m.id]
        if p > 0 and world.rng.random() < p:
            veh = _spawn(world, m.id, "regular")
            arrivals[m.id - 1] = 1
            world.record("arrive", veh.id, m.id)
    world.arrival_history.append(arrivals)

    # Saturation discharge on the green movements, fractional service carried
    # over tick to tick.  Blocked movements discharge nothing.
    departures = []
    discharges = np.zeros(world.intersection.num_movements, dtype=int)
    green = set() if yellow_tick else world.intersection.phase(sig.active_phase).movements
    for m in world.intersection.movements:
        queue = world.queues[m.id]
        if m.id in green and not m.blocked and queue:
            world.service_acc[m.id] += m.lane_count / m.sat_headway
            n = min(int(world.service_acc[m.id]), len(queue))
            world.service_acc[m.id] -= n
            for _ in range(n):
                veh = queue.pop(0)
                veh.exit_time = world.clock
                world.completed.append(veh)
                departures.append(veh)
                discharges[m.id - 1] += 1
                world.record("depart", veh.id, m.id, veh.cls, veh.waiting)
        else:
            world.service_acc[m.id] = 0.0
    world.discharge_history.append(discharges)

    # Vehicles still queued accumulate one second of waiting.
    for queue in world.queues.values():
        for veh in queue:
            veh.waiting += 1

    world.check_conservation()
    return departures


# ---------------------------------------------------------------------------
# Event-log safety audit

def verify_safety(log, *, min_green=DEFAULT_MIN_GREEN, yellow=DEFAULT_YELLOW):
    """Audit a full episode event log against the signal safety rules.

    Checks, for every phase switch recorded in the log:
      - the outgoing phase held green for at least ``min_green`` seconds
        before its yellow began;
      - the incoming phase activated exactly ``yellow`` seconds after the
        yellow began;
      - no vehicle departed during any yellow-clearance second.
    Raises AssertionError on the first violation; returns the number of
    switches audited.
    """
    phase_starts = [(clock, payload[0]) for clock, kind, payload in log
                    if kind == "phase_start"]
    yellows = [(clock, payload[0], payload[1]) for clock, kind, payload in log
               if kind == "yellow_start"]
    depart_clocks = [clock for clock, kind, _ in log if kind == "depart"]

    starts_by_clock = dict(phase_starts)
    for y_clock, from_phase, to_phase in yellows:
        # Green duration: time since the outgoing phase activated.
        activated = max(c for c, pid in phase_starts
                        if pid == from_phase and c <= y_clock)
        if y_clock - activated < min_green:
            raise AssertionError(
                f"phase {from_phase} released after only {y_clock - activated} s "
                f"green at t={y_clock} (min green {min_green} s)")
        # Clearance duration: incoming phase must start exactly yellow later.
        # A yellow still in flight when the episode horizon cuts the log off
        # cannot be required to complete, but any switch or departure inside
        # the truncated clearance window is still a violation.
        expected = y_clock + yellow
        last_clock = max(clock for clock, _, _ in log)
        window_end = min(expected, last_clock)
        premature = [c for c, _ in phase_starts if y_clock < c < expected]
        if premature:
            raise AssertionError(
                f"phase switched at t={premature[0]} during the yellow "
                f"clearance that began at t={y_clock}")
        if expected <= last_clock and starts_by_clock.get(expected) != to_phase:
            raise AssertionError(
                f"phase {to_phase} did not activate exactly {yellow} s after "
                f"the yellow that began at t={y_clock}")
        stray = [c for c in depart_clocks if y_clock < c <= window_end]
        if stray:
            raise AssertionError(
                f"vehicles departed during the yellow clearance "
                f"[{y_clock + 1}, {window_end}]: clocks {stray}")
    return len(yellows)


# ---------------------------------------------------------------------------
# Event-log export

def format_log(log):
    """Render an event log to stable text, one line per entry."""
    return "\n".join(f"{clock}|{kind}|{','.join(map(str, payload))}"
                     for clock, kind, payload in log)


def log_digest(log):
    import hashlib
    return hashlib.sha256(format_log(log).encode()).hexdigest()
