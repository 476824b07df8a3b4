"""Textual scene context for the action-refinement layer.

A ground-truth perception stub stands in for camera understanding: it emits
one direction-level cue per observable event (queued emergency vehicle,
active barrier, heavy queue) with optional injectable noise.  Deterministic
templating converts the numeric sensor matrix into a structured traffic
description.  Both texts, the backbone proposal, the available phase set,
and the traffic rules are packed into one canonical wire document.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .sensing import lane_occupancies

NO_EVENT_SENTENCE = "No abnormal visual events observed."
HEAVY_QUEUE_THRESHOLD = 0.8   # max lane occupancy above which a queue is "heavy"

COMPONENT_ORDER = ("format", "chain", "guidelines")

KIND_EMERGENCY = "emergency_vehicle"
KIND_BARRIER = "barrier"
KIND_HEAVY_QUEUE = "heavy_queue"


class ContractViolation(ValueError):
    """The backbone handed over an action outside the available set."""


@dataclass(frozen=True)
class VisualCue:
    direction: int          # 1-based approach index
    kind: str
    movement: int
    text: str
    noise_flags: tuple = ()


@dataclass(frozen=True)
class TrafficRules:
    blocks: tuple

    def as_list(self):
        return list(self.blocks)


@dataclass
class PromptContext:
    omega_s: str
    omega_v: str
    rl_action: int
    available: list
    rules: TrafficRules
    components: dict = field(default_factory=lambda: {
        "format": True, "chain": True, "guidelines": True})


# ---------------------------------------------------------------------------
# Perception stub (ground truth with injectable noise)

def _approach_index(intersection, approach):
    return intersection.approaches.index(approach) + 1


def _maybe_miscount(n, miscount_prob, rng, flags):
    if miscount_prob > 0 and rng.random() < miscount_prob:
        n = max(0, n + (1 if rng.random() < 0.5 else -1))
        flags.append("miscount")
    return n


def perceive(world, miscount_prob=0.0, miss_prob=0.0, rng=None):
    """Enumerate visual cues from simulator ground truth.

    With ``miss_prob`` a cue is silently dropped; with ``miscount_prob`` the
    numeric count in its text is perturbed by one.  Kind and movement are
    never corrupted.
    """
    if not 0 <= miscount_prob <= 1 or not 0 <= miss_prob <= 1:
        raise ValueError("noise probabilities must be in [0, 1]")
    if (miscount_prob > 0 or miss_prob > 0) and rng is None:
        raise ValueError("noisy perception requires an rng")
    inter = world.intersection
    cues = []

    def emit(kind, movement, text, flags):
        if miss_prob > 0 and rng.random() < miss_prob:
            return
        cues.append(VisualCue(
            direction=_approach_index(inter, inter.movement(movement).approach),
            kind=kind, movement=movement, text=text, noise_flags=tuple(flags)))

    for mov in inter.movements:
        for veh in world.queues[mov.id]:
            if veh.cls != "emergency":
                continue
            flags = []
            waited = _maybe_miscount(veh.waiting, miscount_prob, rng, flags)
            emit(KIND_EMERGENCY, mov.id,
                 f"Approach {mov.approach}: an emergency vehicle is waiting in "
                 f"queue on movement {mov.id} ({mov.name}), waiting {waited} s.",
                 flags)

    for mov in inter.movements:
        if not mov.blocked:
            continue
        flags = []
        stuck = _maybe_miscount(world.queue_len(mov.id), miscount_prob, rng, flags)
        emit(KIND_BARRIER, mov.id,
             f"Approach {mov.approach}: a barrier blocks movement {mov.id} "
             f"({mov.name}); {stuck} vehicles are stuck behind it.", flags)

    for mov in inter.movements:
        if max(lane_occupancies(world, mov.id)) <= HEAVY_QUEUE_THRESHOLD:
            continue
        flags = []
        count = _maybe_miscount(world.queue_len(mov.id), miscount_prob, rng, flags)
        emit(KIND_HEAVY_QUEUE, mov.id,
             f"Approach {mov.approach}: heavy queue on movement {mov.id} "
             f"({mov.name}), about {count} vehicles waiting.", flags)
    return cues


def aggregate(cues):
    """Join cue sentences in (direction, kind, movement) order."""
    if not cues:
        return NO_EVENT_SENTENCE
    ordered = sorted(cues, key=lambda c: (c.direction, c.kind, c.movement))
    return " ".join(c.text for c in ordered)


# ---------------------------------------------------------------------------
# Structured-state templating

def summarize(sensor_state, signal):
    """Fixed-order textual rendering of the sensor matrix, 2-decimal numbers."""
    if signal.in_yellow:
        head = (f"Signal: yellow clearance in progress, "
                f"switching to phase {signal.pending_phase}.")
    else:
        head = (f"Signal: phase {signal.active_phase} active, "
                f"green for {signal.phase_elapsed} s.")
    lines = [head]
    for i, row in enumerate(sensor_state.features, start=1):
        q, o_max, o_mean, _turn, _lanes, is_green, min_ok = row
        lines.append(
            f"Movement {i}: occupancy {o_mean:.2f}, max {o_max:.2f}, "
            f"flow {q:.2f} veh/s, {'GREEN' if is_green else 'RED'}, "
            f"min-green {'satisfied' if min_ok else 'not satisfied'}.")
    return "\n".join(lines)


def build_rules(intersection, min_green=10, yellow=3):
    """Traffic-control knowledge blocks: movements, phase map, constraints."""
    turn_names = {0: "through", 1: "left turn", 2: "right turn"}
    blocks = []
    for m in intersection.movements:
        blocks.append(f"Movement {m.id} ({m.name}) is the {turn_names[m.turn_type]} "
                      f"from approach {m.approach} with {m.lane_count} lane(s).")
    for p in intersection.phases:
        ids = ", ".join(str(i) for i in sorted(p.movements))
        blocks.append(f"Phase {p.id} serves movements {ids}.")
    blocks.append(f"A phase must hold green for at least {min_green} s before a "
                  f"switch; every switch inserts a fixed {yellow} s yellow clearance.")
    blocks.append("Only phases in the available set may be requested; any other "
                  "choice is invalid and will be rejected.")
    return TrafficRules(blocks=tuple(blocks))


# ---------------------------------------------------------------------------
# Prompt assembly and wire format

def assemble(omega_s, omega_v, rl_action, available, rules, *,
             chain=True, guidelines=True):
    """Pack the refinement context; the format constraint is always on."""
    if rl_action not in available:
        raise ContractViolation(
            f"backbone action {rl_action} not in available set {available}")
    return PromptContext(
        omega_s=omega_s, omega_v=omega_v, rl_action=rl_action,
        available=list(available), rules=rules,
        components={"format": True, "chain": bool(chain),
                    "guidelines": bool(guidelines)})


def to_wire(ctx):
    """Canonical wire document (also the remote-backend request body)."""
    return {
        "available_phases": list(ctx.available),
        "components": [name for name in COMPONENT_ORDER if ctx.components[name]],
        "omega_s": ctx.omega_s,
        "omega_v": ctx.omega_v,
        "rl_action": int(ctx.rl_action),
        "rules": ctx.rules.as_list(),
    }


def from_wire(doc):
    components = {name: name in doc["components"] for name in COMPONENT_ORDER}
    ctx = PromptContext(
        omega_s=doc["omega_s"], omega_v=doc["omega_v"],
        rl_action=int(doc["rl_action"]),
        available=[int(p) for p in doc["available_phases"]],
        rules=TrafficRules(blocks=tuple(doc["rules"])),
        components=components)
    return ctx


def wire_bytes(ctx):
    return json.dumps(to_wire(ctx), sort_keys=True).encode("utf-8")


# ---------------------------------------------------------------------------
# Text parsing helpers shared by the rule-based evaluator

_CUE_RE = re.compile(
    r"(?:an emergency vehicle is waiting in queue on movement (?P<emv>\d+).*?"
    r"waiting (?P<wait>\d+) s"
    r"|a barrier blocks movement (?P<barrier>\d+)"
    r"|heavy queue on movement (?P<heavy>\d+))")

_OCC_RE = re.compile(r"Movement (\d+): occupancy (\d+\.\d+)")


def parse_visual_events(omega_v):
    """Extract (emergency movements with reported waits, barrier movements)."""
    emergencies = []   # (movement id, reported waiting s) in text order
    barriers = set()
    for match in _CUE_RE.finditer(omega_v):
        if match.group("emv"):
            emergencies.append((int(match.group("emv")), int(match.group("wait"))))
        elif match.group("barrier"):
            barriers.add(int(match.group("barrier")))
    return emergencies, barriers


def parse_occupancies(omega_s):
    """Movement id -> reported mean occupancy, from the structured text."""
    return {int(mid): float(occ) for mid, occ in _OCC_RE.findall(omega_s)}


_PHASE_RULE_RE = re.compile(r"Phase (\d+) serves movements ([\d, ]+)\.")


def parse_phase_map(rules):
    """Phase id -> movement id set, parsed from the rules blocks."""
    mapping = {}
    for block in rules.as_list():
        match = _PHASE_RULE_RE.fullmatch(block)
        if match:
            mapping[int(match.group(1))] = {
                int(x) for x in match.group(2).split(",")}
    return mapping
