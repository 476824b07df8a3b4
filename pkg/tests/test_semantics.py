import json

import numpy as np
import pytest

from greenlight import semantics
from greenlight.core import (ScenarioEvent, build_intersection, make_world,
                             request_phase, step)
from greenlight.semantics import (ContractViolation, NO_EVENT_SENTENCE,
                                  PromptContext, TrafficRules, VisualCue,
                                  aggregate, assemble, build_rules, from_wire,
                                  parse_occupancies, parse_phase_map,
                                  parse_visual_events, perceive, summarize,
                                  to_wire, wire_bytes)
from greenlight.sensing import build_sensor_state
from tests.test_core import seed_queue


def fresh_world(**kwargs):
    return make_world(build_intersection("fourleg"), {}, **kwargs)


# ---------------------------------------------------------------------------
# Perception

def test_queued_emergency_yields_one_cue():
    world = fresh_world()
    seed_queue(world, 2, 1, cls="emergency")
    cues = perceive(world)
    assert len(cues) == 1
    cue = cues[0]
    assert cue.kind == semantics.KIND_EMERGENCY
    assert cue.movement == 2
    assert "emergency vehicle" in cue.text
    assert "waiting 0 s" in cue.text


def test_barrier_and_heavy_queue_cues():
    world = fresh_world()
    world.intersection.movement(5).blocked = True
    seed_queue(world, 3, 17)       # single 150 m lane: 17 * 7.5 / 150 = 0.85
    kinds = {(c.kind, c.movement) for c in perceive(world)}
    assert kinds == {(semantics.KIND_BARRIER, 5),
                     (semantics.KIND_HEAVY_QUEUE, 3)}


def test_quiet_world_has_no_cues():
    world = fresh_world()
    seed_queue(world, 1, 4)        # well below the heavy-queue threshold
    assert perceive(world) == []


def test_noise_validation():
    world = fresh_world()
    with pytest.raises(ValueError):
        perceive(world, miscount_prob=1.5)
    with pytest.raises(ValueError):
        perceive(world, miss_prob=0.5, rng=None)


def test_miss_prob_one_drops_everything():
    world = fresh_world()
    seed_queue(world, 2, 1, cls="emergency")
    world.intersection.movement(5).blocked = True
    assert perceive(world, miss_prob=1.0,
                    rng=np.random.default_rng(0)) == []


def test_miscount_perturbs_count_only():
    world = fresh_world()
    seed_queue(world, 2, 1, cls="emergency")
    world.queues[2][0].waiting = 10
    cues = perceive(world, miscount_prob=1.0, rng=np.random.default_rng(0))
    assert len(cues) == 1
    cue = cues[0]
    assert cue.noise_flags == ("miscount",)
    assert cue.kind == semantics.KIND_EMERGENCY and cue.movement == 2
    assert ("waiting 9 s" in cue.text) or ("waiting 11 s" in cue.text)


# ---------------------------------------------------------------------------
# Aggregation

def cue(direction, kind="heavy_queue", movement=1, text="x"):
    return VisualCue(direction=direction, kind=kind, movement=movement,
                     text=text)


def test_aggregate_orders_by_direction():
    text = aggregate([cue(3, text="third"), cue(1, text="first")])
    assert text.index("first") < text.index("third")


def test_aggregate_empty_sentinel():
    assert aggregate([]) == NO_EVENT_SENTENCE


def test_aggregate_keeps_duplicates():
    text = aggregate([cue(1, text="dup"), cue(1, text="dup")])
    assert text.count("dup") == 2


# ---------------------------------------------------------------------------
# Structured summary

def test_summarize_tokens_and_determinism():
    world = fresh_world()
    seed_queue(world, 1, 4)
    frame = build_sensor_state(world)
    a = summarize(frame, world.signal)
    b = summarize(frame, world.signal)
    assert a == b
    lines = a.splitlines()
    assert lines[0] == "Signal: phase 1 active, green for 0 s."
    assert "GREEN" in lines[1] and "RED" in lines[3]
    assert "flow 0.00 veh/s" in lines[1]


def test_summarize_yellow_head():
    world = fresh_world()
    for _ in range(12):
        step(world)
    request_phase(world, 4)
    text = summarize(build_sensor_state(world), world.signal)
    assert text.splitlines()[0] == \
        "Signal: yellow clearance in progress, switching to phase 4."


def test_parse_occupancies_round_trip():
    world = fresh_world()
    seed_queue(world, 1, 4)
    frame = build_sensor_state(world)
    occ = parse_occupancies(summarize(frame, world.signal))
    for mid in range(1, 9):
        assert occ[mid] == pytest.approx(frame.row(mid)[2], abs=5e-3)


# ---------------------------------------------------------------------------
# Rules

def test_rules_phase_map_matches_intersection():
    inter = build_intersection("fourleg")
    rules = build_rules(inter)
    mapping = parse_phase_map(rules)
    assert mapping == {p.id: set(p.movements) for p in inter.phases}


def test_rules_mention_constraints():
    text = " ".join(build_rules(build_intersection("fourleg"),
                                min_green=10, yellow=3).as_list())
    assert "at least 10 s" in text
    assert "3 s yellow" in text


# ---------------------------------------------------------------------------
# Assembly and wire format

def make_ctx(**kwargs):
    rules = build_rules(build_intersection("fourleg"))
    return assemble("state text", "visual text", 2, [1, 2, 3, 4], rules,
                    **kwargs)


def test_assemble_rejects_unavailable_action():
    rules = build_rules(build_intersection("fourleg"))
    with pytest.raises(ContractViolation):
        assemble("s", "v", 3, [1, 2], rules)


def test_component_blocks_order():
    assert to_wire(make_ctx())["components"] == \
        ["format", "chain", "guidelines"]
    assert to_wire(make_ctx(chain=False))["components"] == \
        ["format", "guidelines"]
    assert to_wire(make_ctx(chain=False, guidelines=False))["components"] == \
        ["format"]


def test_wire_round_trip_lossless():
    ctx = make_ctx(chain=False)
    back = from_wire(json.loads(wire_bytes(ctx).decode("utf-8")))
    assert back.omega_s == ctx.omega_s
    assert back.omega_v == ctx.omega_v
    assert back.rl_action == ctx.rl_action
    assert back.available == ctx.available
    assert back.rules.as_list() == ctx.rules.as_list()
    assert back.components == ctx.components
    assert wire_bytes(back) == wire_bytes(ctx)


def test_wire_bytes_stable_key_order():
    blob = wire_bytes(make_ctx()).decode("utf-8")
    keys = [k for k in ("available_phases", "components", "omega_s",
                        "omega_v", "rl_action", "rules")]
    positions = [blob.index(f'"{k}"') for k in keys]
    assert positions == sorted(positions)


# ---------------------------------------------------------------------------
# Cue text parsing round trip

def test_parse_visual_events_round_trip():
    world = fresh_world()
    seed_queue(world, 7, 1, cls="emergency")
    world.queues[7][0].waiting = 23
    world.intersection.movement(1).blocked = True
    emergencies, barriers = parse_visual_events(aggregate(perceive(world)))
    assert emergencies == [(7, 23)]
    assert barriers == {1}


def test_parse_visual_events_no_event_sentence():
    assert parse_visual_events(NO_EVENT_SENTENCE) == ([], set())
