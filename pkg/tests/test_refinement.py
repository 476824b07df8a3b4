import pytest

from greenlight.core import build_intersection, make_world
from greenlight.fake_backend import FakeBackendServer
from greenlight.refinement import (BackendConfig, CHAIN_OFF_WAIT_THRESHOLD,
                                   refine, remote_backend, rule_backend)
from greenlight.semantics import aggregate, assemble, build_rules, perceive, \
    summarize
from greenlight.sensing import build_sensor_state
from tests.test_core import seed_queue


def world_ctx(world, rl_action=1, available=(1, 2, 3, 4), **flags):
    omega_s = summarize(build_sensor_state(world), world.signal)
    omega_v = aggregate(perceive(world))
    rules = build_rules(world.intersection)
    return assemble(omega_s, omega_v, rl_action, list(available), rules, **flags)


def fresh_world():
    return make_world(build_intersection("fourleg"), {})


# ---------------------------------------------------------------------------
# BackendConfig validation

def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(kind="psychic")
    with pytest.raises(ValueError):
        BackendConfig(k=0)
    with pytest.raises(ValueError):
        BackendConfig(kind="remote")                       # endpoint missing
    with pytest.raises(ValueError):
        BackendConfig(kind="remote", endpoint="http://x/", timeout_ms=0)
    BackendConfig(kind="remote", endpoint="http://x/")     # valid


# ---------------------------------------------------------------------------
# Rule-based evaluator guidelines

def test_g0_guidelines_off_preserves():
    world = fresh_world()
    seed_queue(world, 7, 1, cls="emergency")
    ctx = world_ctx(world, rl_action=1, guidelines=False)
    candidate, explanation = rule_backend(ctx)
    assert candidate == 1
    assert explanation.startswith("G0")


def test_g1_serves_reported_emergency():
    world = fresh_world()
    seed_queue(world, 7, 1, cls="emergency")   # E_left, phase 4
    ctx = world_ctx(world, rl_action=1)
    candidate, explanation = rule_backend(ctx)
    assert candidate == 4
    assert "G1" in explanation


def test_g1_ignored_when_serving_phase_unavailable():
    world = fresh_world()
    seed_queue(world, 7, 1, cls="emergency")
    ctx = world_ctx(world, rl_action=1, available=[1])
    candidate, explanation = rule_backend(ctx)
    assert candidate == 1
    assert "G3" in explanation


def test_chain_off_wait_threshold_boundary():
    # Without the reasoning chain the evaluator reacts only once the
    # reported wait reaches the threshold; with it, immediately.
    for wait, expect_act in ((CHAIN_OFF_WAIT_THRESHOLD - 1, False),
                             (CHAIN_OFF_WAIT_THRESHOLD, True)):
        world = fresh_world()
        seed_queue(world, 7, 1, cls="emergency")
        world.queues[7][0].waiting = wait
        ctx = world_ctx(world, rl_action=1, chain=False)
        candidate, _ = rule_backend(ctx)
        assert (candidate == 4) == expect_act
        ctx_chain = world_ctx(world, rl_action=1, chain=True)
        assert rule_backend(ctx_chain)[0] == 4


def test_chain_explanation_enumerates_steps():
    world = fresh_world()
    seed_queue(world, 7, 1, cls="emergency")
    _, with_chain = rule_backend(world_ctx(world, rl_action=1, chain=True))
    world.queues[7][0].waiting = CHAIN_OFF_WAIT_THRESHOLD
    _, without = rule_backend(world_ctx(world, rl_action=1, chain=False))
    assert "Compared backbone proposal" in with_chain
    assert "Compared backbone proposal" not in without


def test_g2_redirects_from_barrier_to_busiest_phase():
    world = fresh_world()
    world.intersection.movement(1).blocked = True
    seed_queue(world, 1, 6)
    seed_queue(world, 5, 8)        # E_through: phase 3 has the real demand
    ctx = world_ctx(world, rl_action=1)
    candidate, explanation = rule_backend(ctx)
    assert candidate == 3
    assert "G2" in explanation


def test_g2_not_fired_when_rl_phase_unaffected():
    world = fresh_world()
    world.intersection.movement(5).blocked = True
    seed_queue(world, 5, 4)
    ctx = world_ctx(world, rl_action=1)    # phase 1 serves 1,2: unaffected
    candidate, explanation = rule_backend(ctx)
    assert candidate == 1
    assert "G3" in explanation


def test_g3_quiet_scene_preserves():
    candidate, explanation = rule_backend(world_ctx(fresh_world(), rl_action=2,
                                                    available=[2]))
    assert candidate == 2
    assert "G3" in explanation


def test_rule_backend_is_pure():
    world = fresh_world()
    seed_queue(world, 7, 1, cls="emergency")
    ctx = world_ctx(world, rl_action=1)
    assert rule_backend(ctx) == rule_backend(ctx)


# ---------------------------------------------------------------------------
# Refinement loop

def test_refine_accepts_valid_candidate():
    world = fresh_world()
    seed_queue(world, 7, 1, cls="emergency")
    result = refine(world_ctx(world, rl_action=1),
                    BackendConfig(kind="rule_based"))
    assert result.accepted and result.executed == 4
    assert result.attempts == 1
    assert result.guideline == "G1"


def test_refine_invalid_candidate_falls_back():
    ctx = world_ctx(fresh_world(), rl_action=2)
    result = refine(ctx, lambda c: (99, "phase 99 is imaginary"))
    assert not result.accepted
    assert result.executed == 2
    assert result.attempt_trace == [{"candidate": 99, "error": None}]


def test_refine_never_raises_on_evaluator_bug():
    ctx = world_ctx(fresh_world(), rl_action=3)
    def broken(_):
        raise RuntimeError("evaluator exploded")
    result = refine(ctx, broken)
    assert not result.accepted
    assert result.executed == 3
    assert result.attempt_trace[0]["error"] == "fault"


def test_refine_preserved_decision_counts_as_accepted():
    result = refine(world_ctx(fresh_world(), rl_action=2),
                    BackendConfig(kind="rule_based"))
    assert result.accepted and result.executed == 2
    assert result.guideline == "G3"


# ---------------------------------------------------------------------------
# Remote transport classification

def remote_cfg(endpoint, timeout_ms=2000, k=3):
    return BackendConfig(kind="remote", endpoint=endpoint,
                         timeout_ms=timeout_ms, k=k)


def test_remote_happy_path():
    world = fresh_world()
    seed_queue(world, 7, 1, cls="emergency")
    ctx = world_ctx(world, rl_action=1)
    with FakeBackendServer(mode="rule") as server:
        candidate, explanation, error = remote_backend(ctx,
                                                       remote_cfg(server.endpoint))
        assert (candidate, error) == (4, None)
        assert "G1" in explanation
        result = refine(ctx, remote_cfg(server.endpoint))
    assert result.accepted and result.executed == 4 and result.attempts == 1


def test_remote_malformed_classified_and_bounded():
    ctx = world_ctx(fresh_world(), rl_action=1)
    for mode in ("malformed", "unparseable"):
        with FakeBackendServer(mode=mode) as server:
            candidate, _, error = remote_backend(ctx, remote_cfg(server.endpoint))
            assert candidate is None and error == "malformed"
            result = refine(ctx, remote_cfg(server.endpoint))
        assert not result.accepted and result.executed == 1
        assert result.attempts == 3


def test_remote_invalid_phase_exhausts_attempts():
    ctx = world_ctx(fresh_world(), rl_action=1)
    with FakeBackendServer(mode="invalid") as server:
        result = refine(ctx, remote_cfg(server.endpoint))
    assert not result.accepted and result.executed == 1
    assert result.attempts == 3
    assert [t["candidate"] for t in result.attempt_trace] == [999, 999, 999]


def test_remote_timeout_classified():
    ctx = world_ctx(fresh_world(), rl_action=1)
    with FakeBackendServer(mode="slow", delay_s=0.5) as server:
        candidate, _, error = remote_backend(
            ctx, remote_cfg(server.endpoint, timeout_ms=100))
        assert candidate is None and error == "timeout"
        result = refine(ctx, remote_cfg(server.endpoint, timeout_ms=100, k=2))
    assert not result.accepted and result.attempts == 2
    assert result.latency_ms >= 2 * 100


def test_remote_transport_error_classified():
    ctx = world_ctx(fresh_world(), rl_action=1)
    candidate, _, error = remote_backend(
        ctx, remote_cfg("http://127.0.0.1:9/", timeout_ms=300))
    assert candidate is None and error == "transport"
