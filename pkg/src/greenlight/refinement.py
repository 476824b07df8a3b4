"""Constrained semantic action refinement with fallback.

A pluggable evaluator proposes a replacement phase for the backbone's
candidate; the proposal is executed only when it lies in the available phase
set, with up to k retries and unconditional fallback to the backbone action.
No failure mode ever surfaces to the caller.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import requests

from .semantics import (parse_occupancies, parse_phase_map, parse_visual_events,
                        to_wire)

# Without the reasoning-chain component the evaluator lacks the step-by-step
# cross-check of cues against the structured state, so it intervenes on an
# emergency cue only once the reported waiting makes the inconsistency
# blatant.  With the chain enabled it reacts immediately.
CHAIN_OFF_WAIT_THRESHOLD = 8


@dataclass
class BackendConfig:
    kind: str = "rule_based"      # "rule_based" | "remote"
    k: int = 3                    # max evaluator attempts per decision
    timeout_ms: int = 2000        # remote only
    endpoint: str | None = None   # remote only

    def __post_init__(self):
        if self.kind not in ("rule_based", "remote"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kind == "remote":
            if self.timeout_ms <= 0:
                raise ValueError("remote backend requires a positive timeout")
            if not self.endpoint:
                raise ValueError("remote backend requires an endpoint")


@dataclass
class RefinementResult:
    candidate: int | None         # last proposed phase, None if unparseable
    explanation: str
    attempts: int
    accepted: bool
    executed: int                 # phase actually executed
    latency_ms: float
    guideline: str | None = None  # fired guideline tag for rule evaluators
    attempt_trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Deterministic rule-based evaluator

def rule_backend(ctx):
    """Guideline-priority evaluator over the textual context.

    G1: serve a reported emergency vehicle if some available phase covers its
    movement (lowest phase id).  G2: if the backbone phase serves a movement
    reported as barrier-blocked, move green to the available phase with the
    greatest summed unblocked occupancy.  G3: otherwise preserve the backbone
    action.  With the guidelines component off only G0 (preserve) applies.
    Pure function of the context; returns (candidate phase, explanation).
    """
    if not ctx.components.get("guidelines", False):
        return ctx.rl_action, ("G0: no decision guidelines provided; "
                               "preserving the backbone proposal.")

    chain = ctx.components.get("chain", False)
    emergencies, barriers = parse_visual_events(ctx.omega_v)
    phase_map = parse_phase_map(ctx.rules)
    steps = []
    if chain:
        steps.append(f"Compared backbone proposal phase {ctx.rl_action} with "
                     f"{len(emergencies)} emergency cue(s), {len(barriers)} "
                     f"barrier cue(s), and available phases "
                     f"{sorted(ctx.available)}.")

    # G1: emergency passage has top priority.
    wait_floor = 0 if chain else CHAIN_OFF_WAIT_THRESHOLD
    urgent = [mid for mid, wait in emergencies if wait >= wait_floor]
    candidates = sorted(
        pid for pid in ctx.available
        if any(mid in phase_map.get(pid, set()) for mid in urgent))
    if candidates:
        chosen = candidates[0]
        mid = next(m for m in urgent if m in phase_map[chosen])
        text = (f"G1: emergency vehicle reported on movement {mid}; "
                f"phase {chosen} serves it and is available.")
        return chosen, "\n".join(steps + [text])

    # G2: avoid wasting green on a barrier-blocked movement.
    rl_serves = phase_map.get(ctx.rl_action, set())
    if barriers & rl_serves:
        occ = parse_occupancies(ctx.omega_s)
        def unblocked_occ(pid):
            return sum(occ.get(mid, 0.0)
                       for mid in phase_map.get(pid, set()) if mid not in barriers)
        best = max(sorted(ctx.available), key=unblocked_occ)
        if chain:
            steps.append("Summed reported occupancy of unblocked movements per "
                         "available phase: " + ", ".join(
                             f"phase {pid}={unblocked_occ(pid):.2f}"
                             for pid in sorted(ctx.available)) + ".")
        text = (f"G2: backbone phase {ctx.rl_action} serves barrier-blocked "
                f"movement(s) {sorted(barriers & rl_serves)}; redirecting to "
                f"phase {best} with the most unblocked demand.")
        return best, "\n".join(steps + [text])

    text = "G3: no cue contradicts the backbone proposal; preserving it."
    return ctx.rl_action, "\n".join(steps + [text])


# ---------------------------------------------------------------------------
# Remote evaluator transport

def remote_backend(ctx, cfg):
    """POST the canonical wire document to the configured endpoint.

    Returns (candidate, explanation, error) where error is None on success or
    one of "timeout" / "transport" / "malformed"; every error resolves to a
    failed attempt in :func:`refine`.
    """
    try:
        resp = requests.post(cfg.endpoint, json=to_wire(ctx),
                             timeout=cfg.timeout_ms / 1000.0)
    except requests.Timeout:
        return None, "remote evaluator timed out", "timeout"
    except requests.RequestException as exc:
        return None, f"transport failure: {exc}", "transport"
    try:
        body = resp.json()
        action = body["action"]
        explanation = body["explanation"]
        if isinstance(action, bool) or not isinstance(action, int):
            raise TypeError("action must be an integer")
        if not isinstance(explanation, str):
            raise TypeError("explanation must be a string")
    except Exception as exc:
        return None, f"malformed response: {exc}", "malformed"
    return action, explanation, None


# ---------------------------------------------------------------------------
# Refinement loop

def _guideline_tag(explanation):
    for line in explanation.splitlines():
        if line[:2] in ("G0", "G1", "G2", "G3") and line[2:3] == ":":
            return line[:2]
    return None


def refine(ctx, backend):
    """Run the retry loop and resolve the executed action.

    ``backend`` is a BackendConfig or any callable(ctx) -> (candidate,
    explanation).  The first candidate inside the available set is accepted;
    parse failures, invalid phases, and timeouts count as failed attempts.
    After k failures the backbone action is executed.  Never raises.
    """
    start = time.monotonic()
    executed = ctx.rl_action
    k = backend.k if isinstance(backend, BackendConfig) else 1
    if isinstance(backend, BackendConfig) and backend.kind == "rule_based":
        call = lambda c: (*rule_backend(c), None)
    elif isinstance(backend, BackendConfig):
        call = lambda c: remote_backend(c, backend)
    else:
        call = lambda c: _normalize(backend(c))

    candidate = None
    explanation = ""
    accepted = False
    attempts = 0
    trace = []
    for _ in range(k):
        attempts += 1
        try:
            candidate, explanation, error = call(ctx)
        except Exception as exc:  # evaluator bugs also resolve to fallback
            candidate, explanation, error = None, f"evaluator raised: {exc}", "fault"
        trace.append({"candidate": candidate, "error": error})
        if error is None and candidate in ctx.available:
            executed = candidate
            accepted = True
            break
    latency_ms = (time.monotonic() - start) * 1000.0
    return RefinementResult(
        candidate=candidate, explanation=explanation, attempts=attempts,
        accepted=accepted, executed=executed, latency_ms=latency_ms,
        guideline=_guideline_tag(explanation), attempt_trace=trace)


def _normalize(result):
    if len(result) == 2:
        return result[0], result[1], None
    return result
