"""Episode runner, metric computation, multi-seed evaluation, and result
persistence.

Travel time is measured entry-to-discharge through the point queue (there
are no downstream links), so absolute values are not comparable with
platform-scale simulators; only cross-controller deltas are meaningful.
"""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from . import core, policy, semantics
from .baselines import FixTimeController, MaxPressureController, WebsterController
from .refinement import BackendConfig, refine

CONTROLLER_NAMES = ("fixtime", "webster", "maxpressure", "rl", "refined")

CSV_FIELDS = ("seed", "scenario", "controller", "att", "awt", "aett", "aewt",
              "completed", "emv_completed", "residual", "preserved", "refined")


@dataclass
class MetricsRecord:
    att: float | None           # mean travel time, completed regular vehicles
    awt: float | None           # mean accumulated waiting, regular vehicles
    aett: float | None          # same pair for emergency vehicles;
    aewt: float | None          # None (absent) when no EMV completed
    completed: int
    emv_completed: int
    residual: int               # still queued at episode end, excluded above
    preserved: int = 0          # decisions where the backbone action survived
    refined: int = 0            # decisions where it was replaced

    def as_row(self, seed, scenario, controller):
        row = {"seed": seed, "scenario": scenario, "controller": controller}
        row.update(asdict(self))
        return row


@dataclass
class EpisodeResult:
    metrics: MetricsRecord
    world_log: list
    decisions: list

    @property
    def log_digest(self):
        return core.log_digest(self.world_log)


def compute_metrics(world, decisions=()):
    """Derive the metric record from completed vehicles and decision logs."""
    regular = [v for v in world.completed if v.cls == "regular"]
    emv = [v for v in world.completed if v.cls == "emergency"]

    def mean(xs):
        return sum(xs) / len(xs) if xs else None

    preserved = sum(1 for d in decisions if d["executed"] == d["a_rl"])
    return MetricsRecord(
        att=mean([v.exit_time - v.entry_time for v in regular]),
        awt=mean([v.waiting for v in regular]),
        aett=mean([v.exit_time - v.entry_time for v in emv]),
        aewt=mean([v.waiting for v in emv]),
        completed=len(regular),
        emv_completed=len(emv),
        residual=sum(len(q) for q in world.queues.values()),
        preserved=preserved,
        refined=len(decisions) - preserved,
    )


# ---------------------------------------------------------------------------
# Learned controllers behind the baseline decision interface

class BackboneController:
    """Inference over the trained policy, no refinement.

    The default is seeded stochastic inference: the PPO policy is optimized
    as a distribution, and its argmax alone concentrates on too few phases
    to serve all approaches.  A fixed seed keeps episodes reproducible.
    """

    def __init__(self, params, mode="sample", seed=0):
        self.params = params
        self.mode = mode
        self.rng = np.random.default_rng(seed) if mode == "sample" else None

    def decide(self, world, obs, avail):
        action, _, _ = policy.select_action(self.params, obs, avail,
                                            self.mode, self.rng)
        return action


class RefinedController:
    """Backbone proposal plus semantic-guided refinement with fallback."""

    def __init__(self, params, backend, *, chain=True, guidelines=True,
                 miscount_prob=0.0, miss_prob=0.0, noise_seed=0, seed=0,
                 min_green=core.DEFAULT_MIN_GREEN, yellow=core.DEFAULT_YELLOW):
        self.backbone = BackboneController(params, seed=seed)
        self.backend = backend
        self.chain = chain
        self.guidelines = guidelines
        self.miscount_prob = miscount_prob
        self.miss_prob = miss_prob
        self.noise_rng = np.random.default_rng(noise_seed)
        self.min_green = min_green
        self.yellow = yellow
        self._rules = None
        self.decisions = []

    def decide(self, world, obs, avail, frame=None):
        a_rl = self.backbone.decide(world, obs, avail)
        if self._rules is None:
            self._rules = semantics.build_rules(
                world.intersection, self.min_green, self.yellow)
        cues = semantics.perceive(world, self.miscount_prob, self.miss_prob,
                                  self.noise_rng
                                  if (self.miscount_prob or self.miss_prob)
                                  else None)
        omega_v = semantics.aggregate(cues)
        omega_s = semantics.summarize(frame, world.signal)
        ctx = semantics.assemble(omega_s, omega_v, a_rl, avail, self._rules,
                                 chain=self.chain, guidelines=self.guidelines)
        result = refine(ctx, self.backend)
        self.decisions.append({
            "clock": world.clock, "a_rl": a_rl,
            "candidates": [t["candidate"] for t in result.attempt_trace],
            "executed": result.executed, "accepted": result.accepted,
            "guideline": result.guideline, "attempts": result.attempts,
            "latency_ms": result.latency_ms,
        })
        return result.executed


def make_controller(name, *, params=None, backend=None, min_green=10, yellow=3,
                    seed=0, **kwargs):
    """Instantiate a fresh controller for one episode."""
    if name == "fixtime":
        return FixTimeController()
    if name == "webster":
        return WebsterController(min_green=min_green, yellow=yellow)
    if name == "maxpressure":
        return MaxPressureController()
    if name == "rl":
        if params is None:
            raise core.ConfigurationError("controller 'rl' requires trained params")
        return BackboneController(params, seed=seed)
    if name == "refined":
        if params is None or backend is None:
            raise core.ConfigurationError(
                "controller 'refined' requires trained params and a backend")
        return RefinedController(params, backend, seed=seed,
                                 min_green=min_green, yellow=yellow, **kwargs)
    raise core.ConfigurationError(f"unknown controller {name!r}")


def run_episode(scenario, controller_name, seed, *, params=None, backend=None,
                **controller_kwargs):
    """Run one full episode and return metrics plus the raw logs."""
    env = scenario.make_env(seed)
    ctrl = make_controller(controller_name, params=params, backend=backend,
                           min_green=scenario.min_green, seed=seed,
                           yellow=scenario.yellow, **controller_kwargs)
    world = env.world
    while world.clock < scenario.duration:
        obs, avail = env.observe()
        if isinstance(ctrl, RefinedController):
            target = ctrl.decide(world, obs, avail, frame=env.window.frames[-1])
        elif isinstance(ctrl, BackboneController):
            target = ctrl.decide(world, obs, avail)
        else:
            target = ctrl.decide(world, obs, avail).target
        env.step(target)
    decisions = ctrl.decisions if isinstance(ctrl, RefinedController) else []
    return EpisodeResult(metrics=compute_metrics(world, decisions),
                         world_log=world.log, decisions=decisions)


# ---------------------------------------------------------------------------
# Multi-seed evaluation

@dataclass
class RunManifest:
    scenario_name: str
    config_digest: str
    code_version: str
    seeds: list
    records: dict               # controller -> list of MetricsRecord
    summary: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "scenario_name": self.scenario_name,
            "config_digest": self.config_digest,
            "code_version": self.code_version,
            "seeds": list(self.seeds),
            "records": {name: [asdict(r) for r in recs]
                        for name, recs in self.records.items()},
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            scenario_name=doc["scenario_name"],
            config_digest=doc["config_digest"],
            code_version=doc["code_version"],
            seeds=list(doc["seeds"]),
            records={name: [MetricsRecord(**r) for r in recs]
                     for name, recs in doc["records"].items()},
            summary=doc["summary"],
        )

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _mean_std(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    if len(values) == 1:
        return float(values[0]), 0.0
    return float(statistics.mean(values)), float(statistics.pstdev(values))


def evaluate(scenario, controllers, seeds, *, scenario_name="scenario",
             params=None, backend=None, **controller_kwargs):
    """Run every controller over the identical seed set."""
    if not seeds:
        raise core.ConfigurationError("need at least one seed")
    config_blob = json.dumps({"scenario": scenario.to_dict(),
                              "controllers": list(controllers),
                              "seeds": list(seeds)}, sort_keys=True)
    records = {}
    for name in controllers:
        records[name] = [
            run_episode(scenario, name, seed, params=params, backend=backend,
                        **controller_kwargs).metrics
            for seed in seeds]
    summary = {}
    for name, recs in records.items():
        summary[name] = {}
        for metric in ("att", "awt", "aett", "aewt"):
            mean, std = _mean_std([getattr(r, metric) for r in recs])
            summary[name][metric] = {"mean": mean, "std": std}
    return RunManifest(
        scenario_name=scenario_name,
        config_digest=hashlib.sha256(config_blob.encode()).hexdigest(),
        code_version=__version__,
        seeds=list(seeds),
        records=records,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Export

def export_csv(manifest, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for name, recs in manifest.records.items():
            for seed, rec in zip(manifest.seeds, recs):
                writer.writerow(rec.as_row(seed, manifest.scenario_name, name))


def export_json(manifest, path):
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, sort_keys=True, indent=2)


def load_manifest(path):
    with open(path) as fh:
        return RunManifest.from_dict(json.load(fh))


def summary_table(manifest):
    """Aligned mean +/- std text table over the four headline metrics."""
    headers = ["controller", "ATT", "AWT", "AETT", "AEWT"]
    rows = []
    for name in manifest.records:
        cells = [name]
        for metric in ("att", "awt", "aett", "aewt"):
            entry = manifest.summary[name][metric]
            if entry["mean"] is None:
                cells.append("-")
            else:
                cells.append(f"{entry['mean']:.2f} +/- {entry['std']:.2f}")
        rows.append(cells)
    widths = [max(len(str(r[i])) for r in [headers] + rows)
              for i in range(len(headers))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths))
             for r in [headers] + rows]
    return "\n".join(lines)


def export(manifest, outdir, formats=("csv", "json")):
    """Write the manifest in the requested formats; returns written paths."""
    import os
    os.makedirs(outdir, exist_ok=True)
    written = []
    base = os.path.join(outdir, manifest.scenario_name)
    if "csv" in formats:
        export_csv(manifest, base + ".csv")
        written.append(base + ".csv")
    if "json" in formats:
        export_json(manifest, base + ".json")
        written.append(base + ".json")
    with open(base + "_summary.txt", "w") as fh:
        fh.write(summary_table(manifest) + "\n")
    written.append(base + "_summary.txt")
    return written


def export_sweep(manifests_by_count, outdir):
    """Delimited series for the emergency-demand sweep: regular AWT and
    preserved/refined decision counts versus EMV count."""
    import os
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "sweep_plotdata.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["emv_count", "awt_mean", "aewt_mean",
                         "preserved_mean", "refined_mean"])
        for count in sorted(manifests_by_count):
            manifest = manifests_by_count[count]
            recs = manifest.records["refined"]
            awt = manifest.summary["refined"]["awt"]["mean"]
            aewt = manifest.summary["refined"]["aewt"]["mean"]
            preserved = statistics.mean(r.preserved for r in recs)
            refined_n = statistics.mean(r.refined for r in recs)
            writer.writerow([count, awt, aewt, preserved, refined_n])
    return path
