import csv
import json

import pytest

from greenlight.core import ConfigurationError, Vehicle, build_intersection, \
    make_world
from greenlight.harness import (CSV_FIELDS, MetricsRecord, compute_metrics,
                                evaluate, export, export_csv, export_json,
                                export_sweep, load_manifest, run_episode,
                                summary_table)
from greenlight.policy import init_params
from greenlight.refinement import BackendConfig
from greenlight.scenario import ScenarioConfig, emv_scenario, routine_scenario
from tests.test_core import seed_queue

RULE = BackendConfig(kind="rule_based")


def small_scenario(**kwargs):
    return ScenarioConfig(demand={"N_through": 300, "E_through": 150},
                          duration=300, **kwargs)


def untrained():
    return init_params(8, 4, seed=0)


# ---------------------------------------------------------------------------
# Metrics

def test_compute_metrics_hand_oracle():
    world = make_world(build_intersection("fourleg"), {})
    world.completed = [
        Vehicle(id=0, cls="regular", movement=1, entry_time=0, waiting=10,
                exit_time=30),
        Vehicle(id=1, cls="regular", movement=2, entry_time=10, waiting=20,
                exit_time=50),
        Vehicle(id=2, cls="emergency", movement=7, entry_time=5, waiting=3,
                exit_time=25),
    ]
    seed_queue(world, 3, 2)
    decisions = [{"executed": 1, "a_rl": 1}, {"executed": 2, "a_rl": 1}]
    rec = compute_metrics(world, decisions)
    assert rec.att == pytest.approx(35.0)
    assert rec.awt == pytest.approx(15.0)
    assert rec.aett == pytest.approx(20.0)
    assert rec.aewt == pytest.approx(3.0)
    assert (rec.completed, rec.emv_completed, rec.residual) == (2, 1, 2)
    assert (rec.preserved, rec.refined) == (1, 1)


def test_no_emv_metrics_absent_not_zero():
    world = make_world(build_intersection("fourleg"), {})
    world.completed = [Vehicle(id=0, cls="regular", movement=1, entry_time=0,
                               waiting=4, exit_time=9)]
    rec = compute_metrics(world)
    assert rec.aett is None and rec.aewt is None
    assert rec.awt == 4.0


def test_metrics_recomputable_from_event_log():
    result = run_episode(small_scenario(), "fixtime", seed=5)
    entries = {}
    waits, travels = [], []
    for clock, kind, payload in result.world_log:
        if kind == "arrive":
            vid, _mid = payload
            entries[vid] = clock
        elif kind == "depart":
            vid, _mid, cls, waiting = payload
            if cls == "regular":
                waits.append(waiting)
                travels.append(clock - entries[vid])
    assert len(waits) == result.metrics.completed
    assert result.metrics.awt == pytest.approx(sum(waits) / len(waits))
    assert result.metrics.att == pytest.approx(sum(travels) / len(travels))


# ---------------------------------------------------------------------------
# Episode runner

def test_run_episode_deterministic():
    a = run_episode(small_scenario(), "maxpressure", seed=3)
    b = run_episode(small_scenario(), "maxpressure", seed=3)
    assert a.log_digest == b.log_digest
    assert a.metrics == b.metrics
    c = run_episode(small_scenario(), "maxpressure", seed=4)
    assert a.log_digest != c.log_digest


def test_run_episode_controller_requirements():
    with pytest.raises(ConfigurationError):
        run_episode(small_scenario(), "rl", seed=0)
    with pytest.raises(ConfigurationError):
        run_episode(small_scenario(), "refined", seed=0, params=untrained())
    with pytest.raises(ConfigurationError):
        run_episode(small_scenario(), "telepathy", seed=0)


def test_refined_decision_log_accounting():
    result = run_episode(small_scenario(), "refined", seed=1,
                         params=untrained(), backend=RULE)
    rec = result.metrics
    assert len(result.decisions) == 300        # one decision per tick
    assert rec.preserved + rec.refined == 300
    for d in result.decisions:
        assert set(d) == {"clock", "a_rl", "candidates", "executed",
                          "accepted", "guideline", "attempts", "latency_ms"}
        assert d["attempts"] <= RULE.k


def test_refined_with_dead_backend_equals_backbone():
    bare = run_episode(small_scenario(), "rl", seed=2, params=untrained())
    dead = run_episode(small_scenario(), "refined", seed=2, params=untrained(),
                       backend=lambda ctx: (None, "unparseable"))
    assert bare.log_digest == dead.log_digest


# ---------------------------------------------------------------------------
# Multi-seed evaluation and export

def manifest_fixture():
    return evaluate(small_scenario(), ["fixtime", "maxpressure"],
                    [11, 12, 13], scenario_name="small")


def test_evaluate_seed_handling():
    with pytest.raises(ConfigurationError):
        evaluate(small_scenario(), ["fixtime"], [])
    single = evaluate(small_scenario(), ["fixtime"], [5])
    assert single.summary["fixtime"]["awt"]["std"] == 0.0


def test_manifest_digest_reproducible():
    assert manifest_fixture().digest() == manifest_fixture().digest()


def test_summary_matches_records():
    manifest = manifest_fixture()
    recs = manifest.records["fixtime"]
    awts = [r.awt for r in recs]
    assert manifest.summary["fixtime"]["awt"]["mean"] == \
        pytest.approx(sum(awts) / len(awts))
    table = summary_table(manifest)
    assert "fixtime" in table and "maxpressure" in table and "+/-" in table


def test_csv_export_cardinality(tmp_path):
    manifest = manifest_fixture()
    path = tmp_path / "out.csv"
    export_csv(manifest, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6                      # 3 seeds x 2 controllers
    assert list(rows[0]) == list(CSV_FIELDS)
    assert {r["controller"] for r in rows} == {"fixtime", "maxpressure"}


def test_json_round_trip(tmp_path):
    manifest = manifest_fixture()
    path = tmp_path / "out.json"
    export_json(manifest, path)
    loaded = load_manifest(path)
    assert loaded.to_dict() == manifest.to_dict()
    assert loaded.digest() == manifest.digest()


def test_export_writes_all_formats(tmp_path):
    written = export(manifest_fixture(), tmp_path)
    assert [p.rsplit("/", 1)[-1] for p in written] == \
        ["small.csv", "small.json", "small_summary.txt"]


def test_export_sweep_monotone_axis(tmp_path):
    manifests = {}
    for count in (0, 1):
        scenario = emv_scenario(count, duration=300)
        manifests[count] = evaluate(scenario, ["refined"], [1],
                                    scenario_name=f"emv{count}",
                                    params=untrained(), backend=RULE)
    path = export_sweep(manifests, tmp_path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["emv_count"]) for r in rows] == [0, 1]
    for r in rows:
        assert float(r["preserved_mean"]) + float(r["refined_mean"]) == 300.0


def test_metrics_record_row():
    rec = MetricsRecord(att=1.0, awt=2.0, aett=None, aewt=None, completed=3,
                        emv_completed=0, residual=1)
    row = rec.as_row(7, "s", "fixtime")
    assert row["seed"] == 7 and row["controller"] == "fixtime"
    assert set(row) == set(CSV_FIELDS)
