"""Command-line entry points: train, eval, sweep, ablate, and the fake
remote backend.  Options can also be supplied through a YAML config document
(--config); explicit flags win over the config, which wins over defaults."""

from __future__ import annotations

import argparse
import csv
import os
import sys

import yaml

from . import fake_backend, plots
from .harness import CONTROLLER_NAMES, evaluate, export, export_sweep
from .policy import PPOConfig, load_checkpoint, save_checkpoint, train
from .refinement import BackendConfig
from .scenario import (ScenarioConfig, emv_scenario, regulation_scenario,
                       routine_scenario, training_scenario)

ENDPOINT_ENV_VAR = "GREENLIGHT_ENDPOINT"


def resolve_scenario(spec):
    """Accept a preset name (routine, training, emv, emv:N, regulation) or a
    YAML path."""
    if spec == "routine":
        return routine_scenario(), "routine"
    if spec == "training":
        return training_scenario(), "training"
    if spec == "regulation":
        return regulation_scenario(), "regulation"
    if spec.startswith("emv"):
        count = int(spec.split(":", 1)[1]) if ":" in spec else 3
        return emv_scenario(count), f"emv{count}"
    if os.path.exists(spec):
        name = os.path.splitext(os.path.basename(spec))[0]
        return ScenarioConfig.load(spec), name
    raise SystemExit(f"unknown scenario {spec!r} (not a preset, not a file)")


def _pick(cli_value, config, key, fallback):
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return fallback


def make_backend(args, config):
    kind = _pick(args.backend, config, "backend", "rule_based")
    if kind == "rule_based":
        return BackendConfig(kind="rule_based",
                             k=_pick(args.k_attempts, config, "k_attempts", 3))
    endpoint = _pick(args.endpoint, config, "endpoint",
                     os.environ.get(ENDPOINT_ENV_VAR))
    if not endpoint:
        raise SystemExit("remote backend selected but no endpoint given "
                         f"(--endpoint, config, or ${ENDPOINT_ENV_VAR})")
    return BackendConfig(kind="remote", endpoint=endpoint,
                         k=_pick(args.k_attempts, config, "k_attempts", 3),
                         timeout_ms=_pick(args.timeout_ms, config,
                                          "timeout_ms", 2000))


def cmd_train(args, config):
    scenario, name = resolve_scenario(_pick(args.scenario, config,
                                            "scenario", "training"))
    steps = int(_pick(args.steps, config, "steps", 50_000))
    seed = int(_pick(args.seed, config, "seed", 0))
    outdir = _pick(args.outdir, config, "outdir", "reports")
    cfg = PPOConfig()
    print(f"training on scenario {name!r} for {steps} steps (seed {seed})")
    params, curve = train(scenario.make_env, cfg, steps, seed=seed,
                          progress=lambda row: print(
                              f"  update {row['update_idx']:4d}  "
                              f"reward {row['mean_reward']:9.2f}  "
                              f"lr {row['lr']:.2e}"))
    out = _pick(args.out, config, "out", os.path.join(outdir, "policy.npz"))
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_checkpoint(out, params, cfg,
                    extra={"scenario": name, "steps": steps, "seed": seed})
    os.makedirs(outdir, exist_ok=True)
    curve_path = os.path.join(outdir, "training_curve.csv")
    with open(curve_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["update_idx", "mean_reward",
                                                "policy_loss", "value_loss",
                                                "entropy", "lr"])
        writer.writeheader()
        writer.writerows(curve)
    fig = plots.plot_training_curve(curve, outdir)
    print(f"checkpoint: {out}\ncurve: {curve_path}\nfigure: {fig}")


def cmd_eval(args, config):
    scenario, name = resolve_scenario(_pick(args.scenario, config,
                                            "scenario", "emv:3"))
    controllers = _pick(args.controllers, config, "controllers",
                        "fixtime,maxpressure,rl,refined").split(",")
    for ctrl in controllers:
        if ctrl not in CONTROLLER_NAMES:
            raise SystemExit(f"unknown controller {ctrl!r}; "
                             f"choose from {CONTROLLER_NAMES}")
    n_seeds = int(_pick(args.seeds, config, "seeds", 5))
    seed_base = int(_pick(args.seed_base, config, "seed_base", 100))
    outdir = _pick(args.outdir, config, "outdir", "reports")
    params = None
    if any(c in ("rl", "refined") for c in controllers):
        if not args.checkpoint and "checkpoint" not in config:
            raise SystemExit("rl/refined controllers require --checkpoint")
        params, _, _ = load_checkpoint(_pick(args.checkpoint, config,
                                             "checkpoint", None))
    backend = make_backend(args, config) if "refined" in controllers else None
    manifest = evaluate(scenario, controllers,
                        [seed_base + i for i in range(n_seeds)],
                        scenario_name=name, params=params, backend=backend)
    written = export(manifest, outdir)
    written.append(plots.plot_metric_bars(manifest, outdir))
    from .harness import summary_table
    print(summary_table(manifest))
    print("\n".join(f"wrote {p}" for p in written))


def cmd_sweep(args, config):
    max_emv = int(_pick(args.max_emv, config, "max_emv", 5))
    n_seeds = int(_pick(args.seeds, config, "seeds", 5))
    seed_base = int(_pick(args.seed_base, config, "seed_base", 100))
    outdir = _pick(args.outdir, config, "outdir", "reports")
    params, _, _ = load_checkpoint(_pick(args.checkpoint, config,
                                         "checkpoint", None))
    backend = make_backend(args, config)
    manifests = {}
    for count in range(max_emv + 1):
        scenario = emv_scenario(count)
        manifests[count] = evaluate(
            scenario, ["refined"], [seed_base + i for i in range(n_seeds)],
            scenario_name=f"emv{count}", params=params, backend=backend)
        export(manifests[count], outdir)
        print(f"emv count {count} done")
    plotdata = export_sweep(manifests, outdir)
    figs = plots.plot_sweep(plotdata, outdir)
    print(f"wrote {plotdata}\nwrote {figs[0]}\nwrote {figs[1]}")


ABLATION_ROWS = (
    ("format_only", {"guidelines": False, "chain": False}),
    ("format_guidelines", {"guidelines": True, "chain": False}),
    ("format_chain_guidelines", {"guidelines": True, "chain": True}),
)


def cmd_ablate(args, config):
    scenario, name = resolve_scenario(_pick(args.scenario, config,
                                            "scenario", "emv:3"))
    n_seeds = int(_pick(args.seeds, config, "seeds", 5))
    seed_base = int(_pick(args.seed_base, config, "seed_base", 100))
    outdir = _pick(args.outdir, config, "outdir", "reports")
    params, _, _ = load_checkpoint(_pick(args.checkpoint, config,
                                         "checkpoint", None))
    backend = make_backend(args, config)
    for row_name, flags in ABLATION_ROWS:
        manifest = evaluate(
            scenario, ["refined"], [seed_base + i for i in range(n_seeds)],
            scenario_name=f"{name}_{row_name}", params=params,
            backend=backend, **flags)
        export(manifest, outdir)
        entry = manifest.summary["refined"]
        aewt = entry["aewt"]["mean"]
        print(f"{row_name:26s} AWT {entry['awt']['mean']:.2f}  "
              f"AEWT {aewt if aewt is None else round(aewt, 2)}")


def cmd_serve_fake_backend(args, config):
    fake_backend.serve_forever(
        mode=_pick(args.mode, config, "mode", "rule"),
        port=int(_pick(args.port, config, "port", 8973)),
        delay_s=float(_pick(args.delay, config, "delay", 5.0)))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="greenlight",
        description="Traffic-signal-control experimentation toolkit")
    parser.add_argument("--config", help="YAML config document with defaults "
                                         "for any option")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the PPO backbone")
    p.add_argument("--scenario")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint path (.npz)")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate controllers over seeds")
    p.add_argument("--checkpoint")
    p.add_argument("--scenario")
    p.add_argument("--controllers")
    p.add_argument("--seeds", type=int)
    p.add_argument("--seed-base", type=int)
    p.add_argument("--outdir")
    p.add_argument("--backend", choices=["rule_based", "remote"])
    p.add_argument("--endpoint")
    p.add_argument("--timeout-ms", type=int)
    p.add_argument("--k-attempts", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep the number of emergency vehicles")
    p.add_argument("--checkpoint")
    p.add_argument("--max-emv", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--seed-base", type=int)
    p.add_argument("--outdir")
    p.add_argument("--backend", choices=["rule_based", "remote"])
    p.add_argument("--endpoint")
    p.add_argument("--timeout-ms", type=int)
    p.add_argument("--k-attempts", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="prompt-component ablation rows")
    p.add_argument("--checkpoint")
    p.add_argument("--scenario")
    p.add_argument("--seeds", type=int)
    p.add_argument("--seed-base", type=int)
    p.add_argument("--outdir")
    p.add_argument("--backend", choices=["rule_based", "remote"])
    p.add_argument("--endpoint")
    p.add_argument("--timeout-ms", type=int)
    p.add_argument("--k-attempts", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve-fake-backend",
                       help="run the remote-protocol test double")
    p.add_argument("--mode", choices=list(fake_backend.MODES))
    p.add_argument("--port", type=int)
    p.add_argument("--delay", type=float)
    p.set_defaults(func=cmd_serve_fake_backend)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    config = {}
    if args.config:
        with open(args.config) as fh:
            config = yaml.safe_load(fh) or {}
    args.func(args, config)


if __name__ == "__main__":
    sys.exit(main())
