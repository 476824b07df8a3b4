"""Matplotlib figure rendering for evaluation reports.

Every report path writes figures next to the delimited output; all figures
go through the Agg backend so the toolkit stays headless."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_metric_bars(manifest, outdir, metrics=("awt", "aewt")):
    """One grouped bar chart of mean +/- std per controller and metric."""
    os.makedirs(outdir, exist_ok=True)
    controllers = list(manifest.records)
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4))
    if len(metrics) == 1:
        axes = [axes]
    labels = {"att": "avg travel time (s)", "awt": "avg waiting time (s)",
              "aett": "EMV travel time (s)", "aewt": "EMV waiting time (s)"}
    for ax, metric in zip(axes, metrics):
        means, stds, names = [], [], []
        for name in controllers:
            entry = manifest.summary[name][metric]
            if entry["mean"] is None:
                continue
            names.append(name)
            means.append(entry["mean"])
            stds.append(entry["std"])
        ax.bar(names, means, yerr=stds, capsize=4, color="tab:blue", alpha=0.8)
        ax.set_ylabel(labels.get(metric, metric))
        ax.set_title(f"{manifest.scenario_name}: {metric.upper()}")
        ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    path = os.path.join(outdir, f"{manifest.scenario_name}_metrics.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_training_curve(curve, outdir, name="training"):
    os.makedirs(outdir, exist_ok=True)
    updates = [row["update_idx"] for row in curve]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(updates, [row["mean_reward"] for row in curve], color="tab:green")
    ax1.set_xlabel("update")
    ax1.set_ylabel("mean rollout reward")
    ax2.plot(updates, [row["policy_loss"] for row in curve], label="policy")
    ax2.plot(updates, [row["value_loss"] for row in curve], label="value")
    ax2.set_xlabel("update")
    ax2.set_ylabel("loss")
    ax2.set_yscale("symlog")
    ax2.legend()
    fig.tight_layout()
    path = os.path.join(outdir, f"{name}_curve.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_sweep(plotdata_csv, outdir):
    """Render the emergency-demand sweep: regular waiting time and the
    preserved/refined decision split versus EMV count."""
    os.makedirs(outdir, exist_ok=True)
    with open(plotdata_csv) as fh:
        rows = list(csv.DictReader(fh))
    counts = [int(r["emv_count"]) for r in rows]

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(counts, [float(r["awt_mean"]) for r in rows], "o-",
            color="tab:blue", label="regular AWT")
    aewt = [(c, float(r["aewt_mean"])) for c, r in zip(counts, rows)
            if r["aewt_mean"] not in ("", "None")]
    if aewt:
        ax.plot([c for c, _ in aewt], [v for _, v in aewt], "s--",
                color="tab:red", label="EMV waiting")
    ax.set_xlabel("number of emergency vehicles")
    ax.set_ylabel("seconds")
    ax.legend()
    fig.tight_layout()
    path_a = os.path.join(outdir, "sweep_efficiency.png")
    fig.savefig(path_a, dpi=150)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(counts, [float(r["preserved_mean"]) for r in rows], "o-",
            label="preserved")
    ax.plot(counts, [float(r["refined_mean"]) for r in rows], "s-",
            label="refined")
    ax.set_xlabel("number of emergency vehicles")
    ax.set_ylabel("decisions per episode")
    ax.legend()
    fig.tight_layout()
    path_b = os.path.join(outdir, "sweep_refinement.png")
    fig.savefig(path_b, dpi=150)
    plt.close(fig)
    return path_a, path_b
