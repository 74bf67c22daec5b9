"""PNG figures rendered from a run artifact's long-format tables."""
from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .run import GAP, NO_HORIZON, RunArtifact, emit_tables, phase_rows  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def rmse_by_horizon(art, path):
    """Mean ± std RMSE against horizon, one line per variant."""
    horizons = sorted({r[3] for r in art.rows if r[2] == "rmse"})
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for v in art.variants:
        vals = [list(art.values(v, "rmse", h).values()) for h in horizons]
        if not all(vals):
            continue
        mean = np.array([np.mean(x) for x in vals])
        std = np.array([np.std(x, ddof=1) if len(x) > 1 else 0.0 for x in vals])
        if not np.all(np.isfinite(mean)):
            continue
        ax.errorbar(horizons, mean, yerr=std, marker="o", ms=3, capsize=2, label=v)
    ax.set_xlabel("rollout horizon (steps)")
    ax.set_ylabel("RMSE")
    ax.set_xscale("log", base=2)
    ax.set_xticks(horizons, [str(h) for h in horizons])
    ax.legend(frameon=False)
    return _save(fig, path)


def step_curves(art, curve, path, ylabel="RMSE", mark=None):
    """Seed-averaged per-step curves from curves.csv."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for v in art.variants:
        rows = [r for r in art.curves if r[0] == v and r[2] == curve]
        if not rows:
            continue
        steps = sorted({r[3] for r in rows})
        by_step = {s: [r[4] for r in rows if r[3] == s] for s in steps}
        with np.errstate(invalid="ignore"):
            mean = np.array([np.mean(by_step[s]) for s in steps])
        ax.plot(steps, mean, label=v)
    if mark is not None:
        ax.axvline(mark, color="0.5", lw=0.8, ls="--")
    ax.set_xlabel("rollout step")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    return _save(fig, path)


def sweep_curve(art, path):
    curve = art.sweep_curve()
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for i, s in enumerate(curve.seeds):
        ax.plot(curve.K_values, curve.values[i], color="0.7", lw=0.8)
    ax.plot(curve.K_values, np.nanmean(curve.values, axis=0), color="k", marker="o", ms=3, label="mean")
    ax.set_xscale("log", base=2)
    ax.set_xticks(curve.K_values, [str(k) for k in curve.K_values])
    ax.set_xlabel("prototype count K")
    ax.set_ylabel(curve.metric)
    ax.legend(frameon=False)
    return _save(fig, path)


def metric_bars(art, metrics, path):
    """Per-variant bar chart of seed means for scalar metrics."""
    present = [m for m in metrics if any(r[2] == m for r in art.rows)]
    fig, axes = plt.subplots(1, len(present), figsize=(2.4 * len(present), 2.8), squeeze=False)
    for ax, m in zip(axes[0], present):
        names, means, errs = [], [], []
        for v in art.variants:
            vals = [r[4] for r in art.rows if r[0] == v and r[2] == m]
            if vals:
                names.append(v)
                means.append(np.mean(vals))
                errs.append(np.std(vals, ddof=1) if len(vals) > 1 else 0.0)
        ax.bar(range(len(names)), means, yerr=errs, color="0.6", capsize=2)
        ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
        ax.set_title(m, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def phase_bars(art, path):
    rows = phase_rows(art)
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    x = np.arange(len(rows))
    ours = [r[7] if r[7] != GAP else np.nan for r in rows]
    ref = [r[8] if r[8] != GAP else np.nan for r in rows]
    ax.bar(x - 0.2, ours, width=0.4, label="this run", color="0.3")
    ax.bar(x + 0.2, ref, width=0.4, label="published", color="0.75")
    ax.axhline(0, color="k", lw=0.6)
    ax.set_xticks(x, [r[0] for r in rows])
    ax.set_ylabel("improvement of Full over Direct (%)")
    ax.legend(frameon=False)
    return _save(fig, path)


def render_report(art: RunArtifact, metrics=None):
    """Emit tables and figures for an artifact; returns the written paths."""
    written = list(emit_tables(art, metrics))
    fig_dir = Path(art.path) / "figures"
    fig_dir.mkdir(exist_ok=True)
    kind = art.manifest.kind
    with plt.rc_context(STYLE):
        if kind == "lorenz96_rollout":
            written.append(rmse_by_horizon(art, fig_dir / "rmse_by_horizon.png"))
            written.append(step_curves(art, "rmse_by_step", fig_dir / "rmse_by_step.png"))
            if any(r[2] in ("theta_drift", "theta_std") for r in art.rows):
                written.append(metric_bars(art, ["theta_drift", "theta_std", "neighbor_random_ratio"],
                                           fig_dir / "mechanism_geometry.png"))
        elif kind == "lorenz96_phase_sweep":
            written.append(phase_bars(art, fig_dir / "phase_improvement.png"))
        elif kind == "burgers_switching":
            w = art.manifest["evaluation"]["switch_window"]
            written.append(step_curves(art, "switch_rmse_by_step", fig_dir / "switching.png", mark=w + 0.5))
            written.append(metric_bars(art, ["pre_rmse", "post_rmse", "growth_jump"], fig_dir / "switch_metrics.png"))
        elif kind == "burgers_ksweep":
            written.append(sweep_curve(art, fig_dir / "ksweep.png"))
        elif kind == "burgers_geometry":
            names = sorted({r[2] for r in art.rows if r[2] != "sample_count" and r[3] == NO_HORIZON})
            written.append(metric_bars(art, names, fig_dir / "descriptor_geometry.png"))
    return written
