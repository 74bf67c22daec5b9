"""Experiment orchestration, run artifacts and table emission.

Per-seed work fans out to a bounded process pool; the artifact is then
assembled in seed order so every table is byte-deterministic. Wall times live
in their own file and never enter the result tables.
"""
from __future__ import annotations

import csv
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..diagnostics import SweepCurve
from ..errors import ConfigurationError, UsageError
from ..evaluation import paired_stats
from ..io import fmt
from .experiments import NA as NO_HORIZON
from .experiments import RunOptions, run_seed
from .manifest import ExperimentManifest
from .references import phase_reference, reference

OUT_ENV = "MECHSPACE_OUT"
GAP = "NA"

RESULT_FIELDS = ("variant", "seed", "metric", "horizon", "value")


def default_out_root():
    return Path(os.environ.get(OUT_ENV, "mechspace_runs"))


def _key_horizon(h):
    return NO_HORIZON if h in (NO_HORIZON, None, "") else int(h)


def _horizon_sort(h):
    return (-1, 0) if h == NO_HORIZON else (0, int(h))


@dataclass
class RunArtifact:
    path: Path
    manifest: ExperimentManifest
    rows: list = field(default_factory=list)
    cells: list = field(default_factory=list)
    timing: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    sweep: list = field(default_factory=list)

    # queries ----------------------------------------------------------------
    @property
    def variants(self):
        seen = []
        for c in self.cells:
            if c[0] not in seen:
                seen.append(c[0])
        return seen

    @property
    def seeds(self):
        return self.manifest.seeds

    @property
    def failed_cells(self):
        return [c for c in self.cells if c[2] != "ok"]

    @property
    def complete(self):
        return not self.failed_cells

    def metrics(self):
        """Available (metric, horizon) keys in first-seen order."""
        out = []
        for r in self.rows:
            key = (r[2], r[3])
            if key not in out:
                out.append(key)
        return out

    def metric_names(self):
        return sorted({r[2] for r in self.rows})

    def values(self, variant, metric, horizon=NO_HORIZON):
        """{seed: value} for one cell family."""
        horizon = _key_horizon(horizon)
        return {r[1]: r[4] for r in self.rows if r[0] == variant and r[2] == metric and r[3] == horizon}

    def mean(self, variant, metric, horizon=NO_HORIZON):
        v = list(self.values(variant, metric, horizon).values())
        return float(np.mean(v)) if v else float("nan")

    def sweep_curve(self):
        if not self.sweep:
            raise ConfigurationError("artifact holds no K sweep")
        Ks = sorted({r[0] for r in self.sweep})
        seeds = sorted({r[1] for r in self.sweep})
        table = {(r[0], r[1]): r[3] for r in self.sweep}
        vals = np.array([[table.get((K, s), np.nan) for K in Ks] for s in seeds])
        return SweepCurve(Ks, seeds, vals, self.sweep[0][2])

    # persistence ------------------------------------------------------------
    @classmethod
    def load(cls, path):
        """Re-read an artifact directory written by :func:`run_experiment`."""
        from .manifest import load_manifest
        path = Path(path)
        if not (path / "manifest.yaml").exists():
            raise UsageError(f"{path} is not a run artifact (no manifest.yaml)")
        art = cls(path, load_manifest(path / "manifest.yaml"))
        for r in _read_csv(path / "results.csv"):
            art.rows.append((r["variant"], int(r["seed"]), r["metric"], _key_horizon(r["horizon"]), float(r["value"])))
        for r in _read_csv(path / "cells.csv"):
            art.cells.append((r["variant"], int(r["seed"]), r["status"], r["fingerprint"], r["error"]))
        if (path / "timing.csv").exists():
            art.timing = [(r["variant"], int(r["seed"]), float(r["seconds"])) for r in _read_csv(path / "timing.csv")]
        if (path / "curves.csv").exists():
            art.curves = [(r["variant"], int(r["seed"]), r["curve"], int(r["step"]), float(r["value"]))
                          for r in _read_csv(path / "curves.csv")]
        if (path / "sweep.csv").exists():
            art.sweep = [(int(r["K"]), int(r["seed"]), r["metric"], float(r["value"]))
                         for r in _read_csv(path / "sweep.csv")]
        return art


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        # shortest round-trip text; exact and stable across runs
        return fmt(v) if not np.isfinite(v) else repr(float(v))
    text = str(v)
    return f'"{text}"' if ("," in text or '"' in text) else text


def version_stamp():
    return (f"mechspace {__version__}\npython {platform.python_version()}\nnumpy {np.__version__}\n"
            f"scipy {scipy.__version__}\nplatform {platform.platform()}\n")


# ---------------------------------------------------------------------------
# running


def _run_seed_job(args):
    kind, data, seed, opts = args
    return run_seed(kind, data, seed, opts)


def run_experiment(manifest: ExperimentManifest, out_root=None, jobs=1, reuse_checkpoints=False,
                   evaluate=True) -> RunArtifact:
    """Run every seed of ``manifest`` and persist the artifact under ``out_root/<output>``."""
    if jobs < 1:
        raise ConfigurationError("jobs must be >= 1")
    out_root = Path(out_root) if out_root is not None else default_out_root()
    path = out_root / manifest.output
    path.mkdir(parents=True, exist_ok=True)
    (path / "manifest.yaml").write_text(manifest.to_yaml())
    (path / "version.txt").write_text(version_stamp())
    opts = RunOptions(path / "checkpoints", reuse_checkpoints, evaluate)
    jobs_args = [(manifest.kind, manifest.data, s, opts) for s in manifest.seeds]
    if jobs == 1 or len(jobs_args) == 1:
        outcomes = [_run_seed_job(a) for a in jobs_args]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(jobs_args))) as pool:
            outcomes = list(pool.map(_run_seed_job, jobs_args))
    art = RunArtifact(path, manifest)
    for o in sorted(outcomes, key=lambda o: manifest.seeds.index(o.seed)):
        art.rows.extend(o.rows)
        art.cells.extend(o.cells)
        art.timing.extend(o.timing)
        art.curves.extend(o.curves)
        art.sweep.extend(o.sweep)
    write_artifact(art)
    if evaluate:
        emit_tables(art)
    return art


def write_artifact(art: RunArtifact):
    p = art.path
    _write_csv(p / "results.csv", RESULT_FIELDS, art.rows)
    _write_csv(p / "cells.csv", ("variant", "seed", "status", "fingerprint", "error"), art.cells)
    _write_csv(p / "timing.csv", ("variant", "seed", "seconds"), [(v, s, round(t, 3)) for v, s, t in art.timing])
    if art.curves:
        _write_csv(p / "curves.csv", ("variant", "seed", "curve", "step", "value"), art.curves)
    if art.sweep:
        _write_csv(p / "sweep.csv", ("K", "seed", "metric", "value"), art.sweep)


# ---------------------------------------------------------------------------
# tables


def _expected_keys(art):
    """Per variant, the (metric, horizon) keys it should have; used to mark gaps."""
    seen = {v: [] for v in art.variants}
    for r in art.rows:
        keys = seen.setdefault(r[0], [])
        if (r[2], r[3]) not in keys:
            keys.append((r[2], r[3]))
    populated = [set(k) for k in seen.values() if k]
    common = set.intersection(*populated) if populated else set()
    order = art.metrics()
    return {v: (keys if keys else sorted(common, key=order.index)) for v, keys in seen.items()}


def summary_rows(art, metrics=None):
    """(variant, metric, horizon, n, missing, mean, std, paper) rows; gaps are NA."""
    keys = _expected_keys(art)
    out = []
    for variant, vkeys in keys.items():
        for metric, horizon in sorted(vkeys, key=lambda k: (k[0], _horizon_sort(k[1]))):
            if metrics is not None and metric not in metrics:
                continue
            vals = [art.values(variant, metric, horizon).get(s) for s in art.seeds]
            vals = [v for v in vals if v is not None]
            n = len(vals)
            ref = reference(art.manifest, variant, metric, horizon if horizon != NO_HORIZON else None)
            if n == 0:
                mean = std = GAP
            else:
                with np.errstate(invalid="ignore"):
                    mean = float(np.mean(vals))
                    std = float(np.std(vals, ddof=1)) if n > 1 else 0.0
            out.append((variant, metric, horizon, n, len(art.seeds) - n, mean, std, GAP if ref is None else float(ref)))
    return out


def pivot_rows(art, metric):
    """Variant rows by horizon columns with "mean ± std" cells."""
    horizons = sorted({r[3] for r in art.rows if r[2] == metric}, key=_horizon_sort)
    summ = {(r[0], r[2]): r for r in summary_rows(art, [metric])}
    rows = []
    for variant in art.variants:
        row = [variant]
        for h in horizons:
            r = summ.get((variant, h))
            if r is None or r[5] == GAP:
                row.append(GAP)
            else:
                row.append(f"{r[5]:.4f} ± {r[6]:.4f}")
        rows.append(row)
    return ["variant"] + [f"h={h}" if h != NO_HORIZON else "value" for h in horizons], rows


def default_comparisons(art):
    m = art.manifest
    comps = m["evaluation"]["comparisons"]
    if comps:
        return [(name, a, b) for name, (a, b) in comps.items()]
    if m.kind == "lorenz96_phase_sweep":
        return [(f"Full[{e['label']}] vs Direct[{e['label']}]", f"Full[{e['label']}]", f"Direct[{e['label']}]")
                for e in m["scan"]]
    if m.kind in ("lorenz96_rollout", "burgers_switching") and "Full" in art.variants:
        return [(f"Full vs {v}", "Full", v) for v in art.variants if v != "Full"]
    return []


PAIRED_METRICS = {"rmse", "diverged_fraction", "theta_drift", "pre_rmse", "post_rmse", "growth_jump",
                  "recovery_steps", "near_split_rmse"}


def paired_rows(art):
    """Paired statistics over seeds where both variants have a value; lower is better."""
    rows = []
    for name, a, b in default_comparisons(art):
        keys = [k for k in art.metrics() if k[0] in PAIRED_METRICS]
        for metric, horizon in keys:
            va, vb = art.values(a, metric, horizon), art.values(b, metric, horizon)
            seeds = [s for s in art.seeds if s in va and s in vb]
            if len(seeds) < 2:
                if va or vb:
                    rows.append((name, metric, horizon, len(seeds), GAP, GAP, GAP, GAP, GAP))
                continue
            st = paired_stats([va[s] for s in seeds], [vb[s] for s in seeds])
            rows.append((name, metric, horizon, st.n, st.win_count, st.ties, st.mean_diff, st.t_statistic,
                         st.two_sided_p))
    return rows


def phase_rows(art):
    """Relative improvement (Direct - Full) / Direct per scan entry at the phase horizon."""
    m = art.manifest
    h = m["evaluation"]["phase_horizon"]
    sc = m["system"]
    out = []
    for e in m["scan"]:
        forcing = e["forcing"] if e["forcing"] is not None else sc["forcing"]
        dim = e["dim"] if e["dim"] is not None else sc["dim"]
        d = art.mean(f"Direct[{e['label']}]", "rmse", h)
        f = art.mean(f"Full[{e['label']}]", "rmse", h)
        imp = 100.0 * (d - f) / d if np.isfinite(d) and np.isfinite(f) and d != 0 else GAP
        ref = phase_reference(forcing, dim, e["group"])
        out.append((e["label"], e["group"], forcing, dim, h, GAP if np.isnan(d) else d, GAP if np.isnan(f) else f,
                    imp, GAP if ref is None else float(ref)))
    return out


GEOMETRY_METRICS = ("theta_std", "neighbor_mean_dist", "random_mean_dist", "neighbor_random_ratio", "sample_count",
                    "theta_drift")


def emit_tables(art: RunArtifact, metrics=None):
    """Write summary, pivot, paired and kind-specific tables; returns the written paths.

    ``metrics`` restricts the summary and pivots; unknown names raise a
    UsageError listing what the artifact holds.
    """
    available = art.metric_names()
    if metrics is not None:
        unknown = [mt for mt in metrics if mt not in available]
        if unknown:
            raise UsageError(f"unknown metric(s) {', '.join(unknown)}; available: {', '.join(available)}")
    p = art.path
    written = []
    _write_csv(p / "summary.csv", ("variant", "metric", "horizon", "n", "missing", "mean", "std", "paper"),
               summary_rows(art, metrics))
    written.append(p / "summary.csv")
    for metric in (metrics or available):
        header, rows = pivot_rows(art, metric)
        target = p / f"pivot_{metric}.csv"
        _write_csv(target, header, rows)
        written.append(target)
    paired = paired_rows(art)
    if paired:
        _write_csv(p / "paired.csv", ("comparison", "metric", "horizon", "n", "wins", "ties", "mean_diff", "t", "p"),
                   paired)
        written.append(p / "paired.csv")
    geo = [(v, s, mt, h, val) for v, s, mt, h, val in art.rows
           if mt in GEOMETRY_METRICS or mt.startswith("knn_purity.")]
    if geo:
        _write_csv(p / "geometry.csv", RESULT_FIELDS, geo)
        written.append(p / "geometry.csv")
    if art.manifest.kind == "lorenz96_phase_sweep":
        _write_csv(p / "phase.csv", ("label", "group", "forcing", "dim", "horizon", "direct_mean", "full_mean",
                                     "improvement_pct", "paper_pct"), phase_rows(art))
        written.append(p / "phase.csv")
    if art.sweep:
        curve = art.sweep_curve()
        rows = [(s, k, int(k not in (curve.K_values[0], curve.K_values[-1])))
                for s, k in zip(curve.seeds, curve.best_K())]
        _write_csv(p / "sweep_best.csv", ("seed", "best_K", "interior"), rows)
        written.append(p / "sweep_best.csv")
    return written


RESULT_TABLES = ("results.csv", "cells.csv", "summary.csv", "paired.csv", "geometry.csv", "phase.csv", "sweep.csv",
                 "sweep_best.csv", "curves.csv")


def result_table_paths(path):
    """Deterministic tables of an artifact (pivots included), sorted by name."""
    path = Path(path)
    names = [n for n in RESULT_TABLES if (path / n).exists()]
    names += sorted(q.name for q in path.glob("pivot_*.csv"))
    return sorted(path / n for n in names)


