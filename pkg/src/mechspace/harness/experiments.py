"""Per-seed pipelines for each manifest kind.

Each ``run_seed`` function simulates the seed's data once, fits every listed
variant on it under the paired protocol and returns a :class:`SeedOutcome`
of plain rows, so seeds can run in worker processes and be reduced in seed
order afterwards.
"""
from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bank import frozen_buffer, init_learnable_bank, kmeans_prototypes, select_representatives
from ..diagnostics import geometry_report, quartile_labels, rollout_drift
from ..errors import ConfigurationError
from ..evaluation import rollout_errors, switching_metrics
from ..extract import build_descriptor_set
from ..io import load_model, save_model
from ..models import Standardizer, build_model, nvar_fit, rcesn_fit
from ..systems import BurgersConfig, Lorenz96Config, simulate_burgers, simulate_lorenz96
from ..training import TrainConfig, run_seed_cells, train_model
from ..windows import SplitSpec, extract_fragments, extract_history_pairs, fingerprint, split_bounds, split_pairs

NA = "-"  # horizon marker for metrics without a horizon

BURGERS_MODEL_DEFAULTS = {"enc_widths": [64, 64], "pred_widths": [64, 64], "z_dim": 32, "local_rule": True}


@dataclass
class SeedOutcome:
    seed: int
    rows: list = field(default_factory=list)  # (variant, seed, metric, horizon, value)
    cells: list = field(default_factory=list)  # (variant, seed, status, fingerprint, error)
    timing: list = field(default_factory=list)  # (variant, seed, seconds)
    curves: list = field(default_factory=list)  # (variant, seed, curve, step, value)
    sweep: list = field(default_factory=list)  # (K, seed, metric, value)


@dataclass
class RunOptions:
    checkpoint_dir: Path | None = None
    reuse_checkpoints: bool = False
    evaluate: bool = True


def _split_spec(m, seed):
    sp = m["split"]
    return SplitSpec(sp["train_fraction"], sp["val_fraction"], sp["test_fraction"], sp["split_mode"], seed)


def _train_config(m, seed, fit_norm=True):
    t = m["train"]
    return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], seed=seed,
                       early_stop_patience=t["early_stop_patience"], gradient_clip=t["gradient_clip"],
                       fit_norm=fit_norm)


def _base_variant(name):
    return name.split("[", 1)[0]


def _ckpt_paths(opts, variant, seed):
    if opts.checkpoint_dir is None:
        return None, None
    safe = re.sub(r"[^A-Za-z0-9_.=-]", "_", variant)
    return opts.checkpoint_dir / f"{safe}_seed{seed}.npz", opts.checkpoint_dir / "banks"


def _obtain(opts, variant, seed, fit):
    """Load a stored checkpoint when reuse is requested, else fit and store it."""
    path, bank_dir = _ckpt_paths(opts, variant, seed)
    if opts.reuse_checkpoints:
        if path is None or not path.exists():
            raise ConfigurationError(f"no checkpoint for {variant} seed {seed} at {path}")
        return load_model(path, bank_dir), None
    model, log = fit()
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, path, bank_dir)
        if log is not None:
            (path.parent / "logs").mkdir(exist_ok=True)
            (path.parent / "logs" / (path.stem + ".csv")).write_text(log.to_text())
    return model, log


def _collect(outcome, cells, timing):
    for c in cells:
        status = "ok" if c.error is None else "failed"
        outcome.cells.append((c.variant, c.seed, status, c.fingerprint or "", c.error or ""))
        for (metric, horizon), value in c.metrics.items():
            outcome.rows.append((c.variant, c.seed, metric, horizon, float(value)))
        for name, curve in c.extras.get("curves", {}).items():
            for step, v in enumerate(curve, start=1):
                outcome.curves.append((c.variant, c.seed, name, step, float(v)))
        outcome.timing.append((c.variant, c.seed, timing.get(c.variant, 0.0)))


# ---------------------------------------------------------------------------
# Lorenz96


def prepare_lorenz96(m, seed, system=None):
    sc = dict(m["system"], **(system or {}))
    cfg = Lorenz96Config(dim=sc["dim"], forcing=sc["forcing"], dt=sc["dt"], steps=sc["steps"],
                         burn_in=sc["burn_in"], init_seed=sc["data_seed_offset"] + seed, init_scale=sc["init_scale"])
    traj = simulate_lorenz96(cfg)
    h, lead = m["windows"]["h"], m["windows"]["lead"]
    pairs = extract_history_pairs(traj, h, lead)
    tr, va, te = split_pairs(pairs, _split_spec(m, seed))
    ev = m["evaluation"]
    H = max(max(ev["horizons"]), ev["drift_horizon"])
    series = traj.states
    te = sorted(te, key=lambda p: p.t_index)
    cand = np.array([p.t_index for p in te if p.t_index + H < len(series)])
    if cand.size == 0:
        raise ConfigurationError("test partition too short for the evaluation horizons")
    pick = np.unique(np.round(np.linspace(0, len(cand) - 1, min(ev["n_starts"], len(cand)))).astype(int))
    starts = cand[pick]
    Xtr = np.stack([p.history for p in tr])
    Ytr = np.stack([p.target for p in tr])
    Xva = np.stack([p.history for p in va])
    Yva = np.stack([p.target for p in va])
    fp = fingerprint(Xtr, Ytr, Xva, Yva, series, starts)
    contiguous = m["split"]["split_mode"] == "temporal_contiguous"
    train_series = series[:tr[-1].t_index + lead + 1] if contiguous else None
    return {"traj": traj, "series": series, "train": (Xtr, Ytr), "val": (Xva, Yva), "test": te,
            "starts": starts, "H": H, "fingerprint": fp, "train_series": train_series, "dim": cfg.dim}


def _lorenz96_model(m, variant, seed, data):
    base = _base_variant(variant)
    hyper = dict(m["variants"].get(base, m["variants"].get(variant, {})))
    dim = data["dim"]
    h = m["windows"]["h"]
    if base == "RCESN":
        if data["train_series"] is None:
            raise ConfigurationError("RCESN needs a temporally contiguous training segment")
        hyper = {"seed": seed, **hyper}
        return lambda: (rcesn_fit(data["train_series"], hyper), None)
    if base == "NVAR":
        hyper = {"k": h, **hyper}
        return lambda: (nvar_fit(data["train"], hyper), None)
    bank = None
    if base == "Full":
        b = m["bank"]
        bank = init_learnable_bank(b["K"], b["d_m"], seed=seed, scale=b["scale"], key_dim=b["key_dim"])
    full_hyper = {"h": h, "state_dim": dim, **hyper}
    if base == "NoBank" and m["bank"] is not None:
        full_hyper.setdefault("d_m", m["bank"]["d_m"])

    def fit():
        model = build_model(base, full_hyper, seed=seed, bank=bank)
        return train_model(model, data["train"], data["val"], _train_config(m, seed))
    return fit


def lorenz96_metrics(m, model, data, seed, log=None):
    ev, dg = m["evaluation"], m["diagnostics"]
    series, starts, H = data["series"], data["starts"], data["H"]
    errs, batches = rollout_errors(model, series, starts, H, return_batch=True)
    metrics = {}
    with np.errstate(invalid="ignore"):
        for k in ev["horizons"]:
            metrics[("rmse", k)] = float(np.mean(errs[:, k - 1]))
        metrics[("diverged_fraction", H)] = float(np.mean(np.isinf(errs[:, -1])))
    metrics[("num_params", NA)] = float(model.num_params())
    if log is not None:
        metrics[("epochs_run", NA)] = float(log.epochs_run)
    curve = [float(np.mean(errs[:, k])) for k in range(H)]
    if model.variant in ("Full", "NoBank"):
        if dg["drift"]:
            mechs = np.concatenate([b.mechanisms for b in batches])[:, :ev["drift_horizon"]]
            metrics[("theta_drift", ev["drift_horizon"])] = rollout_drift(mechs)
        if dg["geometry"]:
            X = np.stack([p.history for p in data["test"]])
            _, theta, _ = model.predict_batch(X)
            rep = geometry_report(theta, None, num_random_pairs=dg["num_random_pairs"], seed=seed)
            metrics[("theta_std", NA)] = rep.theta_std
            metrics[("neighbor_random_ratio", NA)] = rep.ratio
    return metrics, {"curves": {"rmse_by_step": curve}}


def _lorenz96_cells(m, seed, opts, variants, system=None, names=None):
    timing = {}
    names = names or {v: v for v in variants}

    def prepare(s):
        return prepare_lorenz96(m, s, system)

    def fit_eval(variant, s, data):
        t0 = time.perf_counter()
        model, log = _obtain(opts, variant, s, _lorenz96_model(m, names[variant], s, data))
        timing[variant] = time.perf_counter() - t0
        if not opts.evaluate:
            return {}, data["fingerprint"]
        metrics, extras = lorenz96_metrics(m, model, data, s, log)
        return metrics, data["fingerprint"], extras

    return run_seed_cells(prepare, fit_eval, variants, seed), timing


def run_seed_lorenz96(m, seed, opts):
    out = SeedOutcome(seed)
    cells, timing = _lorenz96_cells(m, seed, opts, list(m["variants"]))
    _collect(out, cells, timing)
    return out


def run_seed_phase_sweep(m, seed, opts):
    out = SeedOutcome(seed)
    for entry in m["scan"]:
        system = {k: entry[k] for k in ("forcing", "dim") if entry[k] is not None}
        variants = [f"{v}[{entry['label']}]" for v in m["variants"]]
        names = dict(zip(variants, m["variants"]))
        cells, timing = _lorenz96_cells(m, seed, opts, variants, system, names)
        _collect(out, cells, timing)
    return out


# ---------------------------------------------------------------------------
# Burgers


def burgers_schedule(sc):
    switch = sc["switch_step"] if sc["switch_step"] is not None else sc["steps"] // 2
    if sc["switch_factor"] == 1.0:
        return ((0, sc["viscosity"]),), switch
    return ((0, sc["viscosity"]), (switch, sc["viscosity"] / sc["switch_factor"])), switch


def burgers_ensemble(m, seed, count):
    sc = m["system"]
    sched, _ = burgers_schedule(sc)
    out = []
    for i in range(count):
        cfg = BurgersConfig(grid_points=sc["grid_points"], dt=sc["dt"], steps=sc["steps"], regime_schedule=sched,
                            init_seed=sc["data_seed_offset"] + 1000 * seed + i, init_kind=sc["init_kind"],
                            substeps=sc["substeps"], init_modes=sc["init_modes"], init_amplitude=sc["init_amplitude"])
        out.append(simulate_burgers(cfg))
    return out


def _fragments(m, trajs, ids, stride_key, t_range=None):
    w = m["windows"]
    ss, ts = w[f"{stride_key}_spatial_stride"], w[f"{stride_key}_time_stride"]
    out = []
    for i, traj in zip(ids, trajs):
        for f in extract_fragments(traj, w["spatial_width"], w["time_depth"], w["lead"], ss, ts, i):
            if t_range is None:
                out.append(f)
                continue
            lo, hi = t_range
            if f.t_index - w["time_depth"] + 1 >= lo and f.t_index + w["lead"] < hi:
                out.append(f)
    if not out:
        raise ConfigurationError(f"no {stride_key} fragments fit the requested range")
    return out


def _descriptors(m, trajs, ids, t_range=None):
    b = m["bank"] or {"neighborhood_size": 25, "lam": 1e-3}
    frags = _fragments(m, trajs, ids, "desc", t_range)
    return build_descriptor_set(frags, b["neighborhood_size"], b["lam"], grid_points=m["system"]["grid_points"])


def _bank_points(m, ds, seed):
    cap = m["bank"]["max_descriptors"]
    X = ds.thetas
    if len(X) > cap:
        idx = np.sort(np.random.default_rng(seed).choice(len(X), size=cap, replace=False))
        X = X[idx]
    return X


def build_frozen_bank(m, ds, K, seed):
    b = m["bank"]
    X = _bank_points(m, ds, seed)
    if b["mode"] == "frozen_cluster":
        return kmeans_prototypes(X, K, seed=seed, max_iters=b["max_iters"])
    if b["mode"] == "frozen_selected":
        return select_representatives(X, K, seed=seed)
    return frozen_buffer(X[:K])


def _burgers_model_fit(m, variant, seed, data, bank=None):
    base = _base_variant(variant)
    w = m["windows"]
    hyper = {**BURGERS_MODEL_DEFAULTS, "h": w["time_depth"], "state_dim": m["system"]["grid_points"],
             "kind": "local_field", "spatial_width": w["spatial_width"], "d_m": data["ds"].dim,
             **m["variants"].get(base, {})}
    if base == "Direct":
        hyper.pop("local_rule", None)

    def fit():
        model = build_model(base, hyper, seed=seed, bank=bank if base == "Full" else None, norm=data["norm"])
        return train_model(model, data["train"], data["val"], _train_config(m, seed, fit_norm=False))
    return fit


def prepare_burgers_switching(m, seed):
    sc = m["system"]
    n_tr, n_va, n_te = sc["n_train_traj"], sc["n_val_traj"], sc["n_test_traj"]
    trajs = burgers_ensemble(m, seed, n_tr + n_va + n_te)
    ids = list(range(len(trajs)))
    train_f = _fragments(m, trajs[:n_tr], ids[:n_tr], "train")
    val_f = _fragments(m, trajs[n_tr:n_tr + n_va], ids[n_tr:n_tr + n_va], "train")
    ds = _descriptors(m, trajs[:n_tr], ids[:n_tr])
    _, switch = burgers_schedule(sc)
    w = m["evaluation"]["switch_window"]
    test = trajs[n_tr + n_va:]
    from ..training import pairs_to_arrays
    train, val = pairs_to_arrays(train_f), pairs_to_arrays(val_f)
    fp = fingerprint(*train, *val, *[t.states for t in test], np.array([switch, w]))
    return {"train": train, "val": val, "ds": ds, "norm": Standardizer(ds.scaler.mean, ds.scaler.std),
            "test": test, "switch": switch, "fingerprint": fp}


def run_seed_burgers_switching(m, seed, opts):
    out = SeedOutcome(seed)
    timing = {}
    w = m["evaluation"]["switch_window"]
    banks = {}

    def fit_eval(variant, s, data):
        t0 = time.perf_counter()
        bank = None
        if _base_variant(variant) == "Full":
            bank = banks.setdefault("bank", build_frozen_bank(m, data["ds"], m["bank"]["K"], s))
        model, log = _obtain(opts, variant, s, _burgers_model_fit(m, variant, s, data, bank))
        timing[variant] = time.perf_counter() - t0
        if not opts.evaluate:
            return {}, data["fingerprint"]
        start = data["switch"] - w
        curves = [rollout_errors(model, t.states, [start], 2 * w)[0] for t in data["test"]]
        curve = np.mean(curves, axis=0)
        rep = switching_metrics(curve, w, w)
        metrics = {("pre_rmse", w): rep.pre_rmse, ("post_rmse", w): rep.post_rmse,
                   ("growth_jump", w): rep.growth_jump, ("recovery_steps", w): float(rep.recovery_steps),
                   ("num_params", NA): float(model.num_params())}
        if log is not None:
            metrics[("epochs_run", NA)] = float(log.epochs_run)
        return metrics, data["fingerprint"], {"curves": {"switch_rmse_by_step": list(curve)}}

    cells = run_seed_cells(lambda s: prepare_burgers_switching(m, s), fit_eval, list(m["variants"]), seed)
    _collect(out, cells, timing)
    return out


def prepare_burgers_ksweep(m, seed):
    sc = m["system"]
    trajs = burgers_ensemble(m, seed, sc["n_train_traj"])
    ids = list(range(len(trajs)))
    T = sc["steps"] + 1
    tr_end, va_end = split_bounds(T, _split_spec(m, seed))
    ev = m["evaluation"]
    starts = [va_end - 1 + j for j in range(ev["near_split_starts"])]
    if starts[-1] + ev["near_split_horizon"] > T - 1:
        raise ConfigurationError("near-split rollouts run past the end of the trajectories")
    from ..training import pairs_to_arrays
    train = pairs_to_arrays(_fragments(m, trajs, ids, "train", (0, tr_end)))
    val = pairs_to_arrays(_fragments(m, trajs, ids, "train", (tr_end, va_end)))
    ds = _descriptors(m, trajs, ids, (0, tr_end))
    fp = fingerprint(*train, *val, *[t.states for t in trajs], np.array(starts))
    return {"train": train, "val": val, "ds": ds, "norm": Standardizer(ds.scaler.mean, ds.scaler.std),
            "trajs": trajs, "starts": starts, "fingerprint": fp}


def run_seed_burgers_ksweep(m, seed, opts):
    out = SeedOutcome(seed)
    timing = {}
    ev = m["evaluation"]
    grid = ev["K_grid"]
    horizon = ev["near_split_horizon"]
    variants = [f"Full[K={K}]" for K in grid] + [v for v in m["variants"] if v != "Full"]

    def fit_eval(variant, s, data):
        if len(data["ds"]) < max(grid) or min(len(data["ds"]), m["bank"]["max_descriptors"]) < max(grid):
            raise ConfigurationError(f"{len(data['ds'])} descriptors (cap {m['bank']['max_descriptors']}) "
                                     f"cannot support K = {max(grid)}")
        t0 = time.perf_counter()
        bank = None
        if variant.startswith("Full[K="):
            bank = build_frozen_bank(m, data["ds"], int(variant[7:-1]), s)
        model, log = _obtain(opts, variant, s, _burgers_model_fit(m, variant, s, data, bank))
        timing[variant] = time.perf_counter() - t0
        if not opts.evaluate:
            return {}, data["fingerprint"]
        errs = np.concatenate([rollout_errors(model, t.states, data["starts"], horizon) for t in data["trajs"]])
        metrics = {("near_split_rmse", horizon): float(np.mean(errs[:, -1])),
                   ("num_params", NA): float(model.num_params())}
        return metrics, data["fingerprint"], {"curves": {"near_split_rmse_by_step": list(np.mean(errs, axis=0))}}

    cells = run_seed_cells(lambda s: prepare_burgers_ksweep(m, s), fit_eval, variants, seed)
    _collect(out, cells, timing)
    for c in cells:
        if c.variant.startswith("Full[K=") and c.error is None and c.metrics:
            out.sweep.append((int(c.variant[7:-1]), seed, f"near_split_rmse@{horizon}",
                              float(c.metrics[("near_split_rmse", horizon)])))
    return out


def descriptor_geometry(m, ds, trajs, seed):
    """Geometry report on a temporally ordered descriptor subsample with regime and gradient labels."""
    dg = m["diagnostics"]
    order = np.lexsort((ds.t_indices, ds.locations, ds.trajectories))
    series_key = ds.trajectories[order] * 100003 + ds.locations[order]
    keys = np.unique(series_key)
    rng = np.random.default_rng(seed)
    chosen, total = [], 0
    for key in rng.permutation(keys):
        members = order[series_key == key]
        chosen.append(members)
        total += len(members)
        if total >= dg["max_points"]:
            break
    idx = np.concatenate(sorted(chosen, key=lambda a: int(a[0])))[:dg["max_points"]]
    M = m["system"]["grid_points"]
    dx = 1.0 / M
    grads = np.array([abs(trajs[ds.trajectories[i]].states[ds.t_indices[i], (ds.locations[i] + 1) % M]
                          - trajs[ds.trajectories[i]].states[ds.t_indices[i], (ds.locations[i] - 1) % M]) / (2 * dx)
                      for i in idx])
    labels = {"regime": ds.regimes[idx], "gradient_quartile": quartile_labels(grads)}
    return geometry_report(ds.thetas[idx], labels, k=dg["purity_k"], num_random_pairs=dg["num_random_pairs"],
                           seed=seed)


def run_seed_burgers_geometry(m, seed, opts):
    out = SeedOutcome(seed)
    t0 = time.perf_counter()
    sc = m["system"]
    trajs = burgers_ensemble(m, seed, sc["n_train_traj"])
    ds = _descriptors(m, trajs, list(range(len(trajs))))
    rep = descriptor_geometry(m, ds, trajs, seed)
    fp = fingerprint(ds.thetas)
    for metric, value in rep.rows():
        out.rows.append(("descriptors", seed, metric, NA, float(value)))
    out.cells.append(("descriptors", seed, "ok", fp, ""))
    out.timing.append(("descriptors", seed, time.perf_counter() - t0))
    return out


RUNNERS = {
    "lorenz96_rollout": run_seed_lorenz96,
    "lorenz96_phase_sweep": run_seed_phase_sweep,
    "burgers_switching": run_seed_burgers_switching,
    "burgers_ksweep": run_seed_burgers_ksweep,
    "burgers_geometry": run_seed_burgers_geometry,
}


def run_seed(kind, manifest_data, seed, opts):
    return RUNNERS[kind](manifest_data, seed, opts)
