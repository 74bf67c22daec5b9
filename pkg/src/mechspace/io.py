"""Columnar text and checkpoint formats."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bank import PrototypeBank
from .errors import ConfigurationError
from .extract import DescriptorSet, Scaler
from .models import ForecastModel, Standardizer
from .nn import ParamStore
from .systems import Trajectory


def fmt(x):
    """Full-precision text for a float (17 significant digits); non-finite values spelled out."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_trajectory(traj: Trajectory, path):
    d = traj.dim
    cols = ["t"] + [f"x{i}" for i in range(d)] + (["regime"] if traj.regime_labels is not None else [])
    lines = [",".join(cols)]
    for n in range(len(traj)):
        row = [fmt(traj.times[n])] + [fmt(v) for v in traj.states[n]]
        if traj.regime_labels is not None:
            row.append(str(int(traj.regime_labels[n])))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> Trajectory:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if header[0] != "t":
        raise ConfigurationError(f"{path}: not a trajectory file")
    has_regime = header[-1] == "regime"
    rows = [line.split(",") for line in lines[1:] if line]
    times = np.array([float(r[0]) for r in rows])
    stop = -1 if has_regime else None
    states = np.array([[float(v) for v in r[1:stop]] for r in rows])
    labels = np.array([int(r[-1]) for r in rows]) if has_regime else None
    return Trajectory(states, times, labels)


def write_descriptors(ds: DescriptorSet, path):
    cols = ["anchor_loc", "anchor_t", "regime", "residual"] + [f"theta_{i}" for i in range(ds.dim)]
    lines = [f"# scaler_mean={fmt(ds.scaler.mean)} scaler_std={fmt(ds.scaler.std)} lam={fmt(ds.lam)}",
             ",".join(cols + ["trajectory"])]
    for i in range(len(ds)):
        row = [str(int(ds.locations[i])), str(int(ds.t_indices[i])), str(int(ds.regimes[i])), fmt(ds.residuals[i])]
        row += [fmt(v) for v in ds.thetas[i]] + [str(int(ds.trajectories[i]))]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_descriptors(path) -> DescriptorSet:
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=") for item in lines[0].lstrip("# ").split())
    rows = [line.split(",") for line in lines[2:] if line]
    arr = np.array([[float(v) for v in r] for r in rows])
    return DescriptorSet(arr[:, 4:-1], arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2].astype(int),
                         arr[:, 3], arr[:, -1].astype(int),
                         Scaler(float(meta["scaler_mean"]), float(meta["scaler_std"])), float(meta["lam"]))


def save_model(model: ForecastModel, path, bank_dir=None):
    """npz checkpoint: parameter store (or readout), variant tag, hyper and norm records.

    A bank is referenced by checksum and written once into ``bank_dir``.
    """
    arrays = {}
    if model.params is not None:
        arrays.update(model.params.state_arrays())
    if model.readout is not None:
        arrays["readout"] = model.readout
    for key, value in (model.reservoir or {}).items():
        arrays[f"reservoir/{key}"] = value
    meta = {"variant": model.variant, "hyper": model.hyper, "norm": model.norm.to_dict()}
    if model.bank is not None:
        meta["bank"] = model.bank.checksum()
        if bank_dir is not None:
            bank_dir = Path(bank_dir)
            bank_dir.mkdir(parents=True, exist_ok=True)
            target = bank_dir / f"{meta['bank']}.txt"
            if not target.exists():
                model.bank.save(target)
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)


def load_model(path, bank_dir=None) -> ForecastModel:
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(str(arrays.pop("__meta__")))
    bank = None
    if "bank" in meta:
        if bank_dir is None:
            raise ConfigurationError("checkpoint references a bank; bank_dir is required")
        bank = PrototypeBank.load(Path(bank_dir) / f"{meta['bank']}.txt")
        if bank.checksum() != meta["bank"]:
            raise ConfigurationError("bank file does not match the checkpoint's checksum")
    model = ForecastModel(meta["variant"], meta["hyper"], bank=bank, norm=Standardizer.from_dict(meta["norm"]))
    if "__order__" in arrays:
        model.params = ParamStore.from_state_arrays(arrays)
    if "readout" in arrays:
        model.readout = arrays["readout"]
    res = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("reservoir/")}
    model.reservoir = res or None
    return model
