"""Experiment manifests: a nested key-value schema with strict validation.

Manifests are YAML mappings. Every key must appear in the schema below;
unknown keys, wrong types and cross-field inconsistencies raise
ValidationError naming the dotted field path before any compute starts.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from ..errors import ValidationError
from ..models import GRADIENT_VARIANTS, VARIANTS

KINDS = ("lorenz96_rollout", "lorenz96_phase_sweep", "burgers_switching", "burgers_ksweep", "burgers_geometry")
LOCAL_FIELD_VARIANTS = ("Direct", "NoBank", "Full")

# field -> (type, default); a nested dict is a sub-schema; REQUIRED marks no default
REQUIRED = object()
INT, FLOAT, BOOL, STR = "int", "float", "bool", "str"
INT_LIST, FLOAT_LIST, ANY_MAP = "int_list", "float_list", "map"

LORENZ96_SYSTEM = {
    "name": (STR, REQUIRED),
    "dim": (INT, 16),
    "forcing": (FLOAT, 8.0),
    "dt": (FLOAT, 0.05),
    "steps": (INT, 4000),
    "burn_in": (INT, 500),
    "init_scale": (FLOAT, 0.01),
    "data_seed_offset": (INT, 0),
}

BURGERS_SYSTEM = {
    "name": (STR, REQUIRED),
    "grid_points": (INT, 64),
    "dt": (FLOAT, 5e-3),
    "steps": (INT, 100),
    "substeps": (INT, 5),
    "viscosity": (FLOAT, 0.05),
    "switch_factor": (FLOAT, 5.0),
    "switch_step": (INT, None),
    "init_kind": (STR, "random_fourier"),
    "init_modes": (INT, 4),
    "init_amplitude": (FLOAT, 1.0),
    "n_train_traj": (INT, 10),
    "n_val_traj": (INT, 2),
    "n_test_traj": (INT, 4),
    "data_seed_offset": (INT, 0),
}

SCHEMA = {
    "id": (STR, REQUIRED),
    "kind": (STR, REQUIRED),
    "seeds": (INT_LIST, REQUIRED),
    "output": (STR, None),
    "system": (ANY_MAP, REQUIRED),  # validated against the system-specific schema
    "windows": ({
        "h": (INT, 4),
        "lead": (INT, 1),
        "time_depth": (INT, 2),
        "spatial_width": (INT, 5),
        "train_spatial_stride": (INT, 2),
        "train_time_stride": (INT, 2),
        "desc_spatial_stride": (INT, 2),
        "desc_time_stride": (INT, 3),
    }, {}),
    "split": ({
        "train_fraction": (FLOAT, 0.7),
        "val_fraction": (FLOAT, 0.1),
        "test_fraction": (FLOAT, 0.2),
        "split_mode": (STR, "temporal_contiguous"),
    }, {}),
    "variants": (ANY_MAP, REQUIRED),
    "bank": ({
        "mode": (STR, REQUIRED),
        "K": (INT, 64),
        "d_m": (INT, 16),
        "key_dim": (INT, 16),
        "scale": (FLOAT, 1.0),
        "neighborhood_size": (INT, 25),
        "lam": (FLOAT, 1e-3),
        "max_descriptors": (INT, 4096),
        "max_iters": (INT, 100),
    }, None),
    "train": ({
        "epochs": (INT, 200),
        "batch_size": (INT, 128),
        "lr": (FLOAT, 1e-3),
        "early_stop_patience": (INT, 20),
        "gradient_clip": (FLOAT, 5.0),
    }, {}),
    "evaluation": ({
        "horizons": (INT_LIST, [1, 4, 16]),
        "n_starts": (INT, 200),
        "drift_horizon": (INT, 16),
        "switch_window": (INT, 10),
        "near_split_horizon": (INT, 20),
        "near_split_starts": (INT, 4),
        "K_grid": (INT_LIST, [32, 64, 128, 256, 512, 1024, 2048]),
        "phase_horizon": (INT, 4),
        "comparisons": (ANY_MAP, None),
    }, {}),
    "diagnostics": ({
        "geometry": (BOOL, True),
        "drift": (BOOL, True),
        "num_random_pairs": (INT, 10000),
        "purity_k": (INT, 10),
        "max_points": (INT, 2000),
    }, {}),
    "scan": ("scan_list", None),
}

SCAN_ENTRY = {"label": (STR, REQUIRED), "group": (STR, REQUIRED), "forcing": (FLOAT, None), "dim": (INT, None)}


def _check_type(path, kind, value):
    if kind == INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(path, f"expected an integer, got {value!r}")
        return value
    if kind == FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind == BOOL:
        if not isinstance(value, bool):
            raise ValidationError(path, f"expected true/false, got {value!r}")
        return value
    if kind == STR:
        if not isinstance(value, str):
            raise ValidationError(path, f"expected a string, got {value!r}")
        return value
    if kind == INT_LIST:
        if not isinstance(value, list) or not value:
            raise ValidationError(path, "expected a nonempty list of integers")
        return [_check_type(f"{path}[{i}]", INT, v) for i, v in enumerate(value)]
    if kind == ANY_MAP:
        if not isinstance(value, dict):
            raise ValidationError(path, "expected a mapping")
        return copy.deepcopy(value)
    raise AssertionError(kind)


def _apply_schema(data, schema, path):
    if not isinstance(data, dict):
        raise ValidationError(path or "<root>", "expected a mapping")
    unknown = sorted(set(data) - set(schema))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ValidationError(where, f"unknown key (allowed: {', '.join(sorted(schema))})")
    out = {}
    for key, (kind, default) in schema.items():
        where = f"{path}.{key}" if path else key
        if key not in data or data[key] is None:
            if default is REQUIRED:
                raise ValidationError(where, "required field is missing")
            if isinstance(kind, dict) and default is not None:
                out[key] = _apply_schema(default, kind, where)
            else:
                out[key] = copy.deepcopy(default)
            continue
        value = data[key]
        if isinstance(kind, dict):
            out[key] = _apply_schema(value, kind, where)
        elif kind == "scan_list":
            if not isinstance(value, list) or not value:
                raise ValidationError(where, "expected a nonempty list of scan entries")
            out[key] = [_apply_schema(v, SCAN_ENTRY, f"{where}[{i}]") for i, v in enumerate(value)]
        else:
            out[key] = _check_type(where, kind, value)
    return out


def validate(raw: dict) -> dict:
    """Validated, default-filled copy of a raw manifest mapping."""
    m = _apply_schema(raw, SCHEMA, "")
    if m["kind"] not in KINDS:
        raise ValidationError("kind", f"unknown kind {m['kind']!r} (known: {', '.join(KINDS)})")
    system_name = m["system"].get("name")
    system_schema = {"lorenz96": LORENZ96_SYSTEM, "burgers": BURGERS_SYSTEM}.get(system_name)
    if system_schema is None:
        raise ValidationError("system.name", f"unknown system {system_name!r} (known: burgers, lorenz96)")
    m["system"] = _apply_schema(m["system"], system_schema, "system")
    expected = "lorenz96" if m["kind"].startswith("lorenz96") else "burgers"
    if system_name != expected:
        raise ValidationError("system.name", f"kind {m['kind']} needs system {expected}")
    if len(set(m["seeds"])) != len(m["seeds"]):
        raise ValidationError("seeds", "duplicate seeds")
    variants = m["variants"]
    for name, hyper in variants.items():
        if name not in VARIANTS:
            raise ValidationError(f"variants.{name}", f"unknown variant (known: {', '.join(VARIANTS)})")
        if hyper is not None and not isinstance(hyper, dict):
            raise ValidationError(f"variants.{name}", "hyper overrides must be a mapping")
        variants[name] = dict(hyper or {})
        if expected == "burgers" and name not in LOCAL_FIELD_VARIANTS:
            raise ValidationError(f"variants.{name}", "Burgers experiments support Direct, NoBank and Full only")
    if not variants and m["kind"] != "burgers_geometry":
        raise ValidationError("variants", "at least one variant is required")
    if "Full" in variants or m["kind"] == "burgers_ksweep":
        if m["bank"] is None:
            raise ValidationError("bank", "required when Full is listed")
        mode = m["bank"]["mode"]
        allowed = ("learnable",) if expected == "lorenz96" else ("frozen_cluster", "frozen_selected", "frozen_buffer")
        if mode not in allowed:
            raise ValidationError("bank.mode", f"{mode!r} not usable here (allowed: {', '.join(allowed)})")
    if m["kind"] == "burgers_ksweep" and "Full" not in variants:
        raise ValidationError("variants.Full", "the K sweep trains Full models")
    if m["kind"] == "lorenz96_phase_sweep":
        if m["scan"] is None:
            raise ValidationError("scan", "required for a phase sweep")
        if not {"Direct", "Full"} <= set(variants):
            raise ValidationError("variants", "a phase sweep compares Direct and Full")
    elif m["scan"] is not None:
        raise ValidationError("scan", "only valid for lorenz96_phase_sweep")
    sp = m["split"]
    total = sp["train_fraction"] + sp["val_fraction"] + sp["test_fraction"]
    if abs(total - 1.0) > 1e-9:
        raise ValidationError("split", f"fractions sum to {total!r}, expected 1")
    if sp["split_mode"] not in ("temporal_contiguous", "shuffled"):
        raise ValidationError("split.split_mode", f"unknown mode {sp['split_mode']!r}")
    if any(h < 1 for h in m["evaluation"]["horizons"]):
        raise ValidationError("evaluation.horizons", "horizons must be >= 1")
    grid = m["evaluation"]["K_grid"]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("evaluation.K_grid", "must be strictly increasing")
    comps = m["evaluation"]["comparisons"]
    if comps is not None:
        for name, pair in comps.items():
            if not (isinstance(pair, list) and len(pair) == 2 and all(p in variants for p in pair)):
                raise ValidationError(f"evaluation.comparisons.{name}", "expected [variant_a, variant_b] of listed variants")
    for name in variants:
        if name in GRADIENT_VARIANTS and m["train"]["epochs"] < 0:
            raise ValidationError("train.epochs", "must be >= 0")
    return m


@dataclass
class ExperimentManifest:
    data: dict

    @property
    def id(self):
        return self.data["id"]

    @property
    def kind(self):
        return self.data["kind"]

    @property
    def seeds(self):
        return list(self.data["seeds"])

    @property
    def output(self):
        return self.data["output"] or self.data["id"]

    def __getitem__(self, key):
        return self.data[key]

    def with_overrides(self, seeds=None, **sections):
        raw = copy.deepcopy(self.data)
        if seeds is not None:
            raw["seeds"] = list(seeds)
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(raw.get(key), dict):
                raw[key].update(value)
            else:
                raw[key] = value
        return ExperimentManifest(validate(raw))

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)


def from_dict(raw) -> ExperimentManifest:
    return ExperimentManifest(validate(raw))


def load_manifest(path) -> ExperimentManifest:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ValidationError("<file>", f"{path}: not valid YAML ({exc})") from None
    except OSError as exc:
        raise ValidationError("<file>", f"cannot read {path}: {exc.strerror}") from None
    return from_dict(raw)
