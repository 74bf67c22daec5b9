"""Bundled manifests for the published in-scope experiments."""
from __future__ import annotations

from importlib import resources

import yaml

from ..errors import UsageError
from .manifest import ExperimentManifest, from_dict
from .run import RunArtifact, run_experiment

SUITES = ("l96_sweetspot", "l96_phase_sweep", "l96_reservoir_stress", "burgers_switching", "burgers_ksweep",
          "diagnostics_geometry")
SUITE_SEEDS = (0, 1, 2, 3, 4)


def suite_manifest(suite_id) -> ExperimentManifest:
    if suite_id not in SUITES:
        raise UsageError(f"unknown suite {suite_id!r} (known: {', '.join(SUITES)})")
    text = resources.files(__package__).joinpath("suites", f"{suite_id}.yaml").read_text()
    return from_dict(yaml.safe_load(text))


def reproduce_paper_suite(suite_id, out_root=None, jobs=1, seeds=None) -> RunArtifact:
    """Run a bundled suite; seeds default to 0..4."""
    manifest = suite_manifest(suite_id)
    manifest = manifest.with_overrides(seeds=list(seeds) if seeds is not None else list(SUITE_SEEDS))
    return run_experiment(manifest, out_root, jobs=jobs)
