"""Manifests, orchestration, tables, figures and the command line."""
from .manifest import ExperimentManifest, from_dict, load_manifest, validate
from .run import RunArtifact, emit_tables, run_experiment
from .suites import SUITES, reproduce_paper_suite, suite_manifest

__all__ = ["ExperimentManifest", "RunArtifact", "SUITES", "emit_tables", "from_dict", "load_manifest",
           "reproduce_paper_suite", "run_experiment", "suite_manifest", "validate"]
