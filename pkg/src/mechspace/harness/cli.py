"""Command line: ``mechspace <subcommand> [--manifest M] [--out DIR] [--seeds 0,1] [--jobs N]``.

Exit codes: 0 success, 2 validation or usage error, 3 numeric failure,
4 partial completion (some cells failed and were quarantined).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..bank import init_learnable_bank
from ..errors import ConfigurationError, EmptyInputError, IntegrationError, MechspaceError, NumericError, UsageError
from ..io import load_model, write_descriptors, write_trajectory
from ..systems import Lorenz96Config, simulate_lorenz96
from ..training import pairs_to_arrays
from ..windows import extract_history_pairs, fingerprint, split_pairs
from . import experiments as ex
from .manifest import load_manifest
from .run import RunArtifact, _write_csv, default_out_root, run_experiment
from .suites import SUITES, reproduce_paper_suite


EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4


def _seed_list(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--manifest", type=Path, default=d, help="experiment manifest (YAML)")
    parser.add_argument("--out", type=Path, default=d, help="output root (default $MECHSPACE_OUT or ./mechspace_runs)")
    parser.add_argument("--seeds", type=_seed_list, default=d, help="comma-separated seeds overriding the manifest")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes for per-seed cells")


def build_parser():
    parser = argparse.ArgumentParser(prog="mechspace", description="Mechanism-space forecasting experiments.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write ground-truth trajectories per seed")
    sub.add_parser("windows", parents=[common], help="report window and split counts per seed")
    sub.add_parser("extract", parents=[common], help="write Burgers mechanism descriptors per seed")
    p = sub.add_parser("bank", parents=[common], help="build the prototype bank per seed")
    p.add_argument("--K", type=int, default=None, help="bank size overriding the manifest")
    sub.add_parser("train", parents=[common], help="fit every variant and store checkpoints")
    sub.add_parser("eval", parents=[common], help="evaluate stored checkpoints and emit tables")
    sub.add_parser("diagnose", parents=[common], help="mechanism geometry diagnostics")
    p = sub.add_parser("sweep", parents=[common], help="run a prototype-count sweep manifest")
    p.add_argument("--K-grid", type=_seed_list, default=None, help="comma-separated K values")
    p = sub.add_parser("suite", parents=[common], help="run a bundled suite")
    p.add_argument("suite_id", choices=SUITES)
    p = sub.add_parser("report", parents=[common], help="emit tables and PNG figures for a finished run")
    p.add_argument("--artifact", type=Path, default=None, help="artifact directory (default OUT/<manifest id>)")
    p.add_argument("--metric", action="append", default=None, help="restrict tables to these metrics")
    return parser


def _manifest(args):
    if args.manifest is None:
        raise UsageError(f"{args.command} needs --manifest")
    m = load_manifest(args.manifest)
    if args.seeds is not None:
        m = m.with_overrides(seeds=args.seeds)
    return m


def _out_root(args):
    return args.out if args.out is not None else default_out_root()


def _data_dir(args, m):
    d = _out_root(args) / m.output / "data"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _l96_traj(m, seed):
    sc = m["system"]
    return simulate_lorenz96(Lorenz96Config(dim=sc["dim"], forcing=sc["forcing"], dt=sc["dt"], steps=sc["steps"],
                                            burn_in=sc["burn_in"], init_seed=sc["data_seed_offset"] + seed,
                                            init_scale=sc["init_scale"]))


def _burgers_count(m):
    sc = m["system"]
    if m.kind == "burgers_switching":
        return sc["n_train_traj"] + sc["n_val_traj"] + sc["n_test_traj"]
    return sc["n_train_traj"]


def cmd_simulate(args):
    m = _manifest(args)
    d = _data_dir(args, m)
    for seed in m.seeds:
        if m.kind.startswith("lorenz96"):
            write_trajectory(_l96_traj(m, seed), d / f"trajectory_seed{seed}.csv")
        else:
            for i, traj in enumerate(ex.burgers_ensemble(m.data, seed, _burgers_count(m))):
                write_trajectory(traj, d / f"trajectory_seed{seed}_traj{i}.csv")
    print(f"trajectories written to {d}")
    return EXIT_OK


def cmd_windows(args):
    m = _manifest(args)
    rows = []
    for seed in m.seeds:
        if m.kind.startswith("lorenz96"):
            pairs = extract_history_pairs(_l96_traj(m, seed), m["windows"]["h"], m["windows"]["lead"])
            parts = split_pairs(pairs, ex._split_spec(m.data, seed))
            for name, part in zip(("train", "val", "test"), parts):
                X, Y = pairs_to_arrays(part)
                rows.append((seed, name, len(part), fingerprint(X, Y)))
        elif m.kind == "burgers_switching":
            data = ex.prepare_burgers_switching(m.data, seed)
            for name in ("train", "val"):
                rows.append((seed, name, len(data[name][0]), fingerprint(*data[name])))
        elif m.kind == "burgers_ksweep":
            data = ex.prepare_burgers_ksweep(m.data, seed)
            for name in ("train", "val"):
                rows.append((seed, name, len(data[name][0]), fingerprint(*data[name])))
        else:
            raise UsageError("geometry manifests have no forecasting windows; use extract")
    path = _data_dir(args, m) / "windows.csv"
    _write_csv(path, ("seed", "partition", "count", "fingerprint"), rows)
    for r in rows:
        print(",".join(str(v) for v in r))
    return EXIT_OK


def _burgers_descriptors(m, seed):
    trajs = ex.burgers_ensemble(m.data, seed, m["system"]["n_train_traj"])
    return ex._descriptors(m.data, trajs, list(range(len(trajs)))), trajs


def cmd_extract(args):
    m = _manifest(args)
    if m.kind.startswith("lorenz96"):
        raise UsageError("Lorenz96 mechanisms are learned end to end; extract applies to Burgers manifests")
    d = _data_dir(args, m)
    for seed in m.seeds:
        ds, _ = _burgers_descriptors(m, seed)
        write_descriptors(ds, d / f"descriptors_seed{seed}.csv")
        print(f"seed {seed}: {len(ds)} descriptors of dimension {ds.dim}")
    return EXIT_OK


def cmd_bank(args):
    m = _manifest(args)
    if m["bank"] is None:
        raise UsageError("manifest has no bank section")
    d = _data_dir(args, m)
    b = m["bank"]
    K = args.K or b["K"]
    for seed in m.seeds:
        if b["mode"] == "learnable":
            bank = init_learnable_bank(K, b["d_m"], seed=seed, scale=b["scale"], key_dim=b["key_dim"])
        else:
            ds, _ = _burgers_descriptors(m, seed)
            bank = ex.build_frozen_bank(m.data, ds, K, seed)
        path = d / f"bank_seed{seed}_K{K}.txt"
        bank.save(path)
        print(f"seed {seed}: {bank.mode} bank K={bank.K} checksum {bank.checksum()}")
    return EXIT_OK


def _finish(art):
    failed = art.failed_cells
    for c in failed:
        print(f"failed cell {c[0]} seed {c[1]}: {c[4]}", file=sys.stderr)
    print(f"artifact: {art.path}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_train(args):
    return _finish(run_experiment(_manifest(args), _out_root(args), jobs=args.jobs, evaluate=False))


def cmd_eval(args):
    return _finish(run_experiment(_manifest(args), _out_root(args), jobs=args.jobs, reuse_checkpoints=True))


def cmd_diagnose(args):
    m = _manifest(args)
    rows = []
    for seed in m.seeds:
        if m.kind.startswith("burgers"):
            ds, trajs = _burgers_descriptors(m, seed)
            rep = ex.descriptor_geometry(m.data, ds, trajs, seed)
            rows += [("descriptors", seed, metric, value) for metric, value in rep.rows()]
            continue
        ckpt = _out_root(args) / m.output / "checkpoints"
        data = ex.prepare_lorenz96(m.data, seed)
        for variant in ("Full", "NoBank"):
            path = ckpt / f"{variant}_seed{seed}.npz"
            if variant not in m["variants"]:
                continue
            if not path.exists():
                raise UsageError(f"no checkpoint {path}; run train first")
            model = load_model(path, ckpt / "banks")
            metrics, _ = ex.lorenz96_metrics(m.data, model, data, seed)
            rows += [(variant, seed, f"{k[0]}@{k[1]}" if k[1] != ex.NA else k[0], v) for k, v in metrics.items()
                     if k[0] in ("theta_drift", "theta_std", "neighbor_random_ratio")]
    path = _out_root(args) / m.output / "diagnostics.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(path, ("variant", "seed", "metric", "value"), [(a, b, c, float(v)) for a, b, c, v in rows])
    for r in rows:
        print(f"{r[0]},{r[1]},{r[2]},{r[3]:.6g}")
    return EXIT_OK


def cmd_sweep(args):
    m = _manifest(args)
    if m.kind != "burgers_ksweep":
        raise UsageError("sweep needs a burgers_ksweep manifest")
    if args.K_grid:
        m = m.with_overrides(evaluation={"K_grid": args.K_grid})
    art = run_experiment(m, _out_root(args), jobs=args.jobs)
    if art.sweep:
        curve = art.sweep_curve()
        for s, k in zip(curve.seeds, curve.best_K()):
            print(f"seed {s}: best K = {k}")
    return _finish(art)


def cmd_suite(args):
    art = reproduce_paper_suite(args.suite_id, _out_root(args), jobs=args.jobs, seeds=args.seeds)
    return _finish(art)


def cmd_report(args):
    from .report import render_report
    if args.artifact is not None:
        path = args.artifact
    else:
        path = _out_root(args) / _manifest(args).output
    art = RunArtifact.load(path)
    for p in render_report(art, args.metric):
        print(p)
    return EXIT_PARTIAL if art.failed_cells else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "windows": cmd_windows, "extract": cmd_extract, "bank": cmd_bank,
            "train": cmd_train, "eval": cmd_eval, "diagnose": cmd_diagnose, "sweep": cmd_sweep, "suite": cmd_suite,
            "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, UsageError, EmptyInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, IntegrationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MechspaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
