"""Command-line interface: ``distillkit {distill,trajectories,evaluate,bench,verify}``.

Exit codes are 0 on success, 1 on a runtime failure and 2 on a usage error. Every command writes
a ``manifest.json`` into its output directory. A ``--config`` JSON document (or a previous
manifest) supplies defaults that explicit flags override.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from distillkit import __version__
from distillkit._utils.encoding import FriendlyJsonSerde
from distillkit.data import RealDataset, load_named, make_blobs, train_test_split
from distillkit.engine.config import PRESETS, DistillConfig, preset
from distillkit.engine.runner import FINAL_ARTIFACT, distill, resolve_arch
from distillkit.errors import ConfigurationError
from distillkit.evaluation.harness import (
    EvalConfig,
    baseline,
    cross_arch,
    write_cross_arch_csv,
    write_performance_csv,
)
from distillkit.evaluation.profiler import profile, write_profile_csv
from distillkit.nnkit.model import ArchDescriptor
from distillkit.nnkit.train import TrainConfig
from distillkit.nnkit.trajectory import TrajectoryStore, record_teachers
from distillkit.param_space.artifact import load_artifact
from distillkit.theory import VERIFIERS, PropDims
from distillkit.types import RunManifest

logger = logging.getLogger("distillkit.cli")

MANIFEST_FILE = "manifest.json"
SMALL_IMAGE = 8
"""Images with a side below this default to an MLP."""

OBJECTIVE_PRESETS = {
    "meta": "dd",
    "krr": "kip",
    "frepo": "frepo",
    "grad-match": "dc",
    "traj-match": "mtt",
    "dm": "dm",
    "cafe": "cafe",
}
"""Preset profiled by ``bench --objective``."""

DATASET_DEFAULTS: Dict[str, Any] = dict(
    dataset="blobs",
    data_dir=None,
    classes=3,
    per_class=100,
    dim=16,
    separation=5.0,
    test_fraction=0.5,
)

_serde = FriendlyJsonSerde()


class UsageError(Exception):
    """Flags that parse but cannot be used together."""


def _add_dataset_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("dataset")
    group.add_argument("--dataset", default=None, help="blobs, mnist or fashion-mnist (default: blobs)")
    group.add_argument("--data-dir", default=None, help="directory holding the IDX files (default: $DISTILLKIT_DATA_DIR)")
    group.add_argument("--classes", type=int, default=None, help="blob classes (default: 3)")
    group.add_argument("--per-class", type=int, default=None, help="blob samples per class (default: 100)")
    group.add_argument("--dim", type=int, default=None, help="blob dimension, a perfect square (default: 16)")
    group.add_argument("--separation", type=float, default=None, help="blob center radius (default: 5.0)")
    group.add_argument(
        "--test-fraction", type=float, default=None, help="held-out share of the blobs (default: 0.5)"
    )


def _add_common_flags(parser: argparse.ArgumentParser, out_required: bool) -> None:
    parser.add_argument("--seed", type=int, default=None, help="root seed (default: 0)")
    parser.add_argument("--config", default=None, help="JSON config or manifest whose values flags override")
    if out_required:
        parser.add_argument("--out", required=True, help="output directory")
    else:
        parser.add_argument("--out", default=".", help="output directory (default: .)")


def _ipc_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from err


def build_parser() -> argparse.ArgumentParser:
    """Parser of every sub-command."""
    parser = argparse.ArgumentParser(prog="distillkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"distillkit {__version__}")
    parser.add_argument("--log-level", default="INFO", help="logging level (default: INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("distill", help="distill a dataset")
    run.add_argument("--preset", choices=sorted(PRESETS), default=None, help="method preset (default: dc)")
    run.add_argument("--ipc", type=int, default=None, help="images per class")
    run.add_argument("--iters", type=int, default=None, help="outer iterations")
    run.add_argument("--arch", default=None, help="architecture id, e.g. convnet-d3-w128-instance")
    run.add_argument("--syn-lr", type=float, default=None, help="synthetic learning rate")
    run.add_argument("--trajectories", default=None, help="trajectory store directory")
    run.add_argument("--eval-every", type=int, default=None, help="intermediate artifact cadence")
    run.add_argument("--checkpoint-every", type=int, default=None, help="checkpoint cadence")
    run.add_argument("--resume", default=None, help="checkpoint file or run directory to continue")
    _add_dataset_flags(run)
    _add_common_flags(run, out_required=True)

    teachers = commands.add_parser("trajectories", help="record teacher trajectories")
    teachers.add_argument("--teachers", type=int, default=None, help="number of teachers (default: 1)")
    teachers.add_argument("--epochs", type=int, default=None, help="training epochs per teacher (default: 2)")
    teachers.add_argument("--lr", type=float, default=None, help="teacher learning rate (default: 0.01)")
    teachers.add_argument("--momentum", type=float, default=None, help="teacher momentum (default: 0)")
    teachers.add_argument("--batch-size", type=int, default=None, help="teacher mini-batch size (default: 256)")
    teachers.add_argument(
        "--record-every", type=int, default=None, help="steps between checkpoints (default: 0, every half epoch)"
    )
    teachers.add_argument("--arch", default=None, help="architecture id")
    _add_dataset_flags(teachers)
    _add_common_flags(teachers, out_required=True)

    evaluate = commands.add_parser("evaluate", help="train on synthetic data, test on real data")
    source = evaluate.add_mutually_exclusive_group()
    source.add_argument("--artifact", default=None, help="synthetic artifact to evaluate")
    source.add_argument("--baseline", choices=("random", "k-center"), default=None, help="selection baseline")
    evaluate.add_argument("--ipc", type=int, default=None, help="images per class of the baseline (default: 1)")
    evaluate.add_argument("--arch", action="append", default=None, help="evaluation architecture id (repeatable)")
    evaluate.add_argument("--seeds", type=int, default=None, help="evaluation models per architecture (default: 1)")
    evaluate.add_argument("--epochs", type=int, default=None, help="training epochs (default: 300)")
    evaluate.add_argument("--augment", action="store_true", default=None, help="train with DSA")
    evaluate.add_argument("--method", default=None, help="method name written to the tables")
    evaluate.add_argument("--jobs", type=int, default=None, help="seeds trained in parallel (default: 1)")
    _add_dataset_flags(evaluate)
    _add_common_flags(evaluate, out_required=False)

    bench = commands.add_parser("bench", help="profile an objective")
    bench.add_argument("--objective", choices=sorted(OBJECTIVE_PRESETS), default=None, help="objective to profile")
    bench.add_argument("--preset", choices=sorted(PRESETS), default=None, help="preset to profile")
    bench.add_argument("--ipc", type=_ipc_list, default=None, help="comma-separated images per class (default: 1)")
    bench.add_argument("--iterations", type=int, default=None, help="timed outer iterations per budget (default: 3)")
    bench.add_argument("--arch", default=None, help="architecture id")
    bench.add_argument("--trajectories", default=None, help="trajectory store directory")
    bench.add_argument("--memory-limit-mb", type=float, default=None, help="treat larger autograd peaks as out of memory")
    _add_dataset_flags(bench)
    _add_common_flags(bench, out_required=False)

    verify = commands.add_parser("verify", help="check the objective identities numerically")
    verify.add_argument("--prop", type=int, choices=sorted(VERIFIERS), default=None, help="proposition number")
    verify.add_argument("--trials", type=int, default=None, help="random instances (default: 1000)")
    verify.add_argument("--tol", type=float, default=None, help="relative tolerance (default per proposition)")
    verify.add_argument("--features", type=int, default=None, help="feature dimension F")
    verify.add_argument("--classes", type=int, default=None, help="classes C")
    verify.add_argument("--real", type=int, default=None, help="real samples N")
    verify.add_argument("--synthetic", type=int, default=None, help="synthetic samples M")
    verify.add_argument("--weights", choices=("zero", "random"), default=None, help="last-layer weights (2 and 3)")
    verify.add_argument("--jobs", type=int, default=None, help="trials checked in parallel (default: 1)")
    _add_common_flags(verify, out_required=False)
    return parser


def read_config(path: Optional[str]) -> Dict[str, Any]:
    """Config document of ``--config``; a manifest contributes its resolved config."""
    if path is None:
        return {}
    doc = _serde.read_document(path)
    return doc["config"] if "command" in doc else doc


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def dataset_settings(args: argparse.Namespace, doc: Dict[str, Any]) -> Dict[str, Any]:
    """Dataset flags over the config document over the defaults."""
    settings = _merge(DATASET_DEFAULTS, doc.get("dataset", {}))
    for key in DATASET_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def load_dataset(settings: Dict[str, Any], seed: int) -> Tuple[RealDataset, RealDataset]:
    """(train, test) splits of the configured dataset."""
    name = settings["dataset"]
    if name == "blobs":
        blobs = make_blobs(settings["classes"], settings["per_class"], settings["dim"], settings["separation"], seed)
        return train_test_split(blobs, settings["test_fraction"], seed)
    data_dir = Path(settings["data_dir"]) if settings["data_dir"] else None
    return load_named(name, "train", data_dir), load_named(name, "test", data_dir)


def default_arch(real: RealDataset, arch_id: Optional[str]) -> ArchDescriptor:
    """Architecture of ``--arch``, or the default for the image size (an MLP for tiny images)."""
    if arch_id:
        return ArchDescriptor.from_id(arch_id, real.image_shape, real.num_classes)
    if min(real.image_shape[1:]) < SMALL_IMAGE:
        return ArchDescriptor("mlp", 2, 64, "none", real.image_shape, real.num_classes)
    return resolve_arch(ArchDescriptor(), real)


def write_manifest(out: Path, command: str, config: Dict[str, Any], artifacts: Dict[str, str], seed: int) -> Path:
    """Write the command's manifest."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command=command, config=config, artifacts=artifacts, version=__version__, seed=seed)
    path = out / MANIFEST_FILE
    _serde.write_document(path, manifest)
    return path


def cmd_distill(args: argparse.Namespace) -> int:
    """Distill a dataset into ``--out``."""
    doc = read_config(args.config)
    settings = dataset_settings(args, doc)
    base = preset(args.preset or doc.get("preset", "dc"))
    cfg_doc = _merge(base.to_document(), doc.get("distill", {}))
    overrides = {
        "ipc": args.ipc,
        "iterations": args.iters,
        "syn_lr": args.syn_lr,
        "trajectory_dir": args.trajectories,
        "eval_every": args.eval_every,
        "checkpoint_every": args.checkpoint_every,
        "seed": args.seed,
    }
    cfg_doc.update({key: value for key, value in overrides.items() if value is not None})
    cfg = DistillConfig.from_document(cfg_doc)
    real, _ = load_dataset(settings, cfg.seed)
    if args.arch or "arch" not in doc.get("distill", {}):
        cfg = cfg._replace(arch=default_arch(real, args.arch))
    out = Path(args.out)
    run = distill(real, cfg, resume=args.resume, run_dir=out)
    artifact = out / FINAL_ARTIFACT
    write_manifest(
        out,
        "distill",
        {"preset": args.preset or doc.get("preset", "dc"), "dataset": settings, "distill": cfg.to_document()},
        {"synthetic": str(artifact), "checkpoint": str(out / "checkpoint.pt")},
        cfg.seed,
    )
    final = run.history[-1][1] if run.history else float("nan")
    print(f"final loss {final:.6g} after {run.iteration} iterations; artifact {artifact}")
    return 0


def resolve(args: argparse.Namespace, doc: Dict[str, Any], key: str, default: Any = None) -> Any:
    """Value of flag ``key`` over the config document over ``default``.

    >>> resolve(argparse.Namespace(lr=None), {"lr": 0.05}, "lr", 0.01)
    0.05
    """
    value = getattr(args, key, None)
    if value is not None:
        return value
    value = doc.get(key)
    return default if value is None else value


def cmd_trajectories(args: argparse.Namespace) -> int:
    """Record teacher trajectories into ``--out``."""
    doc = read_config(args.config)
    teachers = resolve(args, doc, "teachers", 1)
    epochs = resolve(args, doc, "epochs", 2)
    if teachers < 1:
        raise UsageError(f"--teachers must be >= 1, got {teachers}")
    if epochs < 1:
        raise UsageError(f"--epochs must be >= 1, got {epochs}")
    settings = dataset_settings(args, doc)
    seed = resolve(args, doc, "seed", 0)
    real, _ = load_dataset(settings, seed)
    arch = default_arch(real, resolve(args, doc, "arch"))
    config = TrainConfig(
        lr=resolve(args, doc, "lr", 0.01),
        momentum=resolve(args, doc, "momentum", 0.0),
        batch_size=resolve(args, doc, "batch_size", 256),
        seed=seed,
        record_every=resolve(args, doc, "record_every", 0),
    )
    config = config._replace(steps=epochs * config.steps_per_epoch(len(real)))
    store = record_teachers(real.images, real.labels, arch, config, teachers, args.out)
    resolved = {
        "dataset": settings,
        "arch": arch.id,
        "teachers": teachers,
        "epochs": epochs,
        "lr": config.lr,
        "momentum": config.momentum,
        "batch_size": config.batch_size,
        "record_every": config.record_every,
        "seed": seed,
    }
    artifacts = {str(path.name): str(path) for path in store.paths()}
    write_manifest(Path(args.out), "trajectories", resolved, artifacts, seed)
    print(f"recorded {len(store)} trajectories in {store}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Evaluate an artifact or a selection baseline on the held-out split."""
    doc = read_config(args.config)
    if args.artifact or args.baseline:
        artifact, kind = args.artifact, args.baseline
    else:
        artifact, kind = doc.get("artifact"), doc.get("baseline")
    if bool(artifact) == bool(kind):
        raise UsageError("give exactly one of --artifact or --baseline")
    settings = dataset_settings(args, doc)
    seed = resolve(args, doc, "seed", 0)
    real, test = load_dataset(settings, seed)
    archs = [default_arch(test, arch_id) for arch_id in (args.arch or doc.get("archs") or [None])]
    cfg = EvalConfig(epochs=resolve(args, doc, "epochs", 300), seed=seed)
    seeds = resolve(args, doc, "seeds", 1)
    augment = bool(resolve(args, doc, "augment", False))
    jobs = resolve(args, doc, "jobs", 1)
    method = resolve(args, doc, "method", "")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: Dict[str, str] = {}
    if kind:
        method = method or kind
        ipc = resolve(args, doc, "ipc", 1)
        reports = [baseline(real, test, ipc, kind, seeds, arch, augment, cfg, jobs) for arch in archs]
    else:
        synthetic, metadata = load_artifact(artifact)
        method = method or metadata.get("objective", "")
        ipc = int(round(metadata.get("ipc_equivalent", 0)))
        reports = cross_arch(synthetic, test, archs, seeds, augment, cfg, jobs)
        artifacts["input"] = str(artifact)
    performance = write_performance_csv(out / "performance.csv", [(settings["dataset"], ipc, method, reports[0])])
    artifacts["performance"] = str(performance)
    if len(reports) > 1:
        table = write_cross_arch_csv(out / "cross_arch.csv", method, reports[0].arch, reports)
        artifacts["cross_arch"] = str(table)
    resolved = {
        "dataset": settings,
        "artifact": artifact,
        "baseline": kind,
        "ipc": ipc,
        "archs": [arch.id for arch in archs],
        "seeds": seeds,
        "epochs": cfg.epochs,
        "augment": augment,
        "method": method,
        "jobs": jobs,
        "seed": seed,
    }
    write_manifest(out, "evaluate", resolved, artifacts, seed)
    for report in reports:
        print(f"{report.arch}: {report.mean:.2f} ± {report.std:.2f} over {report.seeds} seeds")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    """Profile one objective at several budgets."""
    if args.objective and args.preset:
        raise UsageError("give either --objective or --preset")
    doc = read_config(args.config)
    settings = dataset_settings(args, doc)
    if args.objective:
        name = OBJECTIVE_PRESETS[args.objective]
    else:
        name = resolve(args, doc, "preset", OBJECTIVE_PRESETS["dm"])
    seed = resolve(args, doc, "seed", 0)
    ipcs = resolve(args, doc, "ipc", [1])
    iterations = resolve(args, doc, "iterations", 3)
    trajectories = resolve(args, doc, "trajectories")
    memory_limit_mb = resolve(args, doc, "memory_limit_mb")
    real, _ = load_dataset(settings, seed)
    arch = default_arch(real, resolve(args, doc, "arch"))
    cfg = preset(name)._replace(seed=seed, arch=arch, trajectory_dir=trajectories)
    store = TrajectoryStore(trajectories) if trajectories else None
    rows = profile(real, cfg, ipcs, iterations, store, memory_limit_mb)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = write_profile_csv(out / "profile.csv", rows)
    resolved = {
        "preset": name,
        "dataset": settings,
        "ipc": ipcs,
        "iterations": iterations,
        "arch": arch.id,
        "trajectories": trajectories,
        "memory_limit_mb": memory_limit_mb,
        "seed": seed,
    }
    write_manifest(out, "bench", resolved, {"profile": str(table)}, seed)
    for row in rows:
        print(
            f"{row.objective} ipc={row.ipc}: loop {row.runtime_per_loop_ms:.1f} ms, step {row.runtime_per_step_ms:.1f} ms, "
            f"peak {row.peak_memory_mb:.2f} MB ({row.status})"
        )
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    """Check one proposition; exit 1 if it fails."""
    doc = read_config(args.config)
    prop = resolve(args, doc, "prop")
    if prop not in VERIFIERS:
        raise UsageError(f"--prop must be one of {sorted(VERIFIERS)}, got {prop}")
    seed = resolve(args, doc, "seed", 0)
    defaults = PropDims(features=8, classes=3) if prop == 3 else PropDims()
    dims = PropDims(*(resolve(args, doc, field, getattr(defaults, field)) for field in PropDims._fields))
    options: Dict[str, Any] = dict(
        dims=dims,
        trials=resolve(args, doc, "trials", 1000),
        tol=resolve(args, doc, "tol"),
        seed=seed,
        jobs=resolve(args, doc, "jobs", 1),
    )
    weights = resolve(args, doc, "weights")
    if weights is not None:
        if prop == 1:
            raise UsageError("--weights applies to propositions 2 and 3")
        options["weights"] = weights
    report = VERIFIERS[prop](**options)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"prop{prop}.json"
    _serde.write_document(path, report)
    resolved = {"prop": prop, "weights": weights, **dims._asdict()}
    resolved.update((key, value) for key, value in options.items() if key != "dims")
    write_manifest(out, "verify", resolved, {"report": str(path)}, seed)
    print(report.summary())
    return 0 if report.passed else 1


COMMANDS = {
    "distill": cmd_distill,
    "trajectories": cmd_trajectories,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "verify": cmd_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as err:
        parser.print_usage(sys.stderr)
        print(f"distillkit {args.command}: error: {err}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError, RuntimeError) as err:
        logger.error("%s failed: %s", args.command, err)
        print(f"distillkit {args.command}: {err}", file=sys.stderr)
        return 1
