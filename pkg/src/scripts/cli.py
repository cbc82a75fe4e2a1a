"""
Command-line entry point: gen-data, pretrain, adapt, eval and plot.

Every command exits 0 on success; on failure it prints one line
'error=<reason> message=<text>' on stderr and exits with the reason's code.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

import pandas as pd

from data.dataset import DatasetError, load_split, read_manifest, write_dataset
from data.models import FailureReason, Supervision, WorkerSchedule
from data.synthworld import get_preset
from db.database import get_db, init_db
from db.queries import fetch_run_summary, record_eval_run
from evaluation.metrics import (DISTANCE_THRESHOLDS, IOU_THRESHOLDS, NoEvaluatedFramesError, evaluate_run,
                                mean_curves)
from evaluation.ope import OracleTracker, StayTracker, StudentTracker, TeacherTracker, track_videos
from evaluation.plots import MalformedCsvError, plot_curves, plot_training_logs
from ml.student import StudentParams, build_student, load_checkpoint, save_checkpoint
from ml.training import AdaptResult, TrainingDivergedError, adapt, pretrain
from scripts.experiment import ConfigError, ExperimentConfig, load_config, parse_override, write_artifact_csv
from tracking.teachers import GROUNDTRUTH_TEACHER, teacher_seed

logger = logging.getLogger(__name__)

ADAPTED_CHECKPOINT = "adapted.ckpt"
FINAL_CHECKPOINT = "final.ckpt"
TRAINING_LOG = "training_log.csv"

# Checked in order: subclasses before their bases.
FAILURES = [
    (ConfigError, FailureReason.CONFIG_ERROR),
    (NoEvaluatedFramesError, FailureReason.CONFIG_ERROR),
    (MalformedCsvError, FailureReason.MALFORMED_CSV),
    (DatasetError, FailureReason.DATASET_ERROR),
    (TrainingDivergedError, FailureReason.TRAINING_DIVERGED),
    (FileExistsError, FailureReason.OUTPUT_EXISTS),
    (FileNotFoundError, FailureReason.MISSING_INPUT),
]


def _overrides(args: argparse.Namespace, flags: dict[str, str]) -> list[dict]:
    """Config overrides from --set entries, then from the command's own flags when given."""
    overrides = [parse_override(text) for text in (args.set or [])]
    for flag, dotted in flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            section, key = dotted.split(".") if "." in dotted else (None, dotted)
            overrides.append({section: {key: value}} if section else {key: value})
    return overrides


def _config(args: argparse.Namespace, flags: dict[str, str]) -> ExperimentConfig:
    return load_config(args.config, _overrides(args, flags))


def _metadata(cfg: ExperimentConfig, command: str, **extra) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed, "command": command, "name": cfg.name, **extra}


def _require(path: str, what: str) -> None:
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")


# gen-data ------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> None:
    cfg = _config(args, {"domain": "data.domain", "train": "data.train", "val": "data.val",
                         "test": "data.test", "length": "data.length", "weak_kind": "data.weak_kind",
                         "weak_delay": "data.weak_delay", "seed": "seed", "out": "data.root"})
    spec = get_preset(cfg.data.domain)
    write_dataset(cfg.data.root, spec, cfg.data.counts, cfg.seed, cfg.data.length, cfg.data.weak_kind,
                  cfg.data.weak_delay, force=args.force, config_hash=cfg.config_hash, jobs=args.jobs)
    logger.info(f"Dataset for {spec.name} written to {cfg.data.root}")


# pretrain / adapt ------------------------------------------------------------

def _load_splits(root: str) -> tuple[list, list]:
    _require(root, "Dataset")
    read_manifest(root)
    train = load_split(root, "train")
    if not train:
        raise DatasetError(f"Dataset {root} has no train videos")
    return train, load_split(root, "val")


def _write_training_outputs(result: AdaptResult, out_dir: str, cfg: ExperimentConfig, command: str) -> None:
    meta = _metadata(cfg, command, best_iteration=result.best_iteration, best_val_ss=result.best_ss,
                     diverged=result.diverged)
    save_checkpoint(os.path.join(out_dir, ADAPTED_CHECKPOINT), result.params, result.optimizer, meta)
    save_checkpoint(os.path.join(out_dir, FINAL_CHECKPOINT), result.final_params, result.optimizer, meta)
    write_artifact_csv(os.path.join(out_dir, TRAINING_LOG), result.log, cfg)


def cmd_pretrain(args: argparse.Namespace) -> None:
    cfg = _config(args, {"data": "data.root", "seed": "seed", "max_iterations": "train.max_iterations",
                         "jobs": "train.jobs"})
    train, val = _load_splits(cfg.data.root)
    initial = build_student(cfg.arch, cfg.seed)
    result = pretrain(StudentParams.from_net(initial), train, val, cfg.train)

    out_dir = os.path.dirname(os.path.abspath(args.out))
    meta = _metadata(cfg, "pretrain", best_iteration=result.best_iteration, best_val_ss=result.best_ss)
    save_checkpoint(args.out, result.params, result.optimizer, meta)
    log_path = os.path.join(out_dir, os.path.splitext(os.path.basename(args.out))[0] + "_log.csv")
    write_artifact_csv(log_path, result.log, cfg)


def cmd_adapt(args: argparse.Namespace) -> None:
    cfg = _config(args, {"data": "data.root", "seed": "seed", "max_iterations": "train.max_iterations",
                         "jobs": "train.jobs", "supervision": "train.supervision",
                         "weak_delay": "train.weak_delay", "out": "output.dir"})
    if args.rl_only:
        cfg = replace(cfg, train=replace(cfg.train, schedule=WorkerSchedule.RL_ONLY))
    elif args.kd_only:
        cfg = replace(cfg, train=replace(cfg.train, schedule=WorkerSchedule.KD_ONLY))
    if args.pretrained:
        _require(args.pretrained, "Pretrained checkpoint")
    train, val = _load_splits(cfg.data.root)
    if cfg.raw["train"]["sigma"] is None:
        # Exploration follows the recommendation of the dataset's own domain.
        sigma = read_manifest(cfg.data.root)["domain"].get("recommended_sigma", cfg.train.sigma)
        cfg = replace(cfg, train=replace(cfg.train, sigma=float(sigma)))
        logger.info(f"Using the domain's recommended exploration sigma {cfg.train.sigma}")

    for k in range(args.runs):
        run_cfg = replace(cfg, seed=cfg.seed + k, train=replace(cfg.train, seed=cfg.seed + k))
        out_dir = cfg.out_dir if args.runs == 1 else os.path.join(cfg.out_dir, f"run-{k}")
        if args.pretrained:
            initial = load_checkpoint(args.pretrained).params
        else:
            initial = StudentParams.from_net(build_student(cfg.arch, run_cfg.seed))
        logger.info(f"Adaptation run {k + 1}/{args.runs} (seed {run_cfg.seed}) -> {out_dir}")
        result = adapt(initial, train, val, run_cfg.train)
        _write_training_outputs(result, out_dir, run_cfg, "adapt")


# eval ------------------------------------------------------------------------

def _checkpoint_path(path: str, run_index: int, runs: int) -> str:
    if runs > 1:
        path = os.path.join(path, f"run-{run_index}")
    if os.path.isdir(path):
        path = os.path.join(path, ADAPTED_CHECKPOINT)
    _require(path, "Checkpoint")
    return path


def _tracker_factory(name: str, cfg: ExperimentConfig, checkpoint: str | None):
    if name == "oracle":
        return lambda v: OracleTracker(v.gt)
    if name == "stay":
        return lambda v: StayTracker()
    if name == "student":
        if checkpoint is None:
            raise ConfigError("--checkpoint is required to evaluate the student")
        net = load_checkpoint(checkpoint).params.to_net()
        return lambda v: StudentTracker(net, cfg.train.chi)
    if name.startswith("teacher:"):
        teacher_name = name.split(":", 1)[1]
        profiles = {p.name: p for p in cfg.train.pool.teachers}
        profiles.setdefault(GROUNDTRUTH_TEACHER.name, GROUNDTRUTH_TEACHER)
        if teacher_name not in profiles:
            raise ConfigError(f"Unknown teacher '{teacher_name}', available: {sorted(profiles)}")
        profile = profiles[teacher_name]
        return lambda v: TeacherTracker(profile, v, teacher_seed(cfg.seed, profile.name, v.id))
    raise ConfigError(f"Unknown tracker '{name}', expected oracle|stay|student|teacher:<name>")


def evaluate_split(make_tracker, videos: list, stride: int, jobs: int,
                   fps_warmup: int = 0) -> tuple[pd.DataFrame, list]:
    """Per-video metrics rows (video, ss, ps, ps20, fps); FPS only when videos run one at a time."""
    runs = track_videos(make_tracker, videos, jobs)
    metrics = [evaluate_run(run, v.gt, stride, fps_warmup) for run, v in zip(runs, videos)]
    if jobs > 1:
        logger.warning("FPS is only measured with --jobs 1; reporting NaN")
        metrics = [replace(m, fps=float("nan")) for m in metrics]
    rows = pd.DataFrame([{"video": v.id, **m.as_row()} for v, m in zip(videos, metrics)])
    return rows, metrics


def cmd_eval(args: argparse.Namespace) -> None:
    cfg = _config(args, {"data": "data.root", "seed": "seed", "split": "eval.split",
                         "sparse_gt": "eval.sparse_gt", "jobs": "eval.jobs", "out": "output.dir"})
    _require(cfg.data.root, "Dataset")
    videos = load_split(cfg.data.root, cfg.eval.split)
    if not videos:
        raise DatasetError(f"Split '{cfg.eval.split}' of {cfg.data.root} is empty")
    label = args.label or cfg.name
    tracker_dir = args.tracker.replace(":", "-")
    svg = args.svg or cfg.eval.svg

    if args.tracker == "student" and not args.checkpoint:
        raise ConfigError("--checkpoint is required to evaluate the student")

    init_db()
    for k in range(args.runs):
        checkpoint = _checkpoint_path(args.checkpoint, k, args.runs) if args.tracker == "student" else None
        make_tracker = _tracker_factory(args.tracker, cfg, checkpoint)
        rows, metrics = evaluate_split(make_tracker, videos, cfg.eval.sparse_gt, cfg.eval.jobs,
                                       cfg.eval.fps_warmup)

        out_dir = os.path.join(cfg.out_dir, tracker_dir if args.runs == 1 else f"{tracker_dir}/run-{k}")
        write_artifact_csv(os.path.join(out_dir, "results.csv"), rows, cfg)
        summary = rows[["ss", "ps", "ps20", "fps"]].mean().to_frame().T
        summary.insert(0, "n_videos", len(rows))
        summary.insert(0, "tracker", args.tracker)
        write_artifact_csv(os.path.join(out_dir, "summary.csv"), summary, cfg)
        success, precision = mean_curves(metrics)
        success_path = os.path.join(out_dir, "success_curve.csv")
        precision_path = os.path.join(out_dir, "precision_curve.csv")
        write_artifact_csv(success_path, pd.DataFrame({"threshold": IOU_THRESHOLDS, "fraction": success}), cfg)
        write_artifact_csv(precision_path,
                           pd.DataFrame({"threshold": DISTANCE_THRESHOLDS, "fraction": precision}), cfg)
        if svg:
            description = f"config_hash={cfg.config_hash} seed={cfg.seed}"
            plot_curves([success_path], "success", os.path.join(out_dir, "success.svg"), [args.tracker], description)
            plot_curves([precision_path], "precision", os.path.join(out_dir, "precision.svg"),
                        [args.tracker], description)

        with get_db() as db:
            record_eval_run(db, label, k, args.tracker, cfg.data.root, cfg.eval.split, rows,
                            cfg.config_hash, cfg.seed, cfg.eval.sparse_gt)
        logger.info(f"{args.tracker} on {cfg.eval.split} (run {k}): SS={summary['ss'].iloc[0]:.4f} "
                    f"PS={summary['ps'].iloc[0]:.4f} PS@20={summary['ps20'].iloc[0]:.4f}")

    if args.runs > 1:
        with get_db() as db:
            runs = fetch_run_summary(db, label, args.tracker, cfg.eval.sparse_gt)
        runs = runs[runs["run_index"] < args.runs]
        mean = runs.drop(columns="run_index").mean().to_dict()
        table = pd.concat([runs.astype({"run_index": str}),
                           pd.DataFrame([{"run_index": "mean", **mean}])], ignore_index=True)
        write_artifact_csv(os.path.join(cfg.out_dir, tracker_dir, "runs_summary.csv"), table, cfg)
        logger.info(f"Mean over {args.runs} runs: SS={mean['ss']:.4f} PS={mean['ps']:.4f}")


# plot ------------------------------------------------------------------------

def _description(paths: list[str]) -> str:
    headers = []
    for path in paths:
        _require(path, "CSV")
        with open(path) as f:
            first = f.readline().strip()
        if first.startswith("#"):
            headers.append(first.lstrip("# "))
    return "; ".join(headers)


def cmd_plot(args: argparse.Namespace) -> None:
    description = _description(args.inputs)
    if args.labels and len(args.labels) != len(args.inputs):
        raise ConfigError(f"Got {len(args.labels)} labels for {len(args.inputs)} inputs")
    if args.kind == "training":
        plot_training_logs(args.inputs, args.out, args.labels, description)
    else:
        plot_curves(args.inputs, args.kind, args.out, args.labels, description)


# entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weaktrack", description="Weakly-supervised tracker adaptation")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, help="master seed")
        return p

    p = with_config(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    p.add_argument("--domain", help="domain preset")
    p.add_argument("--train", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--length", type=int, help="frames per video")
    p.add_argument("--weak-kind", choices=["iou", "normdist", "dist"])
    p.add_argument("--weak-delay", type=int)
    p.add_argument("--out", help="dataset root")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gen_data)

    p = with_config(sub.add_parser("pretrain", help="pretrain a student on a source dataset"))
    p.add_argument("--data", help="source dataset root")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = with_config(sub.add_parser("adapt", help="adapt a student to a target dataset"))
    p.add_argument("--data", help="target dataset root")
    init = p.add_mutually_exclusive_group(required=True)
    init.add_argument("--pretrained", help="checkpoint to start from")
    init.add_argument("--from-scratch", action="store_true", help="start from random parameters")
    losses = p.add_mutually_exclusive_group()
    losses.add_argument("--rl-only", action="store_true", help="all workers on the actor-critic loss")
    losses.add_argument("--kd-only", action="store_true", help="all workers on distillation")
    p.add_argument("--supervision", choices=[s.value for s in Supervision])
    p.add_argument("--weak-delay", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--runs", type=int, default=1, help="repetitions with seeds seed..seed+N-1")
    p.add_argument("--jobs", type=int, help="worker threads (non-deterministic mode)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_adapt)

    p = with_config(sub.add_parser("eval", help="one-pass evaluation of a tracker"))
    p.add_argument("--data", help="dataset root")
    p.add_argument("--checkpoint", help="student checkpoint, or adapt output directory")
    p.add_argument("--tracker", default="student", help="student | oracle | stay | teacher:<name>")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--sparse-gt", type=int, help="evaluate every k-th frame only")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--jobs", type=int)
    p.add_argument("--svg", action="store_true", help="also write success/precision SVG plots")
    p.add_argument("--label", help="registry label (defaults to the experiment name)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render SVG plots from CSV outputs")
    p.add_argument("--kind", choices=["training", "success", "precision"], required=True)
    p.add_argument("inputs", nargs="+", help="training-log or curve CSVs, overlaid")
    p.add_argument("--labels", nargs="*")
    p.add_argument("--out", required=True, help="SVG path")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "runs", 1) < 1:
        print("error=config_error message=--runs must be >= 1", file=sys.stderr)
        return FailureReason.CONFIG_ERROR.value
    try:
        args.func(args)
    except Exception as e:
        reason = next((r for exc, r in FAILURES if isinstance(e, exc)), FailureReason.UNEXPECTED_ERROR)
        logger.error(f"{args.command} failed: {e}", exc_info=reason is FailureReason.UNEXPECTED_ERROR)
        message = " ".join(str(e).split())
        print(f"error={reason.name.lower()} message={message}", file=sys.stderr)
        return reason.value
    return 0


if __name__ == "__main__":
    sys.exit(main())
