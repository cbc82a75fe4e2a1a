"""
Experiment configuration: YAML file -> validated frozen dataclasses, plus the config hash.

Grammar (every section and key optional, unknown keys rejected):

    name: drone-adapt
    seed: 7
    data:     {root, domain, train, val, test, length, weak_kind, weak_delay}
    model:    {patch_size, conv_channels, hidden_size, recurrent}
    train:    {n_workers, sigma, gamma, curriculum, chunk_len, n_chunks, reverse_prob, lr_main,
               lr_value_head, weak_kind, weak_delay, use_weak_labels, selection_mode, max_iterations,
               eval_every, patience, supervision, schedule, returns_direction, divergence_guard,
               deterministic, jobs, chi}
    teachers: {profiles: [{name, center_noise_std, ...}], use: [name, ...]}
    eval:     {split, sparse_gt, jobs, svg, fps_warmup}
    output:   {dir}

Overrides use the same keys: --set train.sigma=0.025 (values parsed as YAML).
train.sigma left null takes the recommended_sigma of data.domain.
"""

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import pandas as pd
import yaml

import config
from data.models import SelectionMode, Supervision, WeakSupKind, WorkerSchedule
from data.synthworld import get_preset
from ml.student import ArchitectureSpec
from ml.training import TrainConfig
from tracking.teachers import GROUNDTRUTH_TEACHER, TeacherPool, TeacherProfile

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values in an experiment configuration."""


DEFAULTS = {
    "name": "experiment",
    "seed": 0,
    "data": {
        "root": os.path.join(config.DATA_DIR, "source"),
        "domain": "source",
        "train": 40,
        "val": 8,
        "test": 10,
        "length": config.VIDEO_LENGTH,
        "weak_kind": WeakSupKind.IOU.value,
        "weak_delay": config.WEAK_DELAY,
    },
    "model": {
        "patch_size": config.PATCH_SIZE,
        "conv_channels": list(config.CONV_CHANNELS),
        "hidden_size": config.HIDDEN_SIZE,
        "recurrent": False,
    },
    "train": {
        "n_workers": config.NUM_WORKERS,
        "sigma": None,
        "gamma": config.GAMMA,
        "curriculum": list(config.CURRICULUM_LENGTHS),
        "chunk_len": config.CHUNK_LEN,
        "n_chunks": config.N_CHUNKS,
        "reverse_prob": config.REVERSE_PROB,
        "lr_main": config.LR_MAIN,
        "lr_value_head": config.LR_VALUE_HEAD,
        "weak_kind": WeakSupKind.IOU.value,
        "weak_delay": config.WEAK_DELAY,
        "use_weak_labels": False,
        "selection_mode": SelectionMode.QUALITY_ARGMAX.value,
        "max_iterations": config.MAX_ITERATIONS,
        "eval_every": config.EVAL_EVERY,
        "patience": config.PATIENCE,
        "supervision": Supervision.WEAK.value,
        "schedule": WorkerSchedule.COMBINED.value,
        "returns_direction": "future",
        "divergence_guard": True,
        "deterministic": True,
        "jobs": 1,
        "chi": config.CONTEXT_FACTOR,
    },
    "teachers": {
        "profiles": copy.deepcopy(config.DEFAULT_TEACHER_POOL),
        "use": None,
    },
    "eval": {
        "split": "test",
        "sparse_gt": 1,
        "jobs": 1,
        "svg": False,
        "fps_warmup": config.FPS_WARMUP_FRAMES,
    },
    "output": {
        "dir": os.path.join(config.RUNS_DIR, "experiment"),
    },
}


@dataclass(frozen=True)
class DataOptions:
    root: str
    domain: str
    counts: dict[str, int]
    length: int
    weak_kind: WeakSupKind
    weak_delay: int


@dataclass(frozen=True)
class EvalOptions:
    split: str = "test"
    sparse_gt: int = 1
    jobs: int = 1
    svg: bool = False
    fps_warmup: int = config.FPS_WARMUP_FRAMES


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    data: DataOptions
    arch: ArchitectureSpec
    train: TrainConfig
    eval: EvalOptions
    out_dir: str
    raw: dict = field(repr=False, compare=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """First 12 hex digits of SHA-256 over the canonical JSON of the resolved config."""
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def _merge(base: dict, update: dict, path: str = "") -> dict:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"Unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"Config key '{where}' must be a mapping")
            merged[key] = _merge(base[key], value, f"{where}.")
        else:
            merged[key] = value
    return merged


def parse_override(text: str) -> dict:
    """'section.key=value' -> {'section': {'key': value}}; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"Override '{text}' must look like section.key=value")
    dotted, value = text.split("=", 1)
    keys = dotted.strip().split(".")
    if not all(keys):
        raise ConfigError(f"Override '{text}' has an empty key")
    try:
        parsed = yaml.safe_load(value)
    except yaml.YAMLError as e:
        raise ConfigError(f"Override '{text}': {e}") from e
    out: dict = {keys[-1]: parsed}
    for key in reversed(keys[:-1]):
        out = {key: out}
    return out


def _enum(enum_cls, value, key: str):
    try:
        return enum_cls.parse(value) if hasattr(enum_cls, "parse") else enum_cls(value)
    except ValueError:
        choices = [m.value for m in enum_cls]
        raise ConfigError(f"Invalid {key} '{value}', expected one of {choices}") from None


def _teacher_pool(section: dict, selection_mode: SelectionMode) -> TeacherPool:
    try:
        profiles = [TeacherProfile.from_dict(d) for d in section["profiles"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid teacher profile: {e}") from e
    if all(p.name != GROUNDTRUTH_TEACHER.name for p in profiles):
        profiles.append(GROUNDTRUTH_TEACHER)
    pool = TeacherPool(tuple(profiles), selection_mode)
    use = section["use"]
    if use is None:
        # The oracle joins the pool only when asked for by name.
        return TeacherPool(tuple(p for p in profiles if p.name != GROUNDTRUTH_TEACHER.name), selection_mode)
    try:
        return pool.subset(list(use))
    except KeyError as e:
        raise ConfigError(f"teachers.use: {e.args[0]}") from None


def build_config(raw: dict) -> ExperimentConfig:
    """Validates a fully merged raw config into an ExperimentConfig."""
    d, m, t, e = raw["data"], raw["model"], raw["train"], raw["eval"]
    try:
        domain = get_preset(d["domain"])
        data = DataOptions(
            root=str(d["root"]),
            domain=str(d["domain"]),
            counts={"train": int(d["train"]), "val": int(d["val"]), "test": int(d["test"])},
            length=int(d["length"]),
            weak_kind=_enum(WeakSupKind, d["weak_kind"], "data.weak_kind"),
            weak_delay=int(d["weak_delay"]),
        )
        if min(data.counts.values()) < 0 or data.length < 2 or data.weak_delay < 1:
            raise ConfigError("data: counts must be >= 0, length >= 2 and weak_delay >= 1")
        arch = ArchitectureSpec(
            patch_size=int(m["patch_size"]),
            conv_channels=tuple(int(c) for c in m["conv_channels"]),
            hidden_size=int(m["hidden_size"]),
            recurrent=bool(m["recurrent"]),
        )
        pool = _teacher_pool(raw["teachers"], _enum(SelectionMode, t["selection_mode"], "train.selection_mode"))
        train = TrainConfig(
            n_workers=int(t["n_workers"]),
            sigma=domain.recommended_sigma if t["sigma"] is None else float(t["sigma"]),
            gamma=float(t["gamma"]),
            curriculum=tuple(int(x) for x in t["curriculum"]),
            chunk_len=int(t["chunk_len"]),
            n_chunks=int(t["n_chunks"]),
            reverse_prob=float(t["reverse_prob"]),
            lr_main=float(t["lr_main"]),
            lr_value_head=float(t["lr_value_head"]),
            weak_kind=_enum(WeakSupKind, t["weak_kind"], "train.weak_kind"),
            weak_delay=int(t["weak_delay"]),
            use_weak_labels=bool(t["use_weak_labels"]),
            pool=pool,
            max_iterations=int(t["max_iterations"]),
            eval_every=int(t["eval_every"]),
            patience=int(t["patience"]),
            seed=int(raw["seed"]),
            supervision=_enum(Supervision, t["supervision"], "train.supervision"),
            schedule=_enum(WorkerSchedule, t["schedule"], "train.schedule"),
            returns_direction=str(t["returns_direction"]),
            divergence_guard=bool(t["divergence_guard"]),
            deterministic=bool(t["deterministic"]),
            jobs=int(t["jobs"]),
            chi=float(t["chi"]),
        )
        if train.chi < 1.0:
            raise ConfigError(f"train.chi must be >= 1, got {train.chi}")
        evaluation = EvalOptions(
            split=str(e["split"]),
            sparse_gt=int(e["sparse_gt"]),
            jobs=int(e["jobs"]),
            svg=bool(e["svg"]),
            fps_warmup=int(e["fps_warmup"]),
        )
        if (evaluation.split not in ("train", "val", "test") or evaluation.sparse_gt < 1 or evaluation.jobs < 1
                or evaluation.fps_warmup < 0):
            raise ConfigError("eval: split must be train|val|test, sparse_gt and jobs >= 1, fps_warmup >= 0")
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return ExperimentConfig(str(raw["name"]), int(raw["seed"]), data, arch, train, evaluation,
                            str(raw["output"]["dir"]), raw)


def load_config(path: str | None = None, overrides: list[dict] | None = None) -> ExperimentConfig:
    """
    Loads an experiment config: defaults, then the YAML file, then each override in order.

    Args:
        path: YAML file; None uses the defaults only.
        overrides: Partial configs (from --set or command flags) merged last.

    Returns:
        The validated ExperimentConfig.

    Raises:
        ConfigError: Missing file, YAML syntax error, unknown key or invalid value.
    """
    raw = copy.deepcopy(DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path) as f:
                loaded = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping")
        raw = _merge(raw, loaded)
    for override in overrides or []:
        raw = _merge(raw, override)
    cfg = build_config(raw)
    logger.info(f"Loaded experiment '{cfg.name}' (config_hash={cfg.config_hash}, seed={cfg.seed})")
    return cfg


def artifact_header(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.config_hash} seed={cfg.seed}\n"


def write_artifact_csv(path: str, df: pd.DataFrame, cfg: ExperimentConfig) -> None:
    """Writes a CSV whose first line records the config hash and master seed."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(artifact_header(cfg))
        df.to_csv(f, index=False, float_format="%.10g")
    logger.info(f"Wrote {len(df)} rows to {path}")
