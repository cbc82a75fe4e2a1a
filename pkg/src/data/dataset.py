"""
On-disk dataset layout.

    <root>/manifest.json
    <root>/<split>/<video-id>/000001.pgm ...   one 8-bit frame per file, 1-based
    <root>/<split>/<video-id>/groundtruth.txt  x,y,w,h per frame
    <root>/<split>/<video-id>/weaklabels.txt   t,kind,x y w h per frame with weak supervision
"""

import concurrent.futures
import json
import logging
import os
import shutil

import cv2
import numpy as np
import pandas as pd

import config
from data.models import WeakSupKind
from data.synthworld import DomainSpec, Video, generate_video
from tracking.geometry import BBox

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
GT_COLUMNS = ["x", "y", "w", "h"]


class DatasetError(ValueError):
    """Raised when a dataset on disk is missing, incomplete or malformed."""


def video_seed(master_seed: int, split: str, index: int) -> int:
    """Independent generation seed per (split, index)."""
    seq = np.random.SeedSequence([master_seed, SPLITS.index(split), index])
    return int(seq.generate_state(1)[0])


def _frame_path(video_dir: str, t: int) -> str:
    return os.path.join(video_dir, config.FRAME_NAME_FORMAT.format(t + 1))


def write_video(v: Video, split_dir: str, weak_kind: WeakSupKind = WeakSupKind.IOU,
                weak_delay: int = config.WEAK_DELAY) -> str:
    """Writes frames, groundtruth.txt and weaklabels.txt (every weak_delay-th frame) for one video."""
    video_dir = os.path.join(split_dir, v.id)
    os.makedirs(video_dir, exist_ok=True)
    for t, frame in enumerate(v.frames):
        pixels = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
        if not cv2.imwrite(_frame_path(video_dir, t), pixels):
            raise DatasetError(f"Could not write frame {t} of {v.id} to {video_dir}")

    gt = pd.DataFrame([b.as_array() for b in v.gt], columns=GT_COLUMNS)
    gt.to_csv(os.path.join(video_dir, config.GROUNDTRUTH_FILENAME), header=False, index=False,
              float_format="%.17g")

    defined = [t for t in range(len(v)) if t % weak_delay == 0]
    labels = pd.DataFrame({
        "t": defined,
        "kind": [weak_kind.label] * len(defined),
        "box": [" ".join(f"{c:.17g}" for c in v.gt[t].as_array()) for t in defined],
    })
    labels.to_csv(os.path.join(video_dir, config.WEAKLABELS_FILENAME), header=False, index=False)
    return video_dir


def _read_weak_labels(path: str, n_frames: int) -> tuple[np.ndarray | None, list[WeakSupKind | None] | None]:
    """Per-frame availability mask and label kind from weaklabels.txt; (None, None) when absent."""
    if not os.path.exists(path):
        return None, None
    mask = np.zeros(n_frames, dtype=bool)
    kinds: list[WeakSupKind | None] = [None] * n_frames
    try:
        labels = pd.read_csv(path, header=None, names=["t", "kind", "box"], dtype={"kind": str})
    except pd.errors.EmptyDataError:
        return mask, kinds
    except pd.errors.ParserError as e:
        raise DatasetError(f"Malformed {path}: {e}") from e
    for line, (t, kind) in enumerate(zip(labels["t"], labels["kind"]), start=1):
        try:
            parsed = WeakSupKind.parse(kind)
        except ValueError as e:
            raise DatasetError(f"{path}:{line}: {e}") from e
        if not 0 <= int(t) < n_frames:
            raise DatasetError(f"{path}:{line}: frame index {t} outside 0..{n_frames - 1}")
        mask[int(t)] = True
        kinds[int(t)] = parsed
    return mask, kinds


def read_video(video_dir: str, domain: str = "") -> Video:
    video_id = os.path.basename(os.path.normpath(video_dir))
    gt_path = os.path.join(video_dir, config.GROUNDTRUTH_FILENAME)
    if not os.path.exists(gt_path):
        raise DatasetError(f"Missing {config.GROUNDTRUTH_FILENAME} in {video_dir}")
    try:
        gt_df = pd.read_csv(gt_path, header=None, names=GT_COLUMNS, dtype=np.float64)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise DatasetError(f"Malformed {gt_path}: {e}") from e
    if gt_df.isna().any().any():
        raise DatasetError(f"Malformed {gt_path}: every line needs x,y,w,h")

    frames = []
    for t in range(len(gt_df)):
        path = _frame_path(video_dir, t)
        pixels = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if pixels is None:
            raise DatasetError(f"Missing or unreadable frame {path}")
        frames.append(pixels.astype(np.float64) / 255.0)

    gt = [BBox(*row) for row in gt_df.itertuples(index=False, name=None)]
    mask, kinds = _read_weak_labels(os.path.join(video_dir, config.WEAKLABELS_FILENAME), len(gt))
    return Video(frames, gt, video_id, domain, mask, kinds)


def read_manifest(root: str) -> dict:
    path = os.path.join(root, config.MANIFEST_FILENAME)
    if not os.path.exists(path):
        raise DatasetError(f"No dataset manifest at {path}")
    with open(path) as f:
        return json.load(f)


def load_split(root: str, split: str) -> list[Video]:
    """Loads the videos of one split in manifest order; an absent split is empty."""
    if split not in SPLITS:
        raise DatasetError(f"Unknown split '{split}', expected one of {SPLITS}")
    manifest = read_manifest(root)
    domain = manifest["domain"]["name"]
    ids = manifest["splits"].get(split, [])
    videos = [read_video(os.path.join(root, split, vid), domain) for vid in ids]
    logger.info(f"Loaded {len(videos)} {split} videos from {root}")
    return videos


def write_dataset(root: str, spec: DomainSpec, counts: dict[str, int], seed: int,
                  length: int = config.VIDEO_LENGTH, weak_kind: WeakSupKind = WeakSupKind.IOU,
                  weak_delay: int = config.WEAK_DELAY, force: bool = False,
                  config_hash: str = "", jobs: int = 1) -> dict:
    """
    Generates and writes the train/val/test splits of one domain.

    Args:
        root: Output directory, created when missing.
        spec: Domain to render.
        counts: Number of videos per split name.
        seed: Master seed; each video gets its own derived seed.
        length: Frames per video.
        weak_kind: Kind written to weaklabels.txt.
        weak_delay: Weak labels are written on every weak_delay-th frame.
        force: Replace an existing dataset.
        config_hash: Hash of the generating configuration, stored in the manifest.
        jobs: Videos rendered in parallel.

    Returns:
        The manifest that was written.
    """
    manifest_path = os.path.join(root, config.MANIFEST_FILENAME)
    if os.path.exists(manifest_path) or any(os.path.isdir(os.path.join(root, s)) for s in SPLITS):
        if not force:
            raise FileExistsError(f"Dataset already exists at {root}; use --force to overwrite")
        for split in SPLITS:
            shutil.rmtree(os.path.join(root, split), ignore_errors=True)
    unknown = set(counts) - set(SPLITS)
    if unknown:
        raise DatasetError(f"Unknown split(s) {sorted(unknown)}")
    os.makedirs(root, exist_ok=True)

    manifest = {
        "config_hash": config_hash,
        "domain": spec.to_dict(),
        "length": length,
        "seed": seed,
        "splits": {},
        "video_seeds": {},
        "weak_labels": {"kind": weak_kind.label, "delay": weak_delay},
    }
    for split in SPLITS:
        n = counts.get(split, 0)
        seeds = [video_seed(seed, split, i) for i in range(n)]
        split_dir = os.path.join(root, split)
        os.makedirs(split_dir, exist_ok=True)

        def render(s: int) -> str:
            v = generate_video(spec, s, length)
            write_video(v, split_dir, weak_kind, weak_delay)
            return v.id

        with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
            ids = list(executor.map(render, seeds))
        manifest["splits"][split] = ids
        manifest["video_seeds"][split] = seeds
        logger.info(f"Wrote {n} {split} videos of domain {spec.name} to {split_dir}")

    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest
