"""Results-registry queries."""
import logging

import numpy as np
import pandas as pd
from sqlalchemy.orm import Session

from .models import EvalRun, VideoResult

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ['run_index', 'ss', 'ps', 'ps20', 'fps']


def _nullable(value) -> float | None:
    return None if value is None or not np.isfinite(value) else float(value)


def record_eval_run(db: Session, label: str, run_index: int, tracker: str, dataset: str, split: str,
                    results: pd.DataFrame, config_hash: str, seed: int, sparse_gt: int = 1) -> EvalRun:
    """
    Stores per-video results of one evaluation and their unweighted mean.

    Args:
        db: The database session.
        label: Experiment name shared by the repetitions.
        run_index: Repetition number within the experiment.
        tracker: Evaluated tracker ('student', 'teacher:<name>', ...).
        dataset: Dataset root the split was loaded from.
        split: Evaluated split.
        results: One row per video with columns video, ss, ps, ps20, fps.
        config_hash: Hash of the experiment configuration.
        seed: Master seed of the run.
        sparse_gt: Stride of the evaluated frames.

    Returns:
        The stored EvalRun.
    """
    if results.empty:
        raise ValueError("Cannot record an evaluation without per-video results")
    existing = (
        db.query(EvalRun)
        .filter_by(label=label, tracker=tracker, sparse_gt=sparse_gt, run_index=run_index)
        .one_or_none()
    )
    if existing is not None:
        logger.info(f"Replacing registry entry {existing!r}")
        db.delete(existing)
        db.flush()

    run = EvalRun(
        label=label, run_index=run_index, tracker=tracker, dataset=dataset, split=split,
        sparse_gt=sparse_gt, config_hash=config_hash, seed=seed,
        ss=float(results['ss'].mean()), ps=float(results['ps'].mean()),
        ps20=float(results['ps20'].mean()), fps=_nullable(results['fps'].mean()),
    )
    run.videos = [
        VideoResult(video=str(row.video), ss=float(row.ss), ps=float(row.ps), ps20=float(row.ps20),
                    fps=_nullable(row.fps))
        for row in results.itertuples(index=False)
    ]
    try:
        db.add(run)
        db.commit()
    except Exception as e:
        db.rollback()
        logging.error(f"Error recording evaluation run {label}/{run_index}: {e}", exc_info=True)
        raise
    logger.info(f"Recorded {run!r} with {len(run.videos)} videos")
    return run


def fetch_run_summary(db: Session, label: str, tracker: str, sparse_gt: int = 1) -> pd.DataFrame:
    """
    Aggregate metrics of every repetition of an experiment.

    Returns:
        DataFrame with one row per run index (columns run_index, ss, ps, ps20, fps), sorted by
        run index. Returns an empty DataFrame in case of errors or no data.
    """
    try:
        query = (
            db.query(EvalRun.run_index, EvalRun.ss, EvalRun.ps, EvalRun.ps20, EvalRun.fps)
            .filter(EvalRun.label == label, EvalRun.tracker == tracker, EvalRun.sparse_gt == sparse_gt)
            .order_by(EvalRun.run_index)
        )
        df = pd.read_sql(query.statement, db.bind)
        if df.empty:
            logging.warning(f"No registry entries for {label} / {tracker}")
        return df
    except Exception as e:
        logging.error(f"Error fetching run summary for {label}: {e}", exc_info=True)
        return pd.DataFrame(columns=SUMMARY_COLUMNS)


def fetch_video_results(db: Session, run_id: int) -> pd.DataFrame:
    query = (
        db.query(VideoResult.video, VideoResult.ss, VideoResult.ps, VideoResult.ps20, VideoResult.fps)
        .filter(VideoResult.run_id == run_id)
        .order_by(VideoResult.id)
    )
    return pd.read_sql(query.statement, db.bind)
