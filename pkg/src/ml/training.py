"""Orchestrates adaptation: worker interactions, gradient submission, serial updates and validation."""

import concurrent.futures
import logging
import queue
import threading
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import torch

import config
from data.models import SelectionMode, Supervision, WeakSupKind, WorkerMode, WorkerSchedule
from data.synthworld import Video, chunk_sequences, maybe_reverse
from evaluation.metrics import evaluate_run
from evaluation.ope import StudentTracker, track_videos
from ml.rlcore import (InteractionRecord, NonFiniteDensityError, WeakSupFn, distill_loss, distill_mask,
                       masked_action_gap, policy_loss, reward, value_loss)
from ml.student import (Memory, NonFiniteGradientError, NonFiniteLossError, StudentNet, StudentParams,
                        adam_step, forward, make_optimizer, optimizer_step_count, replay, sample_action,
                        restore_optimizer, value_and_gradient)
from tracking.geometry import Action, apply_action, crop_state, invert_action
from tracking.teachers import (GROUNDTRUTH_TEACHER, TeacherCache, TeacherPool, TeacherProfile,
                               WeakSupervisionUndefinedError, default_pool, run_teacher, select_teacher,
                               teacher_seed)

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["iteration", "loss_rl", "loss_kd", "val_ss", "val_ps", "t_max", "teacher_chosen",
               "worker", "mode", "kd_gap"]
_POLL_S = 0.05


class TrainingDivergedError(RuntimeError):
    """Raised by the divergence guard when a loss, gradient or parameter becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    n_workers: int = config.NUM_WORKERS
    sigma: float = config.SIGMA
    gamma: float = config.GAMMA
    curriculum: tuple[int, ...] = config.CURRICULUM_LENGTHS
    chunk_len: int = config.CHUNK_LEN
    n_chunks: int = config.N_CHUNKS
    reverse_prob: float = config.REVERSE_PROB
    lr_main: float = config.LR_MAIN
    lr_value_head: float = config.LR_VALUE_HEAD
    weak_kind: WeakSupKind = WeakSupKind.IOU
    weak_delay: int = config.WEAK_DELAY
    use_weak_labels: bool = False
    pool: TeacherPool = field(default_factory=default_pool)
    max_iterations: int = config.MAX_ITERATIONS
    eval_every: int = config.EVAL_EVERY
    patience: int = config.PATIENCE
    seed: int = 0
    supervision: Supervision = Supervision.WEAK
    schedule: WorkerSchedule = WorkerSchedule.COMBINED
    returns_direction: str = "future"
    divergence_guard: bool = True
    deterministic: bool = True
    jobs: int = 1
    chi: float = config.CONTEXT_FACTOR

    def __post_init__(self):
        if self.n_workers < 2 or self.n_workers % 2:
            raise ValueError(f"n_workers must be even and >= 2, got {self.n_workers}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not self.curriculum or min(self.curriculum) < 1 or list(self.curriculum) != sorted(self.curriculum):
            raise ValueError(f"curriculum must be a non-empty non-decreasing list of positive lengths, got {self.curriculum}")
        if self.chunk_len < 2 or self.n_chunks < 1:
            raise ValueError("chunk_len must be >= 2 and n_chunks >= 1")
        if not 0.0 <= self.reverse_prob <= 1.0:
            raise ValueError(f"reverse_prob must be in [0, 1], got {self.reverse_prob}")
        if self.lr_main < 0 or self.lr_value_head < 0:
            raise ValueError("Learning rates must be >= 0")
        if self.weak_delay < 1:
            raise ValueError(f"weak_delay must be >= 1, got {self.weak_delay}")
        if self.max_iterations < 0 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("max_iterations must be >= 0, eval_every and patience >= 1")
        if self.returns_direction not in ("future", "past"):
            raise ValueError(f"returns_direction must be 'future' or 'past', got {self.returns_direction}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")

    @property
    def weak_sup(self) -> WeakSupFn:
        if self.supervision is Supervision.GT:
            return WeakSupFn(WeakSupKind.IOU, 1, use_labels=False)
        return WeakSupFn(self.weak_kind, self.weak_delay, self.use_weak_labels)

    @property
    def teacher_pool(self) -> TeacherPool:
        if self.supervision is Supervision.GT:
            return TeacherPool((GROUNDTRUTH_TEACHER,), self.pool.selection_mode)
        return self.pool

    def worker_mode(self, worker: int) -> WorkerMode:
        if self.schedule is WorkerSchedule.RL_ONLY:
            return WorkerMode.RL
        if self.schedule is WorkerSchedule.KD_ONLY:
            return WorkerMode.KD
        return WorkerMode.RL if worker % 2 == 0 else WorkerMode.KD

    def to_dict(self) -> dict:
        return {
            "n_workers": self.n_workers, "sigma": self.sigma, "gamma": self.gamma,
            "curriculum": list(self.curriculum), "chunk_len": self.chunk_len, "n_chunks": self.n_chunks,
            "reverse_prob": self.reverse_prob, "lr_main": self.lr_main, "lr_value_head": self.lr_value_head,
            "weak_kind": self.weak_kind.value, "weak_delay": self.weak_delay,
            "use_weak_labels": self.use_weak_labels,
            "teachers": [t.to_dict() for t in self.pool.teachers],
            "selection_mode": self.pool.selection_mode.value,
            "max_iterations": self.max_iterations, "eval_every": self.eval_every, "patience": self.patience,
            "seed": self.seed, "supervision": self.supervision.value, "schedule": self.schedule.value,
            "returns_direction": self.returns_direction, "divergence_guard": self.divergence_guard,
            "deterministic": self.deterministic, "jobs": self.jobs, "chi": self.chi,
        }


def curriculum_length(iteration: int, cfg: TrainConfig) -> int:
    """Interaction length t_max: steps through cfg.curriculum in equal parts of max_iterations, capped at chunk_len."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    stages = len(cfg.curriculum)
    stage = min(iteration * stages // max(cfg.max_iterations, 1), stages - 1)
    return min(cfg.curriculum[stage], cfg.chunk_len)


def run_interaction(net: StudentNet, chunk: Video, mode: WorkerMode, teacher: TeacherProfile,
                    cfg: TrainConfig, rng: np.random.Generator, t_max: int | None = None,
                    teacher_boxes=None) -> InteractionRecord:
    """
    Lets the student track a chunk from b_0 = g_0 and records everything the losses need.

    Args:
        net: Student network holding the worker's parameter snapshot.
        chunk: Video chunk to interact with.
        mode: RL samples actions from N(mu, sigma); KD acts with mu.
        teacher: Teacher whose predictions give the distillation targets.
        cfg: Training configuration (weak supervision, sigma, context factor).
        rng: The worker's random stream.
        t_max: Steps to run; defaults to the whole chunk. Steps beyond the last frame are not run.
        teacher_boxes: Precomputed teacher predictions on the chunk.

    Returns:
        InteractionRecord with min(t_max, len(chunk) - 1) steps.
    """
    t_max = len(chunk) - 1 if t_max is None else t_max
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    if len(chunk) < t_max:
        raise ValueError(f"Chunk {chunk.id} has {len(chunk)} frames, shorter than t_max={t_max}")
    steps = min(t_max, len(chunk) - 1)
    w = cfg.weak_sup
    if teacher_boxes is None:
        teacher_boxes = run_teacher(teacher, chunk, teacher_seed(cfg.seed, teacher.name, chunk.id))

    rows = {k: [] for k in ("prev", "cur", "raw", "act", "mu", "v", "r", "ws", "box",
                            "tbox", "tact", "tr", "m")}
    box = chunk.gt[0]
    memory = Memory.initial(net.arch)
    for t in range(1, steps + 1):
        state = crop_state(chunk.frames[t - 1], chunk.frames[t], box, cfg.chi, net.arch.patch_size)
        out = forward(net, state, memory)
        if mode is WorkerMode.RL:
            raw, action = sample_action(out.mu, cfg.sigma, rng)
        else:
            raw = out.mu.copy()
            action = Action.from_array(raw)
        new_box = apply_action(box, action)

        score = w.score(new_box, chunk, t)
        r = reward(score)
        t_box = teacher_boxes[t]
        r_teacher = reward(w.score(t_box, chunk, t))

        rows["prev"].append(state.patch_prev)
        rows["cur"].append(state.patch_cur)
        rows["raw"].append(raw)
        rows["act"].append(action.as_array())
        rows["mu"].append(out.mu)
        rows["v"].append(out.value)
        rows["r"].append(r)
        rows["ws"].append(np.nan if score is None else score)
        rows["box"].append(new_box.as_array())
        rows["tbox"].append(t_box.as_array())
        rows["tact"].append(invert_action(box, t_box).as_array())
        rows["tr"].append(r_teacher)
        rows["m"].append(float(distill_mask(r_teacher, r)))

        box, memory = new_box, out.memory

    return InteractionRecord(
        video_id=chunk.id, mode=mode, teacher=teacher.name,
        patches_prev=np.asarray(rows["prev"]), patches_cur=np.asarray(rows["cur"]),
        raw_actions=np.asarray(rows["raw"]), actions=np.asarray(rows["act"]),
        mu=np.asarray(rows["mu"]), values=np.asarray(rows["v"], dtype=np.float64),
        rewards=np.asarray(rows["r"], dtype=np.float64), weak_scores=np.asarray(rows["ws"], dtype=np.float64),
        boxes=np.asarray(rows["box"]), teacher_boxes=np.asarray(rows["tbox"]),
        teacher_actions=np.asarray(rows["tact"]), teacher_rewards=np.asarray(rows["tr"], dtype=np.float64),
        masks=np.asarray(rows["m"], dtype=np.float64),
    )


def worker_loss(net: StudentNet, rec: InteractionRecord, cfg: TrainConfig) -> torch.Tensor:
    """L_RL = policy + value loss for RL records, L_KD for KD records; recomputed with gradients."""
    mu, values = replay(net, rec.patches_prev, rec.patches_cur)
    if rec.mode is WorkerMode.RL:
        return (policy_loss(mu, values, rec, cfg.sigma, cfg.gamma)
                + value_loss(values, rec, cfg.gamma, cfg.returns_direction))
    return distill_loss(mu, rec)


def holdout_validation(train: list[Video]) -> tuple[list[Video], list[Video]]:
    """Splits off the last 20% (at least one) of the train videos as validation."""
    n_val = max(1, int(round(len(train) * config.VALIDATION_HOLDOUT_FRACTION)))
    if len(train) <= n_val:
        raise ValueError(f"Need at least {n_val + 1} train videos to hold out validation, got {len(train)}")
    return train[:-n_val], train[-n_val:]


def validate(params: StudentParams, val_videos: list[Video], cfg: TrainConfig) -> tuple[float, float]:
    """Mean dense success and precision scores of the deterministic student on the validation split."""
    net = params.to_net()
    runs = track_videos(lambda v: StudentTracker(net, cfg.chi), val_videos, cfg.jobs)
    metrics = [evaluate_run(run, v.gt) for run, v in zip(runs, val_videos)]
    return (float(np.mean([m.success_score for m in metrics])),
            float(np.mean([m.precision_score for m in metrics])))


@dataclass
class Submission:
    worker: int
    mode: WorkerMode
    teacher: str
    t_max: int
    loss: float
    grad: torch.Tensor | None
    kd_gap: float
    error: Exception | None = None
    applied: threading.Event = field(default_factory=threading.Event)


@dataclass
class TrainState:
    """Canonical parameters and optimizer, owned by the coordinator."""
    net: StudentNet
    optimizer: torch.optim.Optimizer
    worker_rngs: list[np.random.Generator]
    iteration: int = 0
    best_params: StudentParams | None = None
    best_ss: float = -np.inf
    best_iteration: int = 0
    evals_since_best: int = 0
    diverged: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    def snapshot(self) -> tuple[StudentParams, int]:
        with self.lock:
            return StudentParams.from_net(self.net), self.iteration


@dataclass
class AdaptResult:
    params: StudentParams  # best validation
    final_params: StudentParams
    optimizer: torch.optim.Optimizer
    log: pd.DataFrame
    best_iteration: int
    best_ss: float
    diverged: bool


class _Workspace:
    """Training chunks and teacher predictions shared read-only by the workers."""

    def __init__(self, train_videos: list[Video], cfg: TrainConfig):
        self.cfg = cfg
        self.cache = TeacherCache()
        self.chunks: list[list[Video]] = []
        for i, v in enumerate(train_videos):
            chunk_len = min(cfg.chunk_len, len(v))
            if chunk_len < cfg.chunk_len:
                logger.warning(f"Video {v.id} has only {len(v)} frames; chunking at {chunk_len}")
            seed = int(np.random.SeedSequence([cfg.seed, 0xC4, i]).generate_state(1)[0])
            self.chunks.append(chunk_sequences(v, chunk_len, cfg.n_chunks, seed))

    def draw_chunk(self, rng: np.random.Generator) -> Video:
        chunks = self.chunks[int(rng.integers(len(self.chunks)))]
        chunk = chunks[int(rng.integers(len(chunks)))]
        return maybe_reverse(chunk, self.cfg.reverse_prob, int(rng.integers(2**31)))

    def choose_teacher(self, chunk: Video, rng: np.random.Generator) -> TeacherProfile:
        pool = self.cfg.teacher_pool
        selection_seed = int(rng.integers(2**31))
        try:
            return select_teacher(pool, chunk, self.cfg.weak_sup, selection_seed, self.cache, self.cfg.seed)
        except WeakSupervisionUndefinedError:
            logger.debug(f"No weak labels on {chunk.id}; selecting a teacher at random")
            return select_teacher(replace(pool, selection_mode=SelectionMode.RANDOM), chunk,
                                  self.cfg.weak_sup, selection_seed)

    def teacher_boxes(self, teacher: TeacherProfile, chunk: Video):
        return self.cache.predictions(teacher, chunk, teacher_seed(self.cfg.seed, teacher.name, chunk.id))


def _work(worker: int, net: StudentNet, params: StudentParams, iteration: int,
          workspace: _Workspace, rng: np.random.Generator) -> Submission:
    """One worker interaction on a parameter snapshot; touches no shared mutable state."""
    cfg = workspace.cfg
    mode = cfg.worker_mode(worker)
    t_max = curriculum_length(iteration, cfg)
    params.load_into(net)
    chunk = workspace.draw_chunk(rng)
    teacher = workspace.choose_teacher(chunk, rng)
    try:
        rec = run_interaction(net, chunk, mode, teacher, cfg, rng, t_max, workspace.teacher_boxes(teacher, chunk))
        loss, grad = value_and_gradient(net, lambda n: worker_loss(n, rec, cfg))
    except (NonFiniteLossError, NonFiniteDensityError) as e:
        return Submission(worker, mode, teacher.name, t_max, float("nan"), None, float("nan"), error=e)
    kd_gap = masked_action_gap(rec) if mode is WorkerMode.KD else float("nan")
    logger.debug(f"Worker {worker} ({mode.value}) on {chunk.id} with {teacher.name}: loss={loss:.5g}")
    return Submission(worker, mode, teacher.name, t_max, loss, grad, kd_gap)


class _Coordinator:
    """Sole mutator of the canonical parameters: applies submissions serially, validates, stops early."""

    def __init__(self, state: TrainState, val_videos: list[Video], cfg: TrainConfig):
        self.state = state
        self.val_videos = val_videos
        self.cfg = cfg
        self.rows: list[dict] = []
        self.stop = False

    def _row(self, **values) -> dict:
        row = {c: np.nan for c in LOG_COLUMNS}
        row.update(teacher_chosen="", mode="", worker=-1, t_max=0)
        row.update(values)
        return row

    def validate(self, row: dict) -> None:
        params, _ = self.state.snapshot()
        ss, ps = validate(params, self.val_videos, self.cfg)
        row.update(val_ss=ss, val_ps=ps)
        logger.info(f"Iteration {self.state.iteration}: validation SS={ss:.4f} PS={ps:.4f}")
        if ss > self.state.best_ss:
            self.state.best_ss, self.state.best_params = ss, params
            self.state.best_iteration, self.state.evals_since_best = self.state.iteration, 0
        else:
            self.state.evals_since_best += 1
            if self.state.evals_since_best >= self.cfg.patience:
                logger.info(f"No validation improvement for {self.cfg.patience} evaluations; stopping early")
                self.stop = True

    def _diverge(self, sub: Submission, reason: str) -> None:
        message = (f"Training diverged at iteration {self.state.iteration + 1} "
                   f"(worker {sub.worker}, {sub.mode.value}): {reason}")
        if self.cfg.divergence_guard:
            logger.error(message)
            raise TrainingDivergedError(message)
        logger.warning(f"{message}; stopping without the divergence guard")
        self.state.diverged = True
        self.stop = True
        self.rows.append(self._row(iteration=self.state.iteration + 1, t_max=sub.t_max,
                                   teacher_chosen=sub.teacher, worker=sub.worker, mode=sub.mode.value,
                                   **{"loss_rl" if sub.mode is WorkerMode.RL else "loss_kd": float("nan")}))

    def apply(self, sub: Submission) -> None:
        try:
            if sub.error is not None:
                self._diverge(sub, str(sub.error))
                return
            try:
                with self.state.lock:
                    adam_step(self.state.net, self.state.optimizer, sub.grad)
                    finite = all(torch.isfinite(p).all() for p in self.state.net.parameters())
            except NonFiniteGradientError as e:
                self._diverge(sub, str(e))
                return
            if not finite:
                self._diverge(sub, "parameters became non-finite")
                return
            with self.state.lock:
                self.state.iteration += 1
            loss_key = "loss_rl" if sub.mode is WorkerMode.RL else "loss_kd"
            row = self._row(iteration=self.state.iteration, t_max=sub.t_max, teacher_chosen=sub.teacher,
                            worker=sub.worker, mode=sub.mode.value, kd_gap=sub.kd_gap, **{loss_key: sub.loss})
            if self.state.iteration % self.cfg.eval_every == 0 or self.state.iteration == self.cfg.max_iterations:
                self.validate(row)
            self.rows.append(row)
            if self.state.iteration >= self.cfg.max_iterations:
                self.stop = True
        finally:
            sub.applied.set()


def _run_deterministic(coordinator: _Coordinator, workspace: _Workspace, nets: list[StudentNet]) -> None:
    state, cfg = coordinator.state, coordinator.cfg
    while not coordinator.stop:
        worker = state.iteration % cfg.n_workers
        params, iteration = state.snapshot()
        coordinator.apply(_work(worker, nets[worker], params, iteration, workspace, state.worker_rngs[worker]))


def _run_concurrent(coordinator: _Coordinator, workspace: _Workspace, nets: list[StudentNet]) -> None:
    """
    Thread k owns workers k, k + jobs, ... and cycles through them. Each thread waits for its
    previous submission to be applied before taking a new snapshot, so staleness is bounded by
    the submissions of the other threads; with one thread this is the deterministic schedule.
    """
    state, cfg = coordinator.state, coordinator.cfg
    n_threads = min(cfg.jobs, cfg.n_workers)
    submissions: queue.Queue[Submission] = queue.Queue()
    halt = threading.Event()

    def worker_loop(thread: int) -> None:
        owned = list(range(thread, cfg.n_workers, n_threads))
        k = 0
        while not halt.is_set():
            worker = owned[k % len(owned)]
            k += 1
            params, iteration = state.snapshot()
            sub = _work(worker, nets[worker], params, iteration, workspace, state.worker_rngs[worker])
            submissions.put(sub)
            while not sub.applied.wait(_POLL_S):
                if halt.is_set():
                    return

    with concurrent.futures.ThreadPoolExecutor(max_workers=n_threads) as executor:
        futures = [executor.submit(worker_loop, k) for k in range(n_threads)]
        try:
            while not coordinator.stop:
                try:
                    coordinator.apply(submissions.get(timeout=_POLL_S))
                except queue.Empty:
                    for future in futures:
                        if future.done() and future.exception() is not None:
                            raise future.exception()
        finally:
            halt.set()
            concurrent.futures.wait(futures)


def adapt(initial: StudentParams, train_videos: list[Video], val_videos: list[Video],
          cfg: TrainConfig, optimizer_state: dict | None = None) -> AdaptResult:
    """
    Adapts the student with S workers, half on the actor-critic loss and half on distillation.

    Args:
        initial: Pretrained or freshly initialised parameters.
        train_videos: Training split, cut into cfg.n_chunks chunks per video.
        val_videos: Validation split; when empty, part of train is held out.
        cfg: Training configuration.
        optimizer_state: Optional optimizer state to resume from.

    Returns:
        AdaptResult with the best-validation parameters and the per-iteration log.
    """
    if not train_videos:
        raise ValueError("adapt() needs at least one training video")
    if not val_videos:
        train_videos, val_videos = holdout_validation(train_videos)
        logger.info(f"No validation split given; holding out {len(val_videos)} train videos")

    net = initial.to_net()
    optimizer = make_optimizer(net, cfg.lr_main, cfg.lr_value_head)
    restore_optimizer(optimizer, optimizer_state)
    worker_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_workers)
    state = TrainState(net, optimizer, [np.random.default_rng(s) for s in worker_seeds])
    coordinator = _Coordinator(state, val_videos, cfg)

    initial_row = coordinator._row(iteration=0)
    coordinator.validate(initial_row)
    coordinator.rows.append(initial_row)
    coordinator.stop = cfg.max_iterations == 0

    if not coordinator.stop:
        logger.info(f"Adapting on {len(train_videos)} videos for up to {cfg.max_iterations} iterations "
                    f"({cfg.n_workers} workers, {cfg.schedule.value}, {cfg.supervision.value} supervision, "
                    f"{'deterministic' if cfg.deterministic else f'{cfg.jobs} threads'})")
        workspace = _Workspace(train_videos, cfg)
        nets = [StudentNet(initial.arch) for _ in range(cfg.n_workers)]
        if cfg.deterministic:
            _run_deterministic(coordinator, workspace, nets)
        else:
            _run_concurrent(coordinator, workspace, nets)

    log = pd.DataFrame(coordinator.rows, columns=LOG_COLUMNS)
    final_params = StudentParams.from_net(net)
    logger.info(f"Adaptation finished after {state.iteration} iterations "
                f"({optimizer_step_count(optimizer)} optimizer steps); best validation SS "
                f"{state.best_ss:.4f} at iteration {state.best_iteration}")
    return AdaptResult(state.best_params, final_params, optimizer, log, state.best_iteration,
                       state.best_ss, state.diverged)


def rl_only_adapt(initial: StudentParams, train_videos: list[Video], val_videos: list[Video],
                  cfg: TrainConfig) -> AdaptResult:
    return adapt(initial, train_videos, val_videos, replace(cfg, schedule=WorkerSchedule.RL_ONLY))


def kd_only_adapt(initial: StudentParams, train_videos: list[Video], val_videos: list[Video],
                  cfg: TrainConfig) -> AdaptResult:
    return adapt(initial, train_videos, val_videos, replace(cfg, schedule=WorkerSchedule.KD_ONLY))


def pretrain(initial: StudentParams, source_train: list[Video], source_val: list[Video],
             cfg: TrainConfig) -> AdaptResult:
    """Source-domain pretraining: the adaptation machinery with dense IoU and the ground-truth teacher."""
    return adapt(initial, source_train, source_val, replace(cfg, supervision=Supervision.GT))
