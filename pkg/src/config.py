"""Configuration settings for the weaktrack project."""

import logging
import os

# Logging Configuration
LOG_LEVEL = logging.INFO
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Project Paths
# Define project root assuming this config file is in src/
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))

DATA_DIR = os.environ.get("WEAKTRACK_DATA_DIR", os.path.join(PROJECT_ROOT, "data"))
RUNS_DIR = os.path.join(PROJECT_ROOT, "runs")

# Results registry (evaluation runs)
RESULTS_DATABASE_URL = os.environ.get(
    "WEAKTRACK_RESULTS_DB", f"sqlite:///{os.path.join(DATA_DIR, 'results.db')}"
)

# Geometry
PATCH_SIZE = 32
CONTEXT_FACTOR = 2.0
MIN_BOX_SIZE = 2.0
NORM_DIST_TRUNCATION = 20.0

# Synthetic data
FRAME_SIZE = 128
VIDEO_LENGTH = 96
GROUNDTRUTH_FILENAME = "groundtruth.txt"
WEAKLABELS_FILENAME = "weaklabels.txt"
MANIFEST_FILENAME = "manifest.json"
FRAME_NAME_FORMAT = "{:06d}.pgm"
VALIDATION_HOLDOUT_FRACTION = 0.2

# Training defaults
NUM_WORKERS = 12
SIGMA = 0.05
GAMMA = 0.99
CHUNK_LEN = 32
N_CHUNKS = 20
REVERSE_PROB = 0.5
LR_MAIN = 7.5e-7
LR_VALUE_HEAD = 1e-5
CURRICULUM_LENGTHS = (4, 8, 16, 32)
MAX_ITERATIONS = 5000
EVAL_EVERY = 250
PATIENCE = 8
WEAK_DELAY = 1

# Student architecture
CONV_CHANNELS = (8, 16)
HIDDEN_SIZE = 64

# Evaluation
SUCCESS_THRESHOLDS = 50  # {0.00, 0.02, ..., 0.98}
PRECISION_MAX_DISTANCE = 50
PRECISION_REPORT_DISTANCE = 20
FPS_WARMUP_FRAMES = 5

# Teachers
# Skill maps are noise multipliers per domain preset (1.0 when the preset is not listed).
DEFAULT_TEACHER_POOL = [
    {
        "name": "mdnet-like",
        "center_noise_std": 1.5,
        "scale_noise_std": 0.05,
        "drift_prob": 0.01,
        "drift_len": 8,
        "recapture_prob": 0.1,
        "skill_map": {"drone-like": 0.7, "thermal-like": 1.0, "underwater-like": 2.0},
        "latency_s": 0.05,
    },
    {
        "name": "siamrpn-like",
        "center_noise_std": 1.0,
        "scale_noise_std": 0.04,
        "drift_prob": 0.02,
        "drift_len": 6,
        "recapture_prob": 0.2,
        "skill_map": {"drone-like": 1.5, "thermal-like": 0.8, "underwater-like": 1.0},
        "latency_s": 0.02,
    },
    {
        "name": "atom-like",
        "center_noise_std": 1.2,
        "scale_noise_std": 0.03,
        "drift_prob": 0.01,
        "drift_len": 10,
        "recapture_prob": 0.15,
        "skill_map": {"drone-like": 1.2, "thermal-like": 1.3, "underwater-like": 0.6},
        "latency_s": 0.03,
    },
]
GROUNDTRUTH_TEACHER_NAME = "groundtruth"
