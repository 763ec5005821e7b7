"""General application settings"""

import logging
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def thread_count(raw) -> int:
    """Worker cap from an env value; unparseable or missing values fall back to the CPU count"""
    default = os.cpu_count() or 1
    if raw is None or str(raw).strip() == "":
        return default
    try:
        return max(1, int(raw))
    except (TypeError, ValueError):
        logging.getLogger(__name__).warning(f"Ignoring RELGRAPH_THREADS={raw!r}: not an integer, using {default}")
        return default


# Parallelism cap for evaluation and gradient checks
RELGRAPH_THREADS = thread_count(os.getenv('RELGRAPH_THREADS'))

# Paths
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = Path(os.getenv('RELGRAPH_DATA_DIR', BASE_DIR / "data"))
OUTPUT_DIR = Path(os.getenv('RELGRAPH_OUTPUT_DIR', BASE_DIR / "runs"))
LOG_DIR = BASE_DIR / "logs"

# Logging
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('LOG_FILE', 'relgraph.log')
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

# Evaluation protocol
FAR_LEVELS = (0.01, 0.001, 0.0001)

# Known identifiers
LOSS_IDS = ("softmax", "nsoftmax", "csoftmax", "cosface", "arcface", "triplet-cond")
EDGE_ACTIVATIONS = ("sigmoid", "softmax")
HEAD_KINDS = ("linear", "extra", "rm", "rgm", "rgm_nau")

# Model shape defaults (desk scale; full-size runs use 8x8 nodes)
DEFAULT_MODEL = {
    "kind": "rgm_nau",
    "height": 4,
    "width": 4,
    "channels": 16,
    "dim": 16,
    "embed_dim": 64,
    "reduction": 2,
    "edge_activation": "sigmoid",
    "relation_dim": 64,
}

# Training defaults
DEFAULT_TRAIN = {
    "lr": 0.001,
    "batch": 128,
    "momentum": 0.9,
    "epochs": 100,
    "dropout_p": 0.7,
    "loss": "csoftmax",
    "m1": 0.7,
    "m2": -0.3,
    "scale": 24.0,
    "alpha": None,
    "cosface_m": 0.35,
    "arcface_m": 0.5,
    "triplet_m": 0.5,
    "weight_decay": 0.0,
    "lr_milestones": [0.5, 0.75],
    "lr_decay": 0.1,
    "clip_norm": 5.0,
    "seed": 0,
}

# Synthetic dataset defaults
DEFAULT_DATASET = {
    "train_ids": 40,
    "test_ids": 20,
    "per_id": 5,
    "domain_gap": 2.0,
    "noise": 0.1,
    "sharpness": 3.0,
    "seed": 0,
}

_logging_ready = False


def setup_logging(level: str = None, log_to_file: bool = False) -> None:
    """Configure the root logger once for command-line use"""
    global _logging_ready
    if _logging_ready:
        return

    handlers = [logging.StreamHandler()]
    if log_to_file:
        LOG_DIR.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(LOG_DIR / LOG_FILE))

    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
    )
    _logging_ready = True
