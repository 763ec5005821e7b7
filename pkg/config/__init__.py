"""
Relgraph Configuration Package
Environment settings, defaults and validation
"""

from .validation import check_config_keys, check_choice, check_margin, RUN_CONFIG_KEYS
from .settings import (
    RELGRAPH_THREADS, BASE_DIR, DATA_DIR, OUTPUT_DIR, LOG_DIR, LOG_LEVEL, LOG_FILE,
    FAR_LEVELS, LOSS_IDS, EDGE_ACTIVATIONS, HEAD_KINDS,
    DEFAULT_MODEL, DEFAULT_TRAIN, DEFAULT_DATASET, setup_logging,
)

__all__ = [
    "check_config_keys", "check_choice", "check_margin", "RUN_CONFIG_KEYS",
    "RELGRAPH_THREADS", "BASE_DIR", "DATA_DIR", "OUTPUT_DIR", "LOG_DIR", "LOG_LEVEL",
    "LOG_FILE", "FAR_LEVELS", "LOSS_IDS", "EDGE_ACTIVATIONS", "HEAD_KINDS",
    "DEFAULT_MODEL", "DEFAULT_TRAIN", "DEFAULT_DATASET", "setup_logging",
]
