"""Configuration validation"""

import logging
from typing import Iterable, Tuple

from .settings import DEFAULT_DATASET, DEFAULT_MODEL, DEFAULT_TRAIN

logger = logging.getLogger(__name__)

# Keys a run config file may carry
RUN_CONFIG_KEYS = (
    set(DEFAULT_MODEL)
    | set(DEFAULT_TRAIN)
    | {"dataset", "out", "far_levels", "dims", "n_classes", "per_class", "resolution",
       "node", "topk", "samples", "checkpoint", "seeds", "gen"}
)

# Keys the nested "gen" object may carry
GEN_CONFIG_KEYS = frozenset(DEFAULT_DATASET)

# Margin slope/intercept must keep the band non-negative
MARGIN_TOLERANCE = 1e-9


def check_config_keys(raw: dict, allowed: Iterable[str] = None) -> Tuple[bool, str]:
    """
    Validate the keys of a raw config mapping

    Args:
        raw: Parsed config file content
        allowed: Accepted keys (defaults to RUN_CONFIG_KEYS)

    Returns:
        Tuple of (is_valid, error_message or "")
    """
    allowed = set(RUN_CONFIG_KEYS if allowed is None else allowed)
    unknown = sorted(k for k in raw if k not in allowed)
    if unknown:
        logging.warning(f"REJECTED_CONFIG - Unknown keys: {unknown}")
        return False, f"Unknown config keys: {', '.join(unknown)}"
    if "gen" in raw:
        gen = raw["gen"]
        if not isinstance(gen, dict):
            return False, f"Config key 'gen' must be an object, got {type(gen).__name__}"
        unknown = sorted(k for k in gen if k not in GEN_CONFIG_KEYS)
        if unknown:
            logging.warning(f"REJECTED_CONFIG - Unknown gen keys: {unknown}")
            return False, f"Unknown gen config keys: {', '.join(unknown)}"
    return True, ""


def check_choice(name: str, value: str, choices: Iterable[str]) -> Tuple[bool, str]:
    """Check that value is one of the known identifiers"""
    choices = tuple(choices)
    if value not in choices:
        return False, f"Unknown {name} '{value}'. Available: {', '.join(choices)}"
    return True, ""


def check_margin(m1: float, m2: float) -> Tuple[bool, str]:
    """Check the conditional-margin constraint m1 - m2 >= 1"""
    if m1 - m2 < 1.0 - MARGIN_TOLERANCE:
        logger.warning(f"REJECTED_MARGIN - m1={m1} m2={m2}")
        return False, f"Margin violates m1 - m2 >= 1 (m1={m1}, m2={m2})"
    return True, ""
