"""Central finite-difference check of every analytic parameter gradient"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import UsageError
from .losses import MarginConfig
from .model import HeadModel, Objective
from .numeric_core import Rng

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-6
# Denominator floor for the relative error
ERROR_FLOOR = 1e-3
DROPOUT_P = 0.5
# Normalised losses: the checked instance scales the final projection up,
# their curvature in that tensor falls with the cube of the gain
PROJECTION_GAIN = 8.0
PROJECTION_WEIGHTS = ("rgm.Wfc", "rm.Wout", "fc.W")


@dataclass
class GroupResult:
    name: str
    max_rel_error: float
    size: int
    passed: bool


@dataclass
class GradcheckReport:
    loss: str
    seed: int
    tolerance: float
    groups: List[GroupResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    @property
    def worst(self) -> Optional[GroupResult]:
        return max(self.groups, key=lambda g: g.max_rel_error, default=None)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ERROR_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def gradcheck(loss_id: str = "csoftmax", seed: int = 0, kind: str = "rgm_nau",
              nodes: int = 16, channels: int = 8, dim: int = 4, embed_dim: int = 4,
              batch: int = 4, classes: int = 3, edge_activation: str = "sigmoid",
              margin: MarginConfig = MarginConfig(), step: float = STEP,
              tolerance: float = TOLERANCE, corrupt_group: Optional[str] = None) -> GradcheckReport:
    """
    Compare analytic gradients against central differences, parameter by parameter

    Args:
        nodes: must be a perfect square (the map is sqrt(N)×sqrt(N))
        corrupt_group: parameter name whose analytic gradient is deliberately
            perturbed before comparison

    Returns:
        GradcheckReport with one entry per parameter tensor
    """
    if batch < 1:
        raise UsageError(f"gradcheck batch must be >= 1, got {batch}")
    side = math.isqrt(nodes)
    if side * side != nodes:
        raise UsageError(f"gradcheck needs a square node count, got {nodes}")

    model = HeadModel(kind, channels, side, side, dim=dim, embed_dim=embed_dim,
                      num_classes=classes, loss=loss_id, edge_activation=edge_activation, seed=seed)
    gain = 1.0 if loss_id == "softmax" else PROJECTION_GAIN
    current = model.named_tensors()
    model.assign({name: gain * current[name] for name in PROJECTION_WEIGHTS if name in current})
    objective = Objective(loss=loss_id, margin=margin)
    rng = Rng(seed, stream=99)
    maps = 3 * batch if loss_id == "triplet-cond" else batch
    fm = rng.normal((maps, channels, side, side))
    labels = rng.integers(0, classes, size=batch)
    mask = rng.dropout_mask(model.dropout_shape(maps), DROPOUT_P)

    _, analytic, _ = model.loss_and_grads(fm, labels, objective, mask)
    if corrupt_group is not None:
        if corrupt_group not in analytic:
            raise UsageError(f"unknown parameter group {corrupt_group!r}; have {sorted(analytic)}")
        analytic[corrupt_group] = analytic[corrupt_group] * 1.5 + 1e-2
        logger.warning(f"Gradcheck: corrupted analytic gradient of {corrupt_group}")

    report = GradcheckReport(loss=loss_id, seed=seed, tolerance=tolerance)
    base = {k: v.copy() for k, v in model.named_tensors().items()}
    for name, value in base.items():
        numeric = np.zeros_like(value)
        flat = numeric.reshape(-1)
        for k in range(value.size):
            shifted = value.copy().reshape(-1)
            shifted[k] = value.reshape(-1)[k] + step
            model.assign({name: shifted.reshape(value.shape)})
            up = model.loss_value(fm, labels, objective, mask)
            shifted[k] = value.reshape(-1)[k] - step
            model.assign({name: shifted.reshape(value.shape)})
            down = model.loss_value(fm, labels, objective, mask)
            flat[k] = (up - down) / (2 * step)
        model.assign({name: value})

        err = float(np.max(relative_error(analytic[name], numeric))) if value.size else 0.0
        report.groups.append(GroupResult(name=name, max_rel_error=err, size=value.size, passed=err < tolerance))

    worst = report.worst
    logger.info(f"Gradcheck {kind}/{loss_id} seed={seed}: "
                f"{'PASS' if report.passed else 'FAIL'} (worst {worst.name} {worst.max_rel_error:.2e})")
    return report
