"""
Classification and metric losses over embeddings, with analytic gradients.

The angular losses share one shape: each takes cosine logits cos θ_j, builds
scaled logits where only the target class is margined, and applies cross
entropy. They differ in the target transform φ(cos θ_t):

    nsoftmax   φ(c) = c
    csoftmax   φ(c) = m1·c + m2          (scaled by α, non-targets by s)
    cosface    φ(c) = c − m
    arcface    φ(c) = cos(acos(c) + m)   (c − m·sin m once θ + m > π)

margin_map and band_width describe the two-class decision regions these
transforms induce on the (cos θ1, cos θ2) square.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from config.validation import check_margin

from .errors import ConfigError, DataError, DegenerateInputError, ShapeError
from .numeric_core import Tensor

logger = logging.getLogger(__name__)

ARCFACE_CLAMP = 1e-7
NORM_FLOOR = 1e-12

CLASS1, CLASS2, BAND = 0, 1, 2


@dataclass(frozen=True)
class MarginConfig:
    m1: float = 0.7
    m2: float = -0.3
    s: float = 24.0
    alpha: Optional[float] = None

    def __post_init__(self):
        ok, msg = check_margin(self.m1, self.m2)
        if not ok:
            raise ConfigError(msg)
        if self.s <= 0 or self.target_scale <= 0:
            raise ConfigError(f"scales must be positive (s={self.s}, alpha={self.alpha})")

    @property
    def target_scale(self) -> float:
        return self.s if self.alpha is None else self.alpha


@dataclass
class LossResult:
    """
    Mean (or summed, for the triplet loss) loss with its gradient.

    `grad` is the gradient w.r.t. the loss input: the B×M (cosine) logits for
    the cross-entropy family, and a 3×B×L stack (anchor, positive, negative)
    for the triplet loss. `per_sample` holds each sample's term.
    """

    value: float
    grad: Tensor
    per_sample: Tensor


# ── Cosine logits ───────────────────────────────────────────────

def _normalize(v: Tensor, axis: int, what: str):
    norms = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise DegenerateInputError(f"zero-norm {what} cannot be normalised")
    return v / norms, norms


def _normalize_backward(unit: Tensor, norms: Tensor, d_unit: Tensor, axis: int) -> Tensor:
    return (d_unit - unit * np.sum(unit * d_unit, axis=axis, keepdims=True)) / norms


@dataclass
class CosineLogits:
    """cos θ_j per sample and class, plus what the pullback needs"""

    cos: Tensor
    label: Optional[np.ndarray]
    x_unit: Tensor
    x_norm: Tensor
    w_unit: Tensor
    w_norm: Tensor

    def backward(self, d_cos: Tensor):
        """Map d(loss)/d(cos) to (d_x, d_W) through both normalisations"""
        d_x_unit = d_cos @ self.w_unit.T
        d_w_unit = self.x_unit.T @ d_cos
        d_x = _normalize_backward(self.x_unit, self.x_norm, d_x_unit, axis=1)
        d_w = _normalize_backward(self.w_unit, self.w_norm, d_w_unit, axis=0)
        return d_x, d_w


def cosine_logits(x: Tensor, W: Tensor, labels: Optional[Sequence[int]] = None) -> CosineLogits:
    """L2-normalise rows of x (B×L) and columns of W (L×M); cos = x'·W'"""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"cosine_logits needs B×L and L×M, got {x.shape} and {W.shape}")
    x_unit, x_norm = _normalize(x, 1, "embedding row")
    w_unit, w_norm = _normalize(W, 0, "class weight column")
    cos = np.clip(x_unit @ w_unit, -1.0, 1.0)
    label = None if labels is None else check_labels(labels, cos.shape[0], W.shape[1])
    return CosineLogits(cos=cos, label=label, x_unit=x_unit, x_norm=x_norm,
                        w_unit=w_unit, w_norm=w_norm)


def check_labels(labels, batch: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch,):
        raise ShapeError(f"expected {batch} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise DataError(f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]")
    return labels


# ── Cross-entropy core ──────────────────────────────────────────

def _cross_entropy(z: Tensor, labels: np.ndarray, dz_dlogit: Tensor) -> LossResult:
    """Mean CE over rows of z; gradient chained through dz/d(input) elementwise"""
    B = z.shape[0]
    rows = np.arange(B)
    top = np.argmax(z, axis=1)
    shifted = z - z[rows, top][:, None]
    # log(1 + rest): the max term is exactly 1, so near-zero losses keep full precision
    rest = np.exp(shifted)
    rest[rows, top] = 0.0
    log_norm = np.log1p(rest.sum(axis=1))
    per_sample = log_norm - shifted[rows, labels]

    p = np.exp(shifted - log_norm[:, None])
    p[rows, labels] -= 1.0
    grad = p * dz_dlogit / B

    value = 0.0
    for term in per_sample:  # fixed summation order over the batch
        value += float(term)
    return LossResult(value=value / B, grad=grad, per_sample=per_sample)


def _labels_of(cl: CosineLogits, labels) -> np.ndarray:
    if labels is not None:
        return check_labels(labels, *cl.cos.shape)
    if cl.label is None:
        raise DataError("cosine logits carry no labels")
    return cl.label


def _margined(cl: CosineLogits, labels, target_fn: Callable, target_slope: Callable,
              s: float, alpha: float) -> LossResult:
    labels = _labels_of(cl, labels)
    cos = cl.cos
    rows = np.arange(cos.shape[0])
    c_t = cos[rows, labels]

    z = s * cos
    z[rows, labels] = alpha * target_fn(c_t)
    dz = np.full(cos.shape, float(s))
    dz[rows, labels] = alpha * target_slope(c_t)
    return _cross_entropy(z, labels, dz)


# ── Losses ──────────────────────────────────────────────────────

def softmax_ce(logits: Tensor, labels) -> LossResult:
    """Plain softmax cross entropy over unnormalised logits (W·x + b)"""
    labels = check_labels(labels, *logits.shape)
    return _cross_entropy(np.asarray(logits, dtype=np.float64), labels, np.ones(logits.shape))


def normalized_softmax(cl: CosineLogits, s: float = 24.0, labels=None) -> LossResult:
    return _margined(cl, labels, lambda c: c, np.ones_like, s, s)


def c_softmax(cl: CosineLogits, mc: MarginConfig = MarginConfig(), labels=None) -> LossResult:
    """Conditional-margin softmax: target logit α·(m1·cos θ_t + m2), others s·cos θ_j"""
    return _margined(
        cl, labels,
        lambda c: mc.m1 * c + mc.m2,
        lambda c: np.full_like(c, mc.m1),
        mc.s, mc.target_scale,
    )


def cosface(cl: CosineLogits, m: float = 0.35, s: float = 24.0, labels=None) -> LossResult:
    return _margined(cl, labels, lambda c: c - m, np.ones_like, s, s)


def _arcface_phi(c: Tensor, m: float) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    clamped = np.clip(c, -1.0 + ARCFACE_CLAMP, 1.0 - ARCFACE_CLAMP)
    if np.any(clamped != c):
        logger.warning(f"ArcFace: clamped {int(np.sum(clamped != c))} cosine(s) into the acos domain")
    theta = np.arccos(clamped)
    return np.where(theta + m <= math.pi, np.cos(theta + m), c - m * math.sin(m))


def _arcface_slope(c: Tensor, m: float) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    inside = (c > -1.0 + ARCFACE_CLAMP) & (c < 1.0 - ARCFACE_CLAMP)
    clamped = np.clip(c, -1.0 + ARCFACE_CLAMP, 1.0 - ARCFACE_CLAMP)
    theta = np.arccos(clamped)
    slope = np.sin(theta + m) / np.sqrt(1.0 - clamped ** 2)
    slope = np.where(inside, slope, 0.0)
    return np.where(theta + m <= math.pi, slope, 1.0)


def arcface(cl: CosineLogits, m: float = 0.5, s: float = 24.0, labels=None) -> LossResult:
    """Additive angular margin: target logit s·cos(θ_t + m)"""
    return _margined(cl, labels, lambda c: _arcface_phi(c, m), lambda c: _arcface_slope(c, m), s, s)


def triplet_conditional(anchor: Tensor, positive: Tensor, negative: Tensor, m: float = 0.5) -> LossResult:
    """
    Summed hinge [(s_n + 1)/(s_p + 1) − m]+ over triplets, s = cosine similarity

    Args:
        anchor, positive, negative: B×L embeddings

    Returns:
        LossResult with grad stacked as (anchor, positive, negative)
    """
    if not (anchor.shape == positive.shape == negative.shape) or anchor.ndim != 2:
        raise ShapeError(f"triplet embeddings must share a B×L shape: {anchor.shape}, {positive.shape}, {negative.shape}")

    a_unit, a_norm = _normalize(anchor, 1, "anchor embedding")
    p_unit, p_norm = _normalize(positive, 1, "positive embedding")
    n_unit, n_norm = _normalize(negative, 1, "negative embedding")
    s_p = np.sum(a_unit * p_unit, axis=1)
    s_n = np.sum(a_unit * n_unit, axis=1)
    if np.any(s_p + 1.0 < NORM_FLOOR):
        raise DegenerateInputError("anchor and positive point in opposite directions; ratio undefined")

    ratio = (s_n + 1.0) / (s_p + 1.0)
    per_sample = np.maximum(ratio - m, 0.0)
    active = (ratio - m > 0).astype(np.float64)

    d_sn = active / (s_p + 1.0)
    d_sp = -active * (s_n + 1.0) / (s_p + 1.0) ** 2

    d_a_unit = d_sp[:, None] * p_unit + d_sn[:, None] * n_unit
    d_p_unit = d_sp[:, None] * a_unit
    d_n_unit = d_sn[:, None] * a_unit
    grad = np.stack([
        _normalize_backward(a_unit, a_norm, d_a_unit, axis=1),
        _normalize_backward(p_unit, p_norm, d_p_unit, axis=1),
        _normalize_backward(n_unit, n_norm, d_n_unit, axis=1),
    ])

    value = 0.0
    for term in per_sample:
        value += float(term)
    return LossResult(value=value, grad=grad, per_sample=per_sample)


# ── Margin geometry ─────────────────────────────────────────────

MARGIN_LOSSES = ("nsoftmax", "csoftmax", "cosface", "arcface")


def target_transform(loss_id: str, params: Dict) -> Callable[[Tensor], Tensor]:
    """φ for a loss id; params may carry m1, m2, m (cosface/arcface)"""
    if loss_id == "nsoftmax":
        return lambda c: np.asarray(c, dtype=np.float64)
    if loss_id == "csoftmax":
        m1, m2 = params.get("m1", 0.7), params.get("m2", -0.3)
        return lambda c: m1 * np.asarray(c, dtype=np.float64) + m2
    if loss_id == "cosface":
        m = params.get("m", 0.35)
        return lambda c: np.asarray(c, dtype=np.float64) - m
    if loss_id == "arcface":
        m = params.get("m", 0.5)
        return lambda c: _arcface_phi(c, m)
    raise ConfigError(f"Unknown loss id for margin map: {loss_id}. Available: {', '.join(MARGIN_LOSSES)}")


def margin_map(loss_id: str, params: Dict = None, grid_resolution: int = 256) -> np.ndarray:
    """
    Label the (cos θ1, cos θ2) ∈ [−1, 1]² grid by decision region

    Row k holds cos θ2 = grid[k] (ascending), column j holds cos θ1 = grid[j].
    A cell is CLASS1 when class 1 wins as target (α·φ(cos θ1) > s·cos θ2),
    CLASS2 symmetrically, BAND when neither condition holds.
    """
    if grid_resolution < 2:
        raise ConfigError(f"grid resolution must be >= 2, got {grid_resolution}")
    params = dict(params or {})
    phi = target_transform(loss_id, params)
    s = float(params.get("s", 24.0))
    alpha = float(params.get("alpha") or s)

    axis = np.linspace(-1.0, 1.0, grid_resolution)
    c1, c2 = np.meshgrid(axis, axis)
    class1 = alpha * phi(c1) > s * c2
    class2 = alpha * phi(c2) > s * c1

    labels = np.full(c1.shape, BAND, dtype=np.int64)
    labels[class1] = CLASS1
    labels[class2 & ~class1] = CLASS2
    return labels


def _inverse_transform(loss_id: str, params: Dict, value: float) -> float:
    if loss_id == "nsoftmax":
        return value
    if loss_id == "csoftmax":
        return (value - params.get("m2", -0.3)) / params.get("m1", 0.7)
    if loss_id == "cosface":
        return value + params.get("m", 0.35)
    if loss_id == "arcface":
        m = params.get("m", 0.5)
        theta = math.acos(min(1.0, max(-1.0, value)))
        return math.cos(max(theta - m, 0.0))
    raise ConfigError(f"Unknown loss id for band width: {loss_id}")


def band_width(loss_id: str, params: Dict, cos1: float, clip: bool = False) -> float:
    """
    Vertical width of the margin band at cos θ1, from the two boundary curves
    cos θ2 = φ(cos θ1) and φ(cos θ2) = cos θ1.
    """
    params = dict(params or {})
    lower = float(target_transform(loss_id, params)(cos1))
    upper = _inverse_transform(loss_id, params, cos1)
    if clip:
        lower, upper = max(lower, -1.0), min(upper, 1.0)
    return max(upper - lower, 0.0)
