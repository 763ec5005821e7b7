"""Mini-batch SGD with momentum over frozen synthetic features"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import DEFAULT_TRAIN

from .errors import ConfigError, DataError, NumericalFailure, ShapeError
from .losses import MarginConfig
from .model import HeadModel, Objective
from .numeric_core import Rng, Tensor
from .synthdata import Sample, stack_features

logger = logging.getLogger(__name__)

# Rng streams owned by the trainer
_SHUFFLE_STREAM = 11
_DROPOUT_STREAM = 12
_TRIPLET_STREAM = 13


@dataclass
class TrainConfig:
    lr: float = DEFAULT_TRAIN["lr"]
    batch: int = DEFAULT_TRAIN["batch"]
    momentum: float = DEFAULT_TRAIN["momentum"]
    epochs: int = DEFAULT_TRAIN["epochs"]
    dropout_p: float = DEFAULT_TRAIN["dropout_p"]
    loss_id: str = DEFAULT_TRAIN["loss"]
    margin: MarginConfig = field(default_factory=MarginConfig)
    cosface_m: float = DEFAULT_TRAIN["cosface_m"]
    arcface_m: float = DEFAULT_TRAIN["arcface_m"]
    triplet_m: float = DEFAULT_TRAIN["triplet_m"]
    weight_decay: float = DEFAULT_TRAIN["weight_decay"]
    lr_milestones: Sequence[float] = tuple(DEFAULT_TRAIN["lr_milestones"])
    lr_decay: float = DEFAULT_TRAIN["lr_decay"]
    clip_norm: Optional[float] = DEFAULT_TRAIN["clip_norm"]
    seed: int = DEFAULT_TRAIN["seed"]

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0 or None, got {self.clip_norm}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")

    @property
    def objective(self) -> Objective:
        return Objective(loss=self.loss_id, margin=self.margin, cosface_m=self.cosface_m,
                         arcface_m=self.arcface_m, triplet_m=self.triplet_m)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch after milestone decays"""
        passed = sum(1 for frac in self.lr_milestones if epoch >= int(math.floor(frac * self.epochs)) > 0)
        return self.lr * (self.lr_decay ** passed)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    accuracy: Optional[float]


# ── Optimizer ───────────────────────────────────────────────────

def sgd_momentum_step(params: Dict[str, Tensor], grads: Dict[str, Tensor], state: Dict[str, Tensor],
                      lr: float, momentum: float, weight_decay: float = 0.0) -> Tuple[Dict[str, Tensor], Dict[str, Tensor]]:
    """
    One SGD step: v <- momentum·v + g; p <- p − lr·v

    Returns:
        (new params, new velocity state); inputs are left untouched
    """
    new_params: Dict[str, Tensor] = {}
    new_state: Dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ShapeError(f"missing gradient for {name}")
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        if weight_decay:
            g = g + weight_decay * p
        v = momentum * state[name] + g if name in state else g.copy()
        new_state[name] = v
        new_params[name] = p - lr * v
    return new_params, new_state


def clip_by_global_norm(grads: Dict[str, Tensor], max_norm: Optional[float]) -> Tuple[Dict[str, Tensor], float]:
    """
    Scale every gradient by one factor so their joint L2 norm is at most max_norm

    Returns:
        (possibly rescaled gradients, norm before clipping)
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


def dropout_mask(rng: Rng, shape: Tuple[int, int], p: float) -> Tensor:
    """Inverted-dropout mask whose rows each keep at least one unit"""
    mask = rng.dropout_mask(shape, p)
    dead = ~mask.any(axis=1)
    while np.any(dead):
        logger.debug(f"Redrawing {int(dead.sum())} all-zero dropout row(s)")
        mask[dead] = rng.dropout_mask((int(dead.sum()), shape[1]), p)
        dead = ~mask.any(axis=1)
    return mask


# ── Training ────────────────────────────────────────────────────

def class_index(samples: Sequence[Sample]) -> Dict[int, int]:
    """Identity -> contiguous class index, in ascending identity order"""
    return {ident: k for k, ident in enumerate(sorted({s.identity for s in samples}))}


def _triplet_batch(features: Tensor, samples: Sequence[Sample], anchors: np.ndarray, rng: Rng) -> Tensor:
    """Anchor, cross-domain positive and random negative maps, stacked"""
    by_id_domain: Dict[Tuple[int, str], List[int]] = {}
    for k, s in enumerate(samples):
        by_id_domain.setdefault((s.identity, s.domain), []).append(k)
    ids = sorted({s.identity for s in samples})
    if len(ids) < 2:
        raise DataError("triplet training needs at least two identities")

    positives, negatives = [], []
    for a in anchors:
        s = samples[a]
        others = [key for key in by_id_domain if key[0] == s.identity and key[1] != s.domain]
        pool = by_id_domain[others[0]] if others else [k for k in by_id_domain[(s.identity, s.domain)] if k != a] or [a]
        positives.append(pool[int(rng.integers(0, len(pool)))])
        neg_ids = [i for i in ids if i != s.identity]
        neg_id = neg_ids[int(rng.integers(0, len(neg_ids)))]
        neg_pool = [k for key, ks in by_id_domain.items() if key[0] == neg_id for k in ks]
        negatives.append(neg_pool[int(rng.integers(0, len(neg_pool)))])

    return np.concatenate([features[anchors], features[positives], features[negatives]])


def train(samples: Sequence[Sample], model: HeadModel, cfg: TrainConfig) -> Tuple[HeadModel, List[EpochLog]]:
    """
    Train the head in place

    Shuffling, dropout and triplet sampling each draw from their own Rng
    stream of cfg.seed, so a run is a pure function of (data, init, cfg).

    Returns:
        (model, per-epoch log)
    """
    if not samples:
        raise DataError("training set is empty")
    objective = cfg.objective
    classes = class_index(samples)
    if objective.needs_classifier and len(classes) != model.num_classes:
        raise DataError(f"model has {model.num_classes} classes, training set has {len(classes)} identities")

    features = stack_features(list(samples))
    labels = np.array([classes[s.identity] for s in samples], dtype=np.int64)
    shuffle_rng = Rng(cfg.seed, _SHUFFLE_STREAM)
    dropout_rng = Rng(cfg.seed, _DROPOUT_STREAM)
    triplet_rng = Rng(cfg.seed, _TRIPLET_STREAM)

    state: Dict[str, Tensor] = {}
    log: List[EpochLog] = []
    n = len(samples)

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = shuffle_rng.permutation(n)
        total, correct, scored = 0.0, 0, 0

        for step, start in enumerate(range(0, n, cfg.batch)):
            idx = order[start:start + cfg.batch]
            if objective.loss == "triplet-cond":
                batch = _triplet_batch(features, samples, idx, triplet_rng)
            else:
                batch = features[idx]
            mask = None
            if cfg.dropout_p > 0:
                mask = dropout_mask(dropout_rng, model.dropout_shape(batch.shape[0]), cfg.dropout_p)

            result, grads, scores = model.loss_and_grads(batch, labels[idx], objective, mask)
            if not math.isfinite(result.value):
                logger.error(f"Non-finite loss at epoch {epoch}, step {step}")
                raise NumericalFailure("loss became non-finite", epoch=epoch, step=step)

            total += float(np.sum(result.per_sample))
            if scores is not None:
                correct += int(np.sum(np.argmax(scores, axis=1) == labels[idx]))
                scored += len(idx)

            grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
            params = model.named_tensors()
            new_params, state = sgd_momentum_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay)
            model.assign(new_params)

        entry = EpochLog(epoch=epoch, lr=lr, loss=total / n, accuracy=(correct / scored) if scored else None)
        log.append(entry)
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: loss={entry.loss:.6f} lr={lr:g}"
                    + (f" acc={entry.accuracy:.4f}" if entry.accuracy is not None else ""))

    return model, log
