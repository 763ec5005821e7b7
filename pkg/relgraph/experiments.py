"""
Desk-scale experiments: dimension sweep, 2-D toy embedding, head ablation,
and loss / edge-activation comparisons.

Every experiment takes a resolved RunConfig (or any mapping with the same
keys) and a Dataset, trains fresh heads with the configured seed, and returns
(header, rows) ready for exporters.write_csv.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import FAR_LEVELS, LOSS_IDS

from .errors import ConfigError, DataError
from .evaluation import EvalReport, embed_all, evaluate, evaluate_raw, far_column
from .losses import MarginConfig
from .model import HeadModel
from .synthdata import Dataset, gen_dataset
from .trainer import EpochLog, TrainConfig, class_index, train

logger = logging.getLogger(__name__)

Rows = List[List]


# ── Config plumbing ─────────────────────────────────────────────

def train_config(cfg, **overrides) -> TrainConfig:
    """TrainConfig from a resolved run config"""
    values = {k: cfg.get(k) for k in ("lr", "batch", "momentum", "epochs", "dropout_p", "loss",
                                       "m1", "m2", "scale", "alpha", "cosface_m", "arcface_m",
                                       "triplet_m", "weight_decay", "lr_milestones", "lr_decay",
                                       "clip_norm", "seed")}
    values.update(overrides)
    return TrainConfig(
        lr=values["lr"], batch=values["batch"], momentum=values["momentum"], epochs=values["epochs"],
        dropout_p=values["dropout_p"], loss_id=values["loss"],
        margin=MarginConfig(m1=values["m1"], m2=values["m2"], s=values["scale"], alpha=values["alpha"]),
        cosface_m=values["cosface_m"], arcface_m=values["arcface_m"], triplet_m=values["triplet_m"],
        weight_decay=values["weight_decay"], lr_milestones=tuple(values["lr_milestones"]),
        lr_decay=values["lr_decay"], clip_norm=values["clip_norm"], seed=values["seed"],
    )


def build_model(cfg, dataset: Dataset, **overrides) -> HeadModel:
    """Fresh head sized to the dataset's feature maps and training identities"""
    channels, height, width = dataset.dims
    values = {k: cfg.get(k) for k in ("kind", "dim", "embed_dim", "loss", "edge_activation",
                                       "reduction", "relation_dim", "seed")}
    values.update(overrides)
    return HeadModel(
        kind=values["kind"], channels=channels, height=height, width=width,
        dim=values["dim"], embed_dim=values["embed_dim"], num_classes=len(class_index(dataset.train)),
        loss=values["loss"], edge_activation=values["edge_activation"], reduction=values["reduction"],
        relation_dim=values["relation_dim"], seed=values["seed"],
    )


def fit(cfg, dataset: Dataset, **overrides) -> Tuple[HeadModel, List[EpochLog]]:
    """Build and train a head; overrides apply to both model and training keys"""
    model_keys = {"kind", "dim", "embed_dim", "edge_activation", "reduction", "relation_dim"}
    model = build_model(cfg, dataset, **{k: v for k, v in overrides.items() if k in model_keys | {"loss", "seed"}})
    tcfg = train_config(cfg, **{k: v for k, v in overrides.items() if k not in model_keys})
    return train(dataset.train, model, tcfg)


def metric_header(far_levels: Sequence[float] = FAR_LEVELS) -> List[str]:
    return ["rank1"] + [far_column(f) for f in far_levels]


def _loss_span(log: List[EpochLog]) -> List[Optional[float]]:
    if not log:
        return [None, None]
    return [log[0].loss, log[-1].loss]


# ── Dimension sweep ─────────────────────────────────────────────

def dim_sweep(dims: Sequence[int], cfg, dataset: Dataset) -> Tuple[List[str], Rows]:
    """One fresh model per node-embedding dimension d, same seed throughout"""
    if not dims:
        raise ConfigError("dimension sweep needs at least one d")
    far_levels = cfg.get("far_levels", FAR_LEVELS)
    rows: Rows = []
    for d in dims:
        model, _ = fit(cfg, dataset, dim=int(d))
        report = evaluate(model, dataset.gallery, dataset.probe, far_levels)
        rows.append([int(d)] + report.row(far_levels))
        logger.info(f"Sweep d={d}: rank1={report.rank1:.4f}")
    return ["d"] + metric_header(far_levels), rows


# ── 2-D toy embedding ───────────────────────────────────────────

def circular_mean(angles: np.ndarray) -> float:
    return float(np.arctan2(np.mean(np.sin(angles)), np.mean(np.cos(angles))))


def circular_std(angles: np.ndarray) -> float:
    """sqrt(-2 ln R) with R the mean resultant length"""
    r = math.hypot(float(np.mean(np.sin(angles))), float(np.mean(np.cos(angles))))
    return math.sqrt(max(-2.0 * math.log(max(r, 1e-300)), 0.0))


def angular_summary(angles: np.ndarray, labels: np.ndarray) -> Dict[str, Optional[float]]:
    """
    Minimum angular gap between class centres and mean intra-class spread

    A single class has no inter-class gap; it is reported as None.
    """
    classes = sorted(set(np.asarray(labels).tolist()))
    if not classes:
        raise DataError("no samples to summarise")
    centres = [circular_mean(angles[labels == c]) for c in classes]
    spread = float(np.mean([circular_std(angles[labels == c]) for c in classes]))

    gap = None
    for i in range(len(centres)):
        for j in range(i + 1, len(centres)):
            delta = abs(centres[i] - centres[j]) % (2 * math.pi)
            delta = min(delta, 2 * math.pi - delta)
            gap = delta if gap is None else min(gap, delta)
    return {"min_interclass_gap": gap, "mean_intraclass_std": spread}


def toy2d(cfg, n_classes: int = 8, per_domain: int = 15) -> Tuple[List[str], Rows, Dict[str, Optional[float]]]:
    """
    Train a head with a 2-D embedding on a small synthetic set and return
    each training sample's normalised coordinates and angle

    Returns:
        (header, rows, summary)
    """
    if n_classes < 1:
        raise ConfigError(f"toy2d needs at least one class, got {n_classes}")
    gen = dict(cfg.get("gen") or {})
    channels = cfg.get("channels")
    dataset = gen_dataset(
        n_train_ids=n_classes, n_test_ids=1, per_id_per_domain=per_domain,
        dims=(channels, cfg.get("height"), cfg.get("width")),
        domain_gap=gen.get("domain_gap", 2.0), seed=gen.get("seed", cfg.get("seed")),
        noise_sigma=gen.get("noise", 0.1), structure_sharpness=gen.get("sharpness", 3.0),
    )

    if n_classes >= 2:
        model, _ = fit(cfg, dataset, embed_dim=2)
    else:
        logger.warning("toy2d with a single class: no classification objective, embedding left untrained")
        model = build_model(cfg, dataset, embed_dim=2, loss="triplet-cond")

    emb = embed_all(model, dataset.train)
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    angles = np.arctan2(unit[:, 1], unit[:, 0])
    labels = np.array([s.identity for s in dataset.train])

    rows = [[k, s.identity, s.domain, unit[k, 0], unit[k, 1], angles[k]]
            for k, s in enumerate(dataset.train)]
    summary = angular_summary(angles, labels)
    logger.info(f"toy2d ({cfg.get('loss')}): {summary}")
    return ["sample", "class", "domain", "x", "y", "angle"], rows, summary


# ── Comparisons ─────────────────────────────────────────────────

ABLATION_VARIANTS = (
    ("linear+softmax", {"kind": "linear", "loss": "softmax"}),
    ("extra+softmax", {"kind": "extra", "loss": "softmax"}),
    ("rm+softmax", {"kind": "rm", "loss": "softmax"}),
    ("rgm+softmax", {"kind": "rgm", "loss": "softmax"}),
    ("rgm_nau+softmax", {"kind": "rgm_nau", "loss": "softmax"}),
    ("rgm_nau+csoftmax", {"kind": "rgm_nau", "loss": "csoftmax"}),
)
RAW_BASELINE = "raw-cosine"


def _comparison(cfg, dataset: Dataset, variants) -> Tuple[List[str], Rows]:
    far_levels = cfg.get("far_levels", FAR_LEVELS)
    rows: Rows = []
    for name, overrides in variants:
        if name == RAW_BASELINE:
            report: EvalReport = evaluate_raw(dataset.gallery, dataset.probe, far_levels)
            span = [None, None]
        else:
            model, log = fit(cfg, dataset, **overrides)
            report = evaluate(model, dataset.gallery, dataset.probe, far_levels)
            span = _loss_span(log)
        rows.append([name] + report.row(far_levels) + span)
        logger.info(f"{name}: rank1={report.rank1:.4f}")
    return ["variant"] + metric_header(far_levels) + ["first_loss", "last_loss"], rows


def run_ablation(cfg, dataset: Dataset) -> Tuple[List[str], Rows]:
    """Raw-feature baseline, then each head variant trained on the same data"""
    return _comparison(cfg, dataset, ((RAW_BASELINE, {}),) + ABLATION_VARIANTS)


def compare_losses(cfg, dataset: Dataset, losses: Sequence[str] = LOSS_IDS) -> Tuple[List[str], Rows]:
    """One row per loss id on the configured head"""
    return _comparison(cfg, dataset, [(loss, {"loss": loss}) for loss in losses])


def compare_edge_activations(cfg, dataset: Dataset) -> Tuple[List[str], Rows]:
    """Sigmoid against row-softmax edges on the configured head"""
    if cfg.get("kind") not in ("rgm", "rgm_nau"):
        raise ConfigError(f"edge activations only apply to rgm heads, not {cfg.get('kind')}")
    return _comparison(cfg, dataset, [(a, {"edge_activation": a}) for a in ("sigmoid", "softmax")])
