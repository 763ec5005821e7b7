"""
Gallery/probe evaluation: rank-1 identification and VR@FAR verification.

Thresholds follow the conservative rule: at each FAR level the threshold is
the smallest impostor score t with #(impostor >= t) / #impostor <= FAR.
When even the top impostor score is too frequent, t moves just above it.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from config.settings import FAR_LEVELS, RELGRAPH_THREADS

from .errors import DataError, DegenerateInputError, ShapeError
from .numeric_core import Tensor
from .synthdata import NIR, VIS, Sample, stack_features

logger = logging.getLogger(__name__)

EMBED_CHUNK = 64
NORM_FLOOR = 1e-12


@dataclass
class EvalReport:
    rank1: float
    vr_at_far: Dict[float, float]
    thresholds: Dict[float, float]
    n_genuine: int
    n_impostor: int
    extra: Dict[str, float] = field(default_factory=dict)

    def row(self, far_levels: Sequence[float] = FAR_LEVELS) -> List[float]:
        return [self.rank1] + [self.vr_at_far[f] for f in far_levels]


def far_column(far: float) -> str:
    """Column name for a FAR level, e.g. vr@0.1%"""
    return f"vr@{far * 100:g}%"


# ── Metrics ─────────────────────────────────────────────────────

def cosine_similarity_matrix(probe_emb: Tensor, gallery_emb: Tensor) -> Tensor:
    """P×G matrix of pairwise cosines"""
    probe_emb = np.asarray(probe_emb, dtype=np.float64)
    gallery_emb = np.asarray(gallery_emb, dtype=np.float64)
    if probe_emb.ndim != 2 or gallery_emb.ndim != 2 or probe_emb.shape[1] != gallery_emb.shape[1]:
        raise ShapeError(f"similarity needs P×L and G×L, got {probe_emb.shape} and {gallery_emb.shape}")
    p_norm = np.linalg.norm(probe_emb, axis=1, keepdims=True)
    g_norm = np.linalg.norm(gallery_emb, axis=1, keepdims=True)
    if np.any(p_norm < NORM_FLOOR) or np.any(g_norm < NORM_FLOOR):
        raise DegenerateInputError("zero-norm embedding in similarity matrix")
    return (probe_emb / p_norm) @ (gallery_emb / g_norm).T


def _check_ids(sim: Tensor, probe_ids, gallery_ids):
    probe_ids = np.asarray(probe_ids)
    gallery_ids = np.asarray(gallery_ids)
    if sim.shape != (len(probe_ids), len(gallery_ids)):
        raise ShapeError(f"similarity {sim.shape} vs {len(probe_ids)} probes × {len(gallery_ids)} gallery")
    return probe_ids, gallery_ids


def rank1(sim: Tensor, probe_ids, gallery_ids) -> float:
    """Fraction of probes whose best gallery match has the right id; ties go to the lowest gallery index"""
    sim = np.asarray(sim, dtype=np.float64)
    probe_ids, gallery_ids = _check_ids(sim, probe_ids, gallery_ids)
    missing = sorted(set(probe_ids.tolist()) - set(gallery_ids.tolist()))
    if missing:
        raise DataError(f"probe identities missing from gallery: {missing}")
    if len(probe_ids) == 0:
        raise DataError("no probes to score")
    best = np.argmax(sim, axis=1)
    return float(np.mean(gallery_ids[best] == probe_ids))


def far_threshold(impostor: Tensor, far: float) -> float:
    """Smallest impostor score t with #(impostor >= t) / #impostor <= far"""
    ascending = np.sort(impostor)
    n = ascending.size
    candidates = np.unique(ascending)
    counts = n - np.searchsorted(ascending, candidates, side="left")
    ok = np.flatnonzero(counts / n <= far)
    if ok.size == 0:
        return float(np.nextafter(candidates[-1], np.inf))
    return float(candidates[ok[0]])


def split_scores(sim: Tensor, probe_ids, gallery_ids):
    """(genuine scores, impostor scores) in row-major order"""
    sim = np.asarray(sim, dtype=np.float64)
    probe_ids, gallery_ids = _check_ids(sim, probe_ids, gallery_ids)
    same = probe_ids[:, None] == gallery_ids[None, :]
    return sim[same], sim[~same]


def vr_at_far(sim: Tensor, probe_ids, gallery_ids, far_levels: Sequence[float] = FAR_LEVELS):
    """
    Verification rate at each FAR level

    Returns:
        (far -> VR, far -> threshold used)
    """
    genuine, impostor = split_scores(sim, probe_ids, gallery_ids)
    if genuine.size == 0:
        raise DataError("no genuine pairs: every probe id is absent from the gallery")
    if impostor.size == 0:
        raise DataError("no impostor pairs: gallery holds a single identity")

    rates: Dict[float, float] = {}
    thresholds: Dict[float, float] = {}
    for far in far_levels:
        if impostor.size * far < 1:
            logger.warning(f"FAR {far:g} is below the impostor granularity 1/{impostor.size}")
        t = far_threshold(impostor, far)
        thresholds[far] = t
        rates[far] = float(np.mean(genuine >= t))
    return rates, thresholds


# ── Embedding + protocol ────────────────────────────────────────

def embed_all(model, samples: Sequence[Sample], chunk: int = EMBED_CHUNK) -> Tensor:
    """Evaluation embeddings, computed in chunks across RELGRAPH_THREADS workers"""
    if not samples:
        raise DataError("nothing to embed")
    features = stack_features(list(samples))
    chunks = [features[i:i + chunk] for i in range(0, len(features), chunk)]
    if RELGRAPH_THREADS == 1 or len(chunks) == 1:
        parts = [model.embed_eval(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=min(RELGRAPH_THREADS, len(chunks))) as pool:
            parts = list(pool.map(model.embed_eval, chunks))
    return np.concatenate(parts)


def _report(sim: Tensor, probe_ids, gallery_ids, far_levels) -> EvalReport:
    rates, thresholds = vr_at_far(sim, probe_ids, gallery_ids, far_levels)
    genuine, impostor = split_scores(sim, probe_ids, gallery_ids)
    return EvalReport(
        rank1=rank1(sim, probe_ids, gallery_ids), vr_at_far=rates, thresholds=thresholds,
        n_genuine=int(genuine.size), n_impostor=int(impostor.size),
    )


def evaluate(model, gallery: Sequence[Sample], probe: Sequence[Sample],
             far_levels: Sequence[float] = FAR_LEVELS) -> EvalReport:
    """Embed gallery and probe with the head, then score"""
    sim = cosine_similarity_matrix(embed_all(model, probe), embed_all(model, gallery))
    report = _report(sim, [s.identity for s in probe], [s.identity for s in gallery], far_levels)
    logger.info(f"Evaluated {len(probe)} probes against {len(gallery)} gallery: rank1={report.rank1:.4f}")
    return report


def evaluate_raw(gallery: Sequence[Sample], probe: Sequence[Sample],
                 far_levels: Sequence[float] = FAR_LEVELS) -> EvalReport:
    """Score the frozen features directly (flattened), with no head"""
    g = stack_features(list(gallery)).reshape(len(gallery), -1)
    p = stack_features(list(probe)).reshape(len(probe), -1)
    sim = cosine_similarity_matrix(p, g)
    return _report(sim, [s.identity for s in probe], [s.identity for s in gallery], far_levels)


def domain_gap_report(samples: Sequence[Sample]) -> Dict[str, float]:
    """
    Raw-feature rank-1 within and across domains

    The first VIS sample per identity is the gallery; probes are the other VIS
    samples (same-domain) or every NIR sample (cross-domain).
    """
    gallery: Dict[int, Sample] = {}
    same, cross = [], []
    for s in samples:
        if s.domain == VIS and s.identity not in gallery:
            gallery[s.identity] = s
        elif s.domain == VIS:
            same.append(s)
        elif s.domain == NIR:
            cross.append(s)
    if len(gallery) < 2:
        raise DataError("domain gap report needs VIS samples for at least two identities")

    g = list(gallery.values())
    g_emb = stack_features(g).reshape(len(g), -1)
    g_ids = [s.identity for s in g]

    def score(probes: List[Sample]) -> float:
        probes = [s for s in probes if s.identity in gallery]
        if not probes:
            return float("nan")
        p_emb = stack_features(probes).reshape(len(probes), -1)
        return rank1(cosine_similarity_matrix(p_emb, g_emb), [s.identity for s in probes], g_ids)

    report = {"same_domain_rank1": score(same), "cross_domain_rank1": score(cross)}
    logger.info(f"Raw-feature domain gap: {report}")
    return report
