"""
Relational Graph Module and the pairwise Relation Module baseline.

A backbone feature map (C×H×W) is read as N = H·W node vectors. The RGM
embeds nodes to d dimensions, scores a directed edge for every ordered node
pair, propagates nodes along the edges, recalibrates them with the NAU,
re-embeds to C dimensions and adds the result back onto the input nodes
before the final projection to an L-dimensional embedding.

All forward functions accept a single map (C, H, W) or a batch (B, C, H, W).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ContractError, ShapeError
from .nau import NauParams, NauTrace, nau_backward, nau_forward_traced
from .numeric_core import (
    Adjoint, Rng, Tensor, add_adjoint, frozen, linear_adjoint, matmul, matmul_adjoint,
    relu_adjoint, reshape_adjoint, row_softmax, row_softmax_adjoint, scale_adjoint,
    sigmoid, sigmoid_adjoint,
)

logger = logging.getLogger(__name__)

FeatureMap = Tensor   # (C, H, W) or (B, C, H, W)
NodeMatrix = Tensor   # (N, D) or (B, N, D)


class EdgeActivation(str, Enum):
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class Adjacency:
    """Directed relation matrix A with its pre-activation scores E"""

    A: Tensor
    E: Tensor
    activation: EdgeActivation


# ── Parameters ──────────────────────────────────────────────────

@dataclass
class RgmParams:
    """Learnable RGM weights. `generation` advances on every update."""

    W1: Tensor                      # C × d
    We: Tensor                      # 2d
    W2: Tensor                      # d × C
    Wfc: Tensor                     # (N·C) × L
    bfc: Tensor                     # L
    edge_activation: EdgeActivation = EdgeActivation.SIGMOID
    generation: int = 0

    def __post_init__(self):
        self.edge_activation = EdgeActivation(self.edge_activation)
        C, d = self.W1.shape
        if d < 1:
            raise ShapeError("node embedding dimension must be >= 1")
        if self.We.shape != (2 * d,):
            raise ShapeError(f"We must have length 2d = {2 * d}, got {self.We.shape}")
        if self.W2.shape != (d, C):
            raise ShapeError(f"W2 must be {d}×{C}, got {self.W2.shape}")
        if self.Wfc.shape[0] % C or self.Wfc.shape[1] < 2:
            raise ShapeError(f"Wfc {self.Wfc.shape} must be (N·{C})×L with L >= 2")
        if self.bfc.shape != (self.Wfc.shape[1],):
            raise ShapeError(f"bfc must have length {self.Wfc.shape[1]}")

    @property
    def channels(self) -> int:
        return self.W1.shape[0]

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def nodes(self) -> int:
        return self.Wfc.shape[0] // self.channels

    @property
    def embed_dim(self) -> int:
        return self.Wfc.shape[1]

    @classmethod
    def init(cls, rng: Rng, nodes: int, channels: int, dim: int, embed_dim: int,
             edge_activation: str = "sigmoid") -> "RgmParams":
        """Scaled-normal initialisation (std = 1/sqrt(fan_in))"""
        return cls(
            W1=rng.normal((channels, dim), 1.0 / np.sqrt(channels)),
            We=rng.normal((2 * dim,), 1.0 / np.sqrt(2 * dim)),
            W2=rng.normal((dim, channels), 1.0 / np.sqrt(dim)),
            Wfc=rng.normal((nodes * channels, embed_dim), 1.0 / np.sqrt(nodes * channels)),
            bfc=np.zeros(embed_dim),
            edge_activation=edge_activation,
        )

    def tensors(self) -> Dict[str, Tensor]:
        return {"W1": self.W1, "We": self.We, "W2": self.W2, "Wfc": self.Wfc, "bfc": self.bfc}

    def assign(self, tensors: Dict[str, Tensor]) -> None:
        for name, value in tensors.items():
            if getattr(self, name).shape != value.shape:
                raise ShapeError(f"{name}: expected {getattr(self, name).shape}, got {value.shape}")
            setattr(self, name, value)
        self.generation += 1


@dataclass
class RmParams:
    """Relation Module weights: shared pair embedding and output projection"""

    Wg: Tensor      # 2C × L_r
    Wout: Tensor    # (P·L_r) × L
    bout: Tensor    # L
    generation: int = 0

    @property
    def channels(self) -> int:
        return self.Wg.shape[0] // 2

    @property
    def relation_dim(self) -> int:
        return self.Wg.shape[1]

    @classmethod
    def init(cls, rng: Rng, nodes: int, channels: int, embed_dim: int, relation_dim: int = 64) -> "RmParams":
        pairs = pair_count(nodes)
        return cls(
            Wg=rng.normal((2 * channels, relation_dim), 1.0 / np.sqrt(2 * channels)),
            Wout=rng.normal((pairs * relation_dim, embed_dim), 1.0 / np.sqrt(pairs * relation_dim)),
            bout=np.zeros(embed_dim),
        )

    def tensors(self) -> Dict[str, Tensor]:
        return {"Wg": self.Wg, "Wout": self.Wout, "bout": self.bout}

    def assign(self, tensors: Dict[str, Tensor]) -> None:
        for name, value in tensors.items():
            setattr(self, name, value)
        self.generation += 1


# ── Node layout ─────────────────────────────────────────────────

def _batched(fm: FeatureMap) -> Tuple[Tensor, bool]:
    if fm.ndim == 3:
        return fm[None], True
    if fm.ndim == 4:
        return fm, False
    raise ShapeError(f"feature map must be C×H×W or B×C×H×W, got shape {fm.shape}")


def nodes_from_feature_map(fm: FeatureMap) -> NodeMatrix:
    """Row i is the channel vector at spatial position i, row-major over (h, w)"""
    *lead, C, H, W = fm.shape
    return np.swapaxes(fm.reshape(*lead, C, H * W), -1, -2)


def feature_map_from_nodes(nodes: NodeMatrix, height: int, width: int) -> FeatureMap:
    *lead, N, C = nodes.shape
    if N != height * width:
        raise ShapeError(f"{N} nodes cannot fill a {height}×{width} map")
    return np.ascontiguousarray(np.swapaxes(nodes, -1, -2)).reshape(*lead, C, height, width)


# ── Graph operations ────────────────────────────────────────────

def embed_nodes(nodes: NodeMatrix, W1: Tensor) -> NodeMatrix:
    return matmul(nodes, W1)


def _split_edge_weights(nodes: NodeMatrix, We: Tensor) -> Tuple[Tensor, Tensor]:
    d = nodes.shape[-1]
    if We.shape != (2 * d,):
        raise ShapeError(f"We must have length 2d = {2 * d}, got {We.shape}")
    return We[:d], We[d:]


def edge_logits(nodes: NodeMatrix, We: Tensor) -> Tensor:
    """E_ij = We·[n_i, n_j]; the ordered concatenation makes E directed"""
    w_src, w_dst = _split_edge_weights(nodes, We)
    return (nodes @ w_src)[..., :, None] + (nodes @ w_dst)[..., None, :]


def edge_logits_adjoint(nodes: NodeMatrix, We: Tensor) -> Adjoint:
    w_src, w_dst = _split_edge_weights(nodes, We)
    E = frozen(edge_logits(nodes, We))

    def pullback(dE: Tensor) -> Tuple[Tensor, Tensor]:
        d_src = dE.sum(axis=-1)
        d_dst = dE.sum(axis=-2)
        d_nodes = d_src[..., None] * w_src + d_dst[..., None] * w_dst
        N, d = nodes.shape[-2:]
        flat_nodes = nodes.reshape(-1, N, d)
        d_we = np.concatenate([
            np.einsum("bn,bnd->d", d_src.reshape(-1, N), flat_nodes),
            np.einsum("bn,bnd->d", d_dst.reshape(-1, N), flat_nodes),
        ])
        return d_nodes, d_we

    return Adjoint(E, pullback)


def activate_edges(E: Tensor, activation) -> Tensor:
    if EdgeActivation(activation) is EdgeActivation.SOFTMAX:
        return row_softmax(E)
    return sigmoid(E)


def _activate_edges_adjoint(E: Tensor, activation: EdgeActivation) -> Adjoint:
    if activation is EdgeActivation.SOFTMAX:
        return row_softmax_adjoint(E)
    return sigmoid_adjoint(E)


def edge_scores(nodes: NodeMatrix, We: Tensor, activation="sigmoid") -> Adjacency:
    activation = EdgeActivation(activation)
    E = edge_logits(nodes, We)
    return Adjacency(A=activate_edges(E, activation), E=E, activation=activation)


def propagate(A: Tensor, nodes: NodeMatrix) -> NodeMatrix:
    """n*_i = sum_k A_ik n_k"""
    if A.shape[-1] != A.shape[-2] or A.shape[-1] != nodes.shape[-2]:
        raise ShapeError(f"adjacency {A.shape} does not match {nodes.shape[-2]} nodes")
    return matmul(A, nodes)


# ── RGM forward / backward ──────────────────────────────────────

@dataclass
class RgmTrace:
    """Everything rgm_backward needs, plus the intermediates the exporters read"""

    params: RgmParams
    generation: int
    single: bool
    height: int
    width: int
    nodes: Tensor                        # input nodes, B × N × C
    adjacency: Adjacency
    propagated: Tensor                   # B × N × d
    out_nodes: Tensor                    # post-residual, B × N × C
    nau: Optional[NauTrace]
    steps: Dict[str, Adjoint] = field(repr=False, default_factory=dict)
    consumed: bool = False

    @property
    def scales(self) -> Optional[Tensor]:
        """(N,) for a single-map forward, else (B, N)"""
        if self.nau is None:
            return None
        return self.nau.scales[0] if self.single else self.nau.scales


def rgm_forward(fm: FeatureMap, p: RgmParams, q: Optional[NauParams] = None,
                dropout_mask: Optional[Tensor] = None) -> Tuple[Tensor, RgmTrace]:
    """
    Embed feature maps through the RGM head

    Args:
        fm: C×H×W map or B×C×H×W batch
        p: RGM weights
        q: NAU weights; None skips recalibration
        dropout_mask: inverted-dropout mask over the flattened nodes (training only)

    Returns:
        (embedding of shape L or B×L, trace)
    """
    batch, single = _batched(np.asarray(fm, dtype=np.float64))
    B, C, H, W = batch.shape
    if C != p.channels or H * W != p.nodes:
        raise ShapeError(f"feature map {C}×{H}×{W} does not fit params for C={p.channels}, N={p.nodes}")

    steps: Dict[str, Adjoint] = {}
    X = nodes_from_feature_map(batch)

    steps["embed"] = matmul_adjoint(X, p.W1)
    h = steps["embed"].value
    steps["edges"] = edge_logits_adjoint(h, p.We)
    steps["activate"] = _activate_edges_adjoint(steps["edges"].value, p.edge_activation)
    A = steps["activate"].value
    steps["propagate"] = matmul_adjoint(A, h)
    P = steps["propagate"].value

    nau_trace = None
    if q is not None:
        recalibrated, nau_trace = nau_forward_traced(P, q)
    else:
        recalibrated = P

    steps["reembed"] = matmul_adjoint(recalibrated, p.W2)
    steps["residual"] = add_adjoint(X, steps["reembed"].value)
    out_nodes = steps["residual"].value
    steps["flatten"] = reshape_adjoint(out_nodes, (B, p.nodes * C))
    flat = steps["flatten"].value
    if dropout_mask is not None:
        steps["dropout"] = scale_adjoint(flat, dropout_mask.reshape(flat.shape))
        flat = steps["dropout"].value
    steps["project"] = linear_adjoint(flat, p.Wfc, p.bfc)
    y = steps["project"].value

    trace = RgmTrace(
        params=p, generation=p.generation, single=single, height=H, width=W,
        nodes=X, adjacency=Adjacency(A=A, E=steps["edges"].value, activation=p.edge_activation),
        propagated=P, out_nodes=out_nodes, nau=nau_trace, steps=steps,
    )
    return (y[0] if single else y), trace


def check_trace(trace, params) -> None:
    """Reject consumed traces and traces whose params changed since forward"""
    if trace.consumed:
        raise ContractError("trace already consumed by a backward pass")
    if params.generation != trace.generation:
        raise ContractError(
            f"stale trace: params at generation {params.generation}, forward ran at {trace.generation}"
        )


def rgm_backward(trace: RgmTrace, d_embedding: Tensor) -> Dict[str, Tensor]:
    """
    Exact adjoint of rgm_forward

    Returns:
        Gradients keyed W1, We, W2, Wfc, bfc, input (plus Wa, Wb with NAU)
    """
    check_trace(trace, trace.params)
    trace.consumed = True
    steps = trace.steps

    dy = np.asarray(d_embedding, dtype=np.float64)
    if trace.single:
        dy = dy[None]

    d_flat, d_wfc, d_bfc = steps["project"](dy)
    if "dropout" in steps:
        (d_flat,) = steps["dropout"](d_flat)
    (d_out,) = steps["flatten"](d_flat)
    d_x, d_r = steps["residual"](d_out)
    d_recal, d_w2 = steps["reembed"](d_r)

    grads: Dict[str, Tensor] = {}
    if trace.nau is not None:
        nau_grads = nau_backward(trace.nau, d_recal)
        d_prop = nau_grads["input"]
        grads["Wa"], grads["Wb"] = nau_grads["Wa"], nau_grads["Wb"]
    else:
        d_prop = d_recal

    d_a, d_h = steps["propagate"](d_prop)
    (d_e,) = steps["activate"](d_a)
    d_h_edges, d_we = steps["edges"](d_e)
    d_x_embed, d_w1 = steps["embed"](d_h + d_h_edges)

    d_input = feature_map_from_nodes(d_x + d_x_embed, trace.height, trace.width)
    grads.update({
        "W1": d_w1, "We": d_we, "W2": d_w2, "Wfc": d_wfc, "bfc": d_bfc,
        "input": d_input[0] if trace.single else d_input,
    })
    return grads


# ── Relation Module (pairwise baseline) ─────────────────────────

def pair_count(nodes: int) -> int:
    return nodes * (nodes + 1) // 2


def pair_indices(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unordered pairs i <= j, row-major: (0,0), (0,1), ..., (1,1), ..."""
    return np.triu_indices(nodes)


@dataclass
class RmTrace:
    params: RmParams
    generation: int
    single: bool
    height: int
    width: int
    pairs: Tuple[np.ndarray, np.ndarray]
    steps: Dict[str, Adjoint] = field(repr=False, default_factory=dict)
    consumed: bool = False


def rm_forward_traced(fm: FeatureMap, p: RmParams,
                      dropout_mask: Optional[Tensor] = None) -> Tuple[Tensor, RmTrace]:
    batch, single = _batched(np.asarray(fm, dtype=np.float64))
    B, C, H, W = batch.shape
    if C != p.channels:
        raise ShapeError(f"feature map has {C} channels, RM params expect {p.channels}")
    N = H * W
    P = pair_count(N)
    if p.Wout.shape[0] != P * p.relation_dim:
        raise ShapeError(f"Wout has {p.Wout.shape[0]} rows, {N} nodes need {P * p.relation_dim}")

    X = nodes_from_feature_map(batch)
    ii, jj = pair_indices(N)
    pairs = np.concatenate([X[:, ii, :], X[:, jj, :]], axis=-1)  # B × P × 2C

    steps: Dict[str, Adjoint] = {}
    steps["pair_embed"] = matmul_adjoint(pairs, p.Wg)
    steps["relu"] = relu_adjoint(steps["pair_embed"].value)
    steps["flatten"] = reshape_adjoint(steps["relu"].value, (B, P * p.relation_dim))
    flat = steps["flatten"].value
    if dropout_mask is not None:
        steps["dropout"] = scale_adjoint(flat, dropout_mask.reshape(flat.shape))
        flat = steps["dropout"].value
    steps["project"] = linear_adjoint(flat, p.Wout, p.bout)
    y = steps["project"].value

    trace = RmTrace(params=p, generation=p.generation, single=single, height=H, width=W,
                    pairs=(ii, jj), steps=steps)
    return (y[0] if single else y), trace


def rm_forward(fm: FeatureMap, p: RmParams) -> Tensor:
    """Embed every unordered node pair through the shared Wg, then project to L"""
    y, _ = rm_forward_traced(fm, p)
    return y


def rm_backward(trace: RmTrace, d_embedding: Tensor) -> Dict[str, Tensor]:
    check_trace(trace, trace.params)
    trace.consumed = True
    steps = trace.steps

    dy = np.asarray(d_embedding, dtype=np.float64)
    if trace.single:
        dy = dy[None]

    d_flat, d_wout, d_bout = steps["project"](dy)
    if "dropout" in steps:
        (d_flat,) = steps["dropout"](d_flat)
    (d_rel,) = steps["flatten"](d_flat)
    (d_lin,) = steps["relu"](d_rel)
    d_pairs, d_wg = steps["pair_embed"](d_lin)

    ii, jj = trace.pairs
    C = trace.params.channels
    B = d_pairs.shape[0]
    d_x = np.zeros((B, trace.height * trace.width, C))
    np.add.at(d_x, (slice(None), ii), d_pairs[..., :C])
    np.add.at(d_x, (slice(None), jj), d_pairs[..., C:])

    d_input = feature_map_from_nodes(d_x, trace.height, trace.width)
    return {"Wg": d_wg, "Wout": d_wout, "bout": d_bout,
            "input": d_input[0] if trace.single else d_input}
