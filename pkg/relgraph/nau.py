"""
Node Attention Unit.

Squeezes every propagated node to a scalar by channel averaging, excites the
N-vector of node summaries through a bottleneck of width ceil(N/r), and
rescales each node by its sigmoid gate. Unlike channel attention, the gate is
per node, so the weights are tied to node positions.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .errors import ContractError, ShapeError
from .numeric_core import (
    Adjoint, Rng, Tensor, channel_mean_adjoint, matmul_adjoint, relu_adjoint,
    scale_rows_adjoint, sigmoid_adjoint,
)

NodeScales = Tensor   # (N,) or (B, N), entries in (0, 1)


@dataclass
class NauParams:
    Wa: Tensor          # N × ceil(N/r)
    Wb: Tensor          # ceil(N/r) × N
    r: int = 2
    generation: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ShapeError(f"reduction ratio must be >= 1, got {self.r}")
        N, K = self.Wa.shape
        if K != bottleneck_width(N, self.r) or self.Wb.shape != (K, N):
            raise ShapeError(
                f"NAU weights {self.Wa.shape}/{self.Wb.shape} inconsistent with N={N}, r={self.r}"
            )

    @property
    def nodes(self) -> int:
        return self.Wa.shape[0]

    @classmethod
    def init(cls, rng: Rng, nodes: int, r: int = 2) -> "NauParams":
        k = bottleneck_width(nodes, r)
        return cls(
            Wa=rng.normal((nodes, k), 1.0 / np.sqrt(nodes)),
            Wb=rng.normal((k, nodes), 1.0 / np.sqrt(k)),
            r=r,
        )

    @classmethod
    def frozen_gate(cls, nodes: int, r: int = 2) -> "NauParams":
        """All-zero weights: every scale is exactly 0.5"""
        k = bottleneck_width(nodes, r)
        return cls(Wa=np.zeros((nodes, k)), Wb=np.zeros((k, nodes)), r=r)

    def tensors(self) -> Dict[str, Tensor]:
        return {"Wa": self.Wa, "Wb": self.Wb}

    def assign(self, tensors: Dict[str, Tensor]) -> None:
        for name, value in tensors.items():
            setattr(self, name, value)
        self.generation += 1


def bottleneck_width(nodes: int, r: int) -> int:
    return math.ceil(nodes / r)


@dataclass
class NauTrace:
    params: NauParams
    generation: int
    single: bool
    scales: NodeScales
    steps: Dict[str, Adjoint] = field(repr=False, default_factory=dict)
    consumed: bool = False


def nau_forward_traced(nodes: Tensor, q: NauParams) -> Tuple[Tensor, NauTrace]:
    single = nodes.ndim == 2
    batch = nodes[None] if single else nodes
    if batch.shape[-2] != q.nodes:
        raise ShapeError(f"NAU built for {q.nodes} nodes, got {batch.shape[-2]}")

    steps: Dict[str, Adjoint] = {}
    steps["squeeze"] = channel_mean_adjoint(batch)
    steps["reduce"] = matmul_adjoint(steps["squeeze"].value, q.Wa)
    steps["relu"] = relu_adjoint(steps["reduce"].value)
    steps["expand"] = matmul_adjoint(steps["relu"].value, q.Wb)
    steps["gate"] = sigmoid_adjoint(steps["expand"].value)
    s = steps["gate"].value
    steps["recalibrate"] = scale_rows_adjoint(batch, s)
    out = steps["recalibrate"].value

    trace = NauTrace(params=q, generation=q.generation, single=single,
                     scales=s[0] if single else s, steps=steps)
    return (out[0] if single else out), trace


def nau_forward(nodes: Tensor, q: NauParams) -> Tuple[Tensor, NodeScales]:
    """
    Recalibrate nodes by their learned importance

    Args:
        nodes: N×d propagated nodes (or B×N×d)
        q: NAU weights

    Returns:
        (rescaled nodes, node scales s)
    """
    out, trace = nau_forward_traced(nodes, q)
    return out, trace.scales


def nau_backward(trace: NauTrace, d_out: Tensor) -> Dict[str, Tensor]:
    """Adjoint of nau_forward, including the path through s into every row"""
    if trace.consumed:
        raise ContractError("NAU trace already consumed by a backward pass")
    if trace.params.generation != trace.generation:
        raise ContractError("stale NAU trace: weights changed after the forward pass")
    trace.consumed = True
    steps = trace.steps

    d_out = np.asarray(d_out, dtype=np.float64)
    if trace.single:
        d_out = d_out[None]

    d_rows, d_s = steps["recalibrate"](d_out)
    (d_v,) = steps["gate"](d_s)
    d_r, d_wb = steps["expand"](d_v)
    (d_u,) = steps["relu"](d_r)
    d_z, d_wa = steps["reduce"](d_u)
    (d_pool,) = steps["squeeze"](d_z)

    d_input = d_rows + d_pool
    return {"Wa": d_wa, "Wb": d_wb, "input": d_input[0] if trace.single else d_input}
