"""Head variants, classifier weights, loss dispatch and checkpoints"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from config.settings import EDGE_ACTIVATIONS, HEAD_KINDS, LOSS_IDS
from config.validation import check_choice

from .errors import ConfigError, DataError, ShapeError
from .losses import (
    LossResult, MarginConfig, arcface, c_softmax, cosface, cosine_logits, normalized_softmax,
    softmax_ce, triplet_conditional,
)
from .nau import NauParams
from .numeric_core import (
    Adjoint, Rng, Tensor, linear_adjoint, matmul_adjoint, relu_adjoint, reshape_adjoint,
    scale_adjoint,
)
from .rgm import (
    RgmParams, RmParams, check_trace, nodes_from_feature_map, pair_count, rgm_backward,
    rgm_forward, rm_backward, rm_forward_traced,
)
from .tensor_io import load_tensor, save_tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.json"
PARAM_DIR = "params"


@dataclass(frozen=True)
class Objective:
    """Which loss to train with, and its margins"""

    loss: str = "csoftmax"
    margin: MarginConfig = MarginConfig()
    cosface_m: float = 0.35
    arcface_m: float = 0.5
    triplet_m: float = 0.5

    def __post_init__(self):
        ok, msg = check_choice("loss", self.loss, LOSS_IDS)
        if not ok:
            raise ConfigError(msg)

    @property
    def needs_classifier(self) -> bool:
        return self.loss != "triplet-cond"

    def angular(self, cl) -> LossResult:
        if self.loss == "nsoftmax":
            return normalized_softmax(cl, self.margin.s)
        if self.loss == "csoftmax":
            return c_softmax(cl, self.margin)
        if self.loss == "cosface":
            return cosface(cl, self.cosface_m, self.margin.s)
        if self.loss == "arcface":
            return arcface(cl, self.arcface_m, self.margin.s)
        raise ConfigError(f"{self.loss} is not an angular loss")


@dataclass
class _PlainTrace:
    """Trace for the non-relational heads (linear, extra)"""

    params: "HeadModel"
    generation: int
    single: bool
    steps: Dict[str, Adjoint] = field(repr=False, default_factory=dict)
    consumed: bool = False


class HeadModel:
    """
    An embedding head over frozen C×H×W features plus its classifier.

    kind:
        linear   flatten -> dropout -> FC (frozen-feature fine-tuning)
        extra    per-node C×C layer + ReLU, then as linear
        rm       pairwise Relation Module
        rgm      RGM without NAU
        rgm_nau  RGM with NAU
    """

    def __init__(self, kind: str, channels: int, height: int, width: int, dim: int = 16,
                 embed_dim: int = 64, num_classes: int = 0, loss: str = "csoftmax",
                 edge_activation: str = "sigmoid", reduction: int = 2, relation_dim: int = 64,
                 seed: int = 0):
        for name, value, choices in (("head kind", kind, HEAD_KINDS), ("loss", loss, LOSS_IDS),
                                     ("edge activation", edge_activation, EDGE_ACTIVATIONS)):
            ok, msg = check_choice(name, value, choices)
            if not ok:
                raise ConfigError(msg)
        if loss != "triplet-cond" and num_classes < 2:
            raise ConfigError(f"loss {loss} needs at least 2 classes, got {num_classes}")

        self.kind = kind
        self.channels, self.height, self.width = channels, height, width
        self.dim, self.embed_dim, self.num_classes = dim, embed_dim, num_classes
        self.loss = loss
        self.edge_activation = edge_activation
        self.reduction, self.relation_dim, self.seed = reduction, relation_dim, seed
        self.generation = 0

        rng = Rng(seed, stream=7)
        nodes = height * width
        self.rgm: Optional[RgmParams] = None
        self.nau: Optional[NauParams] = None
        self.rm: Optional[RmParams] = None
        self.plain: Dict[str, Tensor] = {}

        if kind in ("rgm", "rgm_nau"):
            self.rgm = RgmParams.init(rng, nodes, channels, dim, embed_dim, edge_activation)
            if kind == "rgm_nau":
                self.nau = NauParams.init(rng, nodes, reduction)
        elif kind == "rm":
            self.rm = RmParams.init(rng, nodes, channels, embed_dim, relation_dim)
        else:
            if kind == "extra":
                self.plain["extra.W"] = rng.normal((channels, channels), 1.0 / np.sqrt(channels))
            self.plain["fc.W"] = rng.normal((nodes * channels, embed_dim), 1.0 / np.sqrt(nodes * channels))
            self.plain["fc.b"] = np.zeros(embed_dim)

        self.classifier: Dict[str, Tensor] = {}
        if loss != "triplet-cond":
            self.classifier["cls.W"] = rng.normal((embed_dim, num_classes), 1.0 / np.sqrt(embed_dim))
            if loss == "softmax":
                self.classifier["cls.b"] = np.zeros(num_classes)

    # ── Parameters ──────────────────────────────────────────────

    @property
    def nodes(self) -> int:
        return self.height * self.width

    def named_tensors(self) -> Dict[str, Tensor]:
        named: Dict[str, Tensor] = {}
        for prefix, part in (("rgm", self.rgm), ("nau", self.nau), ("rm", self.rm)):
            if part is not None:
                named.update({f"{prefix}.{k}": v for k, v in part.tensors().items()})
        named.update(self.plain)
        named.update(self.classifier)
        return named

    def assign(self, tensors: Dict[str, Tensor]) -> None:
        """Replace parameter values; advances every generation counter"""
        current = self.named_tensors()
        unknown = sorted(set(tensors) - set(current))
        if unknown:
            raise ShapeError(f"unknown parameters: {unknown}")
        for name, value in tensors.items():
            if current[name].shape != np.shape(value):
                raise ShapeError(f"{name}: expected {current[name].shape}, got {np.shape(value)}")

        grouped: Dict[str, Dict[str, Tensor]] = {}
        for name, value in tensors.items():
            prefix, key = name.split(".", 1)
            grouped.setdefault(prefix, {})[key] = np.asarray(value, dtype=np.float64)
        for prefix, part in (("rgm", self.rgm), ("nau", self.nau), ("rm", self.rm)):
            if part is not None:
                part.assign(grouped.get(prefix, {}))
        for name, value in tensors.items():
            if name in self.plain:
                self.plain[name] = np.asarray(value, dtype=np.float64)
            elif name in self.classifier:
                self.classifier[name] = np.asarray(value, dtype=np.float64)
        self.generation += 1

    def dropout_shape(self, batch: int) -> Tuple[int, int]:
        if self.kind == "rm":
            return batch, pair_count(self.nodes) * self.relation_dim
        return batch, self.nodes * self.channels

    # ── Embedding ───────────────────────────────────────────────

    def embed(self, fm: Tensor, dropout_mask: Optional[Tensor] = None):
        """Forward pass; returns (embedding, trace)"""
        fm = np.asarray(fm, dtype=np.float64)
        if fm.shape[-3:] != (self.channels, self.height, self.width):
            raise ShapeError(
                f"feature maps {fm.shape[-3:]} do not match model dims "
                f"{(self.channels, self.height, self.width)}"
            )
        if self.rgm is not None:
            return rgm_forward(fm, self.rgm, self.nau, dropout_mask)
        if self.rm is not None:
            return rm_forward_traced(fm, self.rm, dropout_mask)
        return self._plain_forward(fm, dropout_mask)

    def embed_eval(self, fm: Tensor) -> Tensor:
        emb, _ = self.embed(fm)
        return emb

    def backward(self, trace, d_embedding: Tensor) -> Dict[str, Tensor]:
        """Parameter gradients, keyed like named_tensors()"""
        if self.rgm is not None:
            raw = rgm_backward(trace, d_embedding)
            grads = {f"rgm.{k}": raw[k] for k in ("W1", "We", "W2", "Wfc", "bfc")}
            if self.nau is not None:
                grads["nau.Wa"], grads["nau.Wb"] = raw["Wa"], raw["Wb"]
            return grads
        if self.rm is not None:
            raw = rm_backward(trace, d_embedding)
            return {f"rm.{k}": raw[k] for k in ("Wg", "Wout", "bout")}
        return self._plain_backward(trace, d_embedding)

    def _plain_forward(self, fm: Tensor, dropout_mask: Optional[Tensor]):
        single = fm.ndim == 3
        batch = fm[None] if single else fm
        B = batch.shape[0]
        X = nodes_from_feature_map(batch)

        steps: Dict[str, Adjoint] = {}
        if self.kind == "extra":
            steps["extra"] = matmul_adjoint(X, self.plain["extra.W"])
            steps["relu"] = relu_adjoint(steps["extra"].value)
            X = steps["relu"].value
        steps["flatten"] = reshape_adjoint(X, (B, self.nodes * self.channels))
        flat = steps["flatten"].value
        if dropout_mask is not None:
            steps["dropout"] = scale_adjoint(flat, dropout_mask.reshape(flat.shape))
            flat = steps["dropout"].value
        steps["project"] = linear_adjoint(flat, self.plain["fc.W"], self.plain["fc.b"])
        y = steps["project"].value

        trace = _PlainTrace(params=self, generation=self.generation, single=single, steps=steps)
        return (y[0] if single else y), trace

    def _plain_backward(self, trace: _PlainTrace, d_embedding: Tensor) -> Dict[str, Tensor]:
        check_trace(trace, self)
        trace.consumed = True
        steps = trace.steps
        dy = np.asarray(d_embedding, dtype=np.float64)
        if trace.single:
            dy = dy[None]

        d_flat, d_w, d_b = steps["project"](dy)
        grads = {"fc.W": d_w, "fc.b": d_b}
        if self.kind == "extra":
            if "dropout" in steps:
                (d_flat,) = steps["dropout"](d_flat)
            (d_x,) = steps["flatten"](d_flat)
            (d_lin,) = steps["relu"](d_x)
            _, grads["extra.W"] = steps["extra"](d_lin)
        return grads

    # ── Loss ────────────────────────────────────────────────────

    def loss_and_grads(self, fm: Tensor, labels, objective: Objective,
                       dropout_mask: Optional[Tensor] = None) -> Tuple[LossResult, Dict[str, Tensor], Optional[Tensor]]:
        """
        Loss on a batch and gradients for every parameter

        For the triplet loss, fm stacks anchors, positives and negatives
        (3B maps) and labels are ignored.

        Returns:
            (loss result, gradients, class scores or None)
        """
        emb, trace = self.embed(fm, dropout_mask)
        result, pullback, scores = self._head_loss(emb, labels, objective)
        d_emb, classifier_grads = pullback()
        grads = self.backward(trace, d_emb)
        grads.update(classifier_grads)
        return result, grads, scores

    def loss_value(self, fm: Tensor, labels, objective: Objective,
                   dropout_mask: Optional[Tensor] = None) -> float:
        """Forward-only loss, for finite differences"""
        emb, _ = self.embed(fm, dropout_mask)
        result, _, _ = self._head_loss(emb, labels, objective)
        return result.value

    def _head_loss(self, emb: Tensor, labels, objective: Objective):
        """(loss result, pullback to (d_emb, classifier grads), class scores)"""
        if objective.loss != self.loss:
            raise ConfigError(f"model was built for loss {self.loss}, objective is {objective.loss}")

        if objective.loss == "triplet-cond":
            if emb.shape[0] % 3:
                raise ShapeError(f"triplet batch must stack 3B maps, got {emb.shape[0]}")
            b = emb.shape[0] // 3
            result = triplet_conditional(emb[:b], emb[b:2 * b], emb[2 * b:], objective.triplet_m)
            return result, lambda: (result.grad.reshape(emb.shape), {}), None

        if objective.loss == "softmax":
            head = linear_adjoint(emb, self.classifier["cls.W"], self.classifier["cls.b"])
            result = softmax_ce(head.value, labels)

            def pullback():
                d_emb, d_w, d_b = head(result.grad)
                return d_emb, {"cls.W": d_w, "cls.b": d_b}
            return result, pullback, head.value

        cl = cosine_logits(emb, self.classifier["cls.W"], labels)
        result = objective.angular(cl)

        def pullback():
            d_emb, d_w = cl.backward(result.grad)
            return d_emb, {"cls.W": d_w}
        return result, pullback, cl.cos

    # ── Checkpoints ─────────────────────────────────────────────

    def config(self) -> Dict:
        return {
            "kind": self.kind, "channels": self.channels, "height": self.height, "width": self.width,
            "dim": self.dim, "embed_dim": self.embed_dim, "num_classes": self.num_classes,
            "loss": self.loss, "edge_activation": self.edge_activation, "reduction": self.reduction,
            "relation_dim": self.relation_dim, "seed": self.seed,
        }

    def save(self, root: Path) -> Path:
        """Write checkpoint.json plus one tensor file per parameter"""
        root = Path(root)
        names = {}
        for name, value in self.named_tensors().items():
            rel = f"{PARAM_DIR}/{name}.rgt"
            save_tensor(root / rel, value)
            names[name] = rel
        path = root / CHECKPOINT_FILE
        path.write_text(json.dumps({"model": self.config(), "params": names}, indent=2, sort_keys=True) + "\n")
        logger.info(f"Saved checkpoint to {root}")
        return path

    @classmethod
    def load(cls, root: Path) -> "HeadModel":
        root = Path(root)
        path = root / CHECKPOINT_FILE
        if not path.exists():
            raise DataError(f"checkpoint not found: {path}")
        try:
            blob = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise DataError(f"invalid checkpoint {path}: {e}")
        model = cls(**blob["model"])
        expected = set(model.named_tensors())
        if set(blob["params"]) != expected:
            raise DataError(f"checkpoint {path} parameters {sorted(blob['params'])} do not match {sorted(expected)}")
        model.assign({name: load_tensor(root / rel) for name, rel in blob["params"].items()})
        model.generation = 0
        logger.info(f"Loaded {model.kind} checkpoint from {root}")
        return model
