"""
Relgraph Core Module
Relational graph embedding head, NAU, margin losses, synthetic data, training and evaluation
"""

from .errors import (
    RelGraphError, ShapeError, DegenerateInputError, ConfigError, UsageError,
    DataError, FormatError, ContractError, NumericalFailure,
)
from .numeric_core import Rng, Adjoint
from .rgm import RgmParams, RmParams, rgm_forward, rgm_backward, rm_forward, rm_backward, edge_scores, propagate
from .nau import NauParams, nau_forward, nau_backward
from .losses import (
    MarginConfig, LossResult, cosine_logits, softmax_ce, normalized_softmax, c_softmax,
    cosface, arcface, triplet_conditional, margin_map, band_width,
)
from .synthdata import Dataset, Sample, gen_dataset, save_dataset, load_dataset
from .model import HeadModel, Objective
from .trainer import TrainConfig, sgd_momentum_step, train
from .evaluation import EvalReport, cosine_similarity_matrix, rank1, vr_at_far, evaluate, evaluate_raw

__all__ = [
    "RelGraphError", "ShapeError", "DegenerateInputError", "ConfigError", "UsageError",
    "DataError", "FormatError", "ContractError", "NumericalFailure",
    "Rng", "Adjoint",
    "RgmParams", "RmParams", "rgm_forward", "rgm_backward", "rm_forward", "rm_backward",
    "edge_scores", "propagate",
    "NauParams", "nau_forward", "nau_backward",
    "MarginConfig", "LossResult", "cosine_logits", "softmax_ce", "normalized_softmax",
    "c_softmax", "cosface", "arcface", "triplet_conditional", "margin_map", "band_width",
    "Dataset", "Sample", "gen_dataset", "save_dataset", "load_dataset",
    "HeadModel", "Objective",
    "TrainConfig", "sgd_momentum_step", "train",
    "EvalReport", "cosine_similarity_matrix", "rank1", "vr_at_far", "evaluate", "evaluate_raw",
]
