"""Tri-Attention: query-key-context attention with Bi-Attention baselines."""

from __future__ import annotations

from .bi_attention import BiParams, BiVariant, bi_attend, bi_score
from .grad import GradcheckReport, gradcheck_report
from .model import Example, TanConfig, TrainingError, evaluate, init_state, tan_forward, train
from .synthetic import SyntheticSpec, gen_synthetic
from .tensor_core import CapacityError, NumericalError, ShapeError
from .tri_attention import (
    TriParams,
    TriVariant,
    ValueIntegration,
    contextual_value,
    tri_attend,
    tri_normalize,
    tri_score,
    tri_score_batched,
)

__version__ = "0.1.0"

__all__ = [
    "BiParams",
    "BiVariant",
    "CapacityError",
    "Example",
    "GradcheckReport",
    "NumericalError",
    "ShapeError",
    "SyntheticSpec",
    "TanConfig",
    "TrainingError",
    "TriParams",
    "TriVariant",
    "ValueIntegration",
    "bi_attend",
    "bi_score",
    "contextual_value",
    "evaluate",
    "gen_synthetic",
    "gradcheck_report",
    "init_state",
    "tan_forward",
    "train",
    "tri_attend",
    "tri_normalize",
    "tri_score",
    "tri_score_batched",
]
