"""Planning model: context encoder, flow-matching action expert with sparse
cross-attention bridging and historical initialization, motion codebook, and
the autoregressive token head."""

from driveflow.policy.codebook import ActionCodebook, detokenize, fit_codebook, tokenize
from driveflow.policy.flow import (
    euler_flow,
    fm_interpolate,
    sample_tau,
    select_sparse_layers,
)
from driveflow.policy.model import EncodedContext, InferenceResult, PlanningModel
from driveflow.policy.vocab import TokenVocabulary

__all__ = [
    "ActionCodebook",
    "EncodedContext",
    "InferenceResult",
    "PlanningModel",
    "TokenVocabulary",
    "detokenize",
    "euler_flow",
    "fit_codebook",
    "fm_interpolate",
    "sample_tau",
    "select_sparse_layers",
    "tokenize",
]
