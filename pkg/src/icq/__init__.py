"""Interleaved composite quantization for approximate nearest neighbor search.

A composite quantizer whose codebooks are trained to specialize either
inside or outside a learned high-variance subspace, so a cheap partial
score over the specialized codebooks can prune most candidates before the
exact score is computed.
"""

from .data import (
    CodebookSet,
    CodeMatrix,
    Config,
    EmbeddedDataset,
    FormatError,
    SearchIndex,
    UnsupportedVersionError,
    ValidationError,
    load_dataset,
    load_index,
    save_dataset,
    save_index,
)
from .datagen import SynthSpec, generate
from .embedder import LinearEmbedder
from .evaluate import (
    EvalReport,
    average_precision,
    code_length_bits,
    effective_code_length,
    recall_at,
    run_benchmark,
    unseen_class_split,
)
from .moments import OnlineMoments
from .prior import (
    PriorParamGrad,
    PriorParams,
    normal_pdf,
    prior_grad,
    prior_nll,
    skew_normal_pdf,
    subspace_mask,
)
from .search import (
    OpCounter,
    QueryResult,
    build_lut,
    exact_score,
    fast_score,
    search_bruteforce,
    search_exact,
    search_two_step,
)
from .train import (
    TrainingError,
    TrainReport,
    assign_codes,
    encode_dataset,
    fast_set,
    icq_penalty,
    icq_penalty_grad,
    init_codebooks,
    quantization_loss,
    reconstruct,
    train,
)

__all__ = [
    "CodebookSet",
    "CodeMatrix",
    "Config",
    "EmbeddedDataset",
    "EvalReport",
    "FormatError",
    "LinearEmbedder",
    "OnlineMoments",
    "OpCounter",
    "PriorParamGrad",
    "PriorParams",
    "QueryResult",
    "SearchIndex",
    "SynthSpec",
    "TrainReport",
    "TrainingError",
    "UnsupportedVersionError",
    "ValidationError",
    "assign_codes",
    "average_precision",
    "build_lut",
    "code_length_bits",
    "effective_code_length",
    "encode_dataset",
    "exact_score",
    "fast_score",
    "fast_set",
    "generate",
    "icq_penalty",
    "icq_penalty_grad",
    "init_codebooks",
    "load_dataset",
    "load_index",
    "normal_pdf",
    "prior_grad",
    "prior_nll",
    "quantization_loss",
    "recall_at",
    "reconstruct",
    "run_benchmark",
    "save_dataset",
    "save_index",
    "search_bruteforce",
    "search_exact",
    "search_two_step",
    "skew_normal_pdf",
    "subspace_mask",
    "train",
    "unseen_class_split",
]
