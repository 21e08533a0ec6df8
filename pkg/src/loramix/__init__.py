"""CPU-only prediction of LoRA adapters as convex mixtures of a pre-trained bank."""

__version__ = "0.1.0"

from .adapters import (
    AdapterBank,
    AdapterLayout,
    FlatAdapter,
    GramMatrix,
    combine,
    combine_streamed,
    gram_matrix,
    load_adapter,
    save_adapter,
    unflatten,
    validate_bank,
)
from .coefficients import (
    CoefficientMatrix,
    CoefficientVector,
    attentional,
    coefficient_matrix,
    entropic_oracle,
    normalized,
    softmin,
)
from .corpus import (
    EmpiricalTokenDistribution,
    TokenizedDataset,
    TokenizedExample,
    byte_fallback_decode,
    byte_fallback_tokenize,
    load_token_dataset,
    subsample_tokens,
    to_empirical_distribution,
    write_token_dataset,
)
from .divergences import (
    SENTINEL,
    AlignmentVector,
    DistanceMatrix,
    MetricKind,
    alignment_vector,
    js,
    kl,
    load_matrix,
    median_bandwidth,
    mmd2_gaussian,
    pairwise_distance_matrix,
    save_matrix,
    wasserstein1,
)
from .mlp import MlpParameters, TrainConfig, grad_check, loss_gram, mlp_forward, neural_coefficients, train
from .textmetrics import aggregate, exact_match, rouge_l

__all__ = [name for name in dir() if not name.startswith("_")]
