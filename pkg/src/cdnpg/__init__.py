"""Granularity-aware transformer toolkit for paraphrase generation."""

__version__ = "0.1.0"

from .attention import (  # noqa: E402
    GAAttentionParams,
    GranularityVector,
    MaskMode,
    combine_masks,
    ga_self_attention,
    granularity_head,
    resonance_mask,
    resonance_mask_discrete,
    scope_mask,
    scope_mask_discrete,
)
from .model import EncoderOutput, ModelConfig, Transformer  # noqa: E402
from .tensor import Tensor  # noqa: E402

__all__ = [
    "GAAttentionParams",
    "GranularityVector",
    "MaskMode",
    "combine_masks",
    "ga_self_attention",
    "granularity_head",
    "resonance_mask",
    "resonance_mask_discrete",
    "scope_mask",
    "scope_mask_discrete",
    "EncoderOutput",
    "ModelConfig",
    "Transformer",
    "Tensor",
]
