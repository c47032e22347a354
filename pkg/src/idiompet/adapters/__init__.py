"""Masked-language-model backends behind one contract."""

from .base import (
    ClassDistribution,
    LabelTokenIds,
    MlmAdapter,
    TrainHyper,
    class_probs,
    class_probs_batch,
    fine_tune,
    parameter_fingerprint,
    read_checkpoint_metadata,
    save_checkpoint,
    two_way_softmax,
    verbalizer_token_ids,
)
from .oracle import OracleAdapter
from .tiny import TinyMlmAdapter
from .vocab import MASK_TOKEN, PAD_TOKEN, UNK_TOKEN, Vocabulary, build_vocabulary

__all__ = [
    "ClassDistribution",
    "LabelTokenIds",
    "MlmAdapter",
    "TrainHyper",
    "class_probs",
    "class_probs_batch",
    "fine_tune",
    "parameter_fingerprint",
    "read_checkpoint_metadata",
    "save_checkpoint",
    "two_way_softmax",
    "verbalizer_token_ids",
    "OracleAdapter",
    "TinyMlmAdapter",
    "Vocabulary",
    "build_vocabulary",
    "MASK_TOKEN",
    "PAD_TOKEN",
    "UNK_TOKEN",
]
