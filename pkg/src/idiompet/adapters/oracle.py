"""Gold-label oracle backend for validating pipeline wiring end to end."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..corpus import Example
from ..errors import AdapterError
from ..labels import Label
from ..pvp import PatternVerbalizerPair, render
from .base import MlmAdapter
from .vocab import MASK_TOKEN, Vocabulary, SPECIAL_TOKENS

GOLD_LOGIT = 10.0


class OracleAdapter(MlmAdapter):
    """Emits +10 for the gold verbalizer token and -10 for the other.

    Not trainable; exists so that every stage of the PET/iPET machinery can be
    checked against known-perfect predictions.
    """

    backend_kind = "oracle"
    trainable = False

    def __init__(self, embedding_dim: int = 8):
        super().__init__(Vocabulary(SPECIAL_TOKENS), MASK_TOKEN, embedding_dim)

    def word_token_ids(self, word: str) -> list[int]:
        # every word is a single token; register lazily so ids are stable
        if word not in self.vocab:
            self.vocab.add_token(word)
        return [self.vocab.index[word]]

    def label_logits(
        self, pvp: PatternVerbalizerPair, examples: Sequence[Example]
    ) -> np.ndarray:
        out = np.empty((len(examples), 2), dtype=np.float64)
        for row, ex in enumerate(examples):
            render(pvp, ex, self.mask_marker)  # surface the same render errors as real backends
            if ex.label is None:
                raise AdapterError(f"oracle backend needs a gold label (example {ex.id!r})")
            if ex.label is Label.IDIOMATIC:
                out[row] = (-GOLD_LOGIT, GOLD_LOGIT)
            else:
                out[row] = (GOLD_LOGIT, -GOLD_LOGIT)
        return out
