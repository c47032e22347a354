"""Backend contract: tokenize cloze inputs, expose mask logits, fine-tune.

Every backend reduces to one primitive, :meth:`MlmAdapter.label_logits`: the
mask-position logits of the two verbalizer tokens for a batch of rendered
examples. Class probabilities are the two-way softmax of those logits, so all
decision paths share one code path regardless of backend.
"""

from __future__ import annotations

import abc
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..corpus import Example
from ..errors import AdapterError, CapabilityError, CheckpointError, VerbalizerError
from ..labels import Label
from ..pvp import PatternVerbalizerPair
from .vocab import Vocabulary

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ClassDistribution:
    """Normalized probability over {idiomatic, literal} for one example."""

    p_idiomatic: float
    p_literal: float

    def __post_init__(self) -> None:
        for p in (self.p_idiomatic, self.p_literal):
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise ValueError(f"probability out of range: {p}")
        if abs(self.p_idiomatic + self.p_literal - 1.0) > 1e-9:
            raise ValueError(
                f"probabilities must sum to 1, got {self.p_idiomatic + self.p_literal}"
            )

    def argmax(self) -> Label:
        # exact tie breaks toward literal (documented decision rule)
        return Label.IDIOMATIC if self.p_idiomatic > self.p_literal else Label.LITERAL

    @property
    def confidence(self) -> float:
        return max(self.p_idiomatic, self.p_literal)


def two_way_softmax(literal_logit: float, idiom_logit: float) -> ClassDistribution:
    """Softmax over the two label-token logits, computed shift-stably in float64."""
    m = max(literal_logit, idiom_logit)
    e_lit = math.exp(float(literal_logit) - m)
    e_idm = math.exp(float(idiom_logit) - m)
    z = e_lit + e_idm
    return ClassDistribution(p_idiomatic=e_idm / z, p_literal=e_lit / z)


@dataclass(frozen=True)
class LabelTokenIds:
    literal_id: int
    idiom_id: int

    def __post_init__(self) -> None:
        if self.literal_id == self.idiom_id:
            raise VerbalizerError("verbalizer tokens map to the same vocabulary id")


@dataclass(frozen=True)
class TrainHyper:
    """Gradient fine-tuning knobs; defaults sized for the tiny CPU backend."""

    steps: int = 200
    batch_size: int = 16
    learning_rate: float = 3e-3
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class MlmAdapter(abc.ABC):
    """Uniform handle over a masked-language-model backend."""

    backend_kind: str = "abstract"
    trainable: bool = False

    def __init__(self, vocab: Vocabulary, mask_marker: str, embedding_dim: int):
        if mask_marker not in vocab:
            raise AdapterError(f"mask marker {mask_marker!r} missing from vocabulary")
        self.vocab = vocab
        self.mask_marker = mask_marker
        self.embedding_dim = embedding_dim
        self.state_version = 0
        self.loss_history: list[float] = []

    # -- tokenization ------------------------------------------------------
    def word_token_ids(self, word: str) -> list[int]:
        return self.vocab.word_token_ids(word)

    def tokenize(self, text: str) -> list[int]:
        return self.vocab.encode(text)

    # -- inference ---------------------------------------------------------
    @abc.abstractmethod
    def label_logits(
        self, pvp: PatternVerbalizerPair, examples: Sequence[Example]
    ) -> np.ndarray:
        """Mask-position logits, shape (n, 2), columns (literal, idiomatic)."""

    # -- training ----------------------------------------------------------
    def fine_tune_impl(
        self,
        pvp: PatternVerbalizerPair,
        trainset: Sequence[Example],
        hyper: TrainHyper,
        seed: int,
        soft_targets: Optional[Sequence[ClassDistribution]] = None,
    ) -> list[float]:
        raise CapabilityError(f"{self.backend_kind} backend is not trainable")

    def parameter_state(self) -> bytes:
        """Opaque serialized parameters; basis of fingerprints and checkpoints."""
        raise CapabilityError(f"{self.backend_kind} backend has no parameters")


def verbalizer_token_ids(adapter: MlmAdapter, pvp: PatternVerbalizerPair) -> LabelTokenIds:
    """Resolve both verbalizer words to single vocabulary ids (hard error otherwise)."""
    ids = []
    for word in (pvp.verbalizer.literal_token, pvp.verbalizer.idiom_token):
        token_ids = adapter.word_token_ids(word)
        if len(token_ids) != 1:
            raise VerbalizerError(
                f"verbalizer word {word!r} tokenizes to {len(token_ids)} tokens; "
                "PVP verbalizers must be single vocabulary tokens"
            )
        if token_ids[0] == getattr(adapter.vocab, "unk_id", -1):
            raise VerbalizerError(f"verbalizer word {word!r} is not in the vocabulary")
        ids.append(token_ids[0])
    return LabelTokenIds(literal_id=ids[0], idiom_id=ids[1])


def class_probs_batch(
    adapter: MlmAdapter, pvp: PatternVerbalizerPair, examples: Sequence[Example]
) -> list[ClassDistribution]:
    if not examples:
        return []
    logits = adapter.label_logits(pvp, examples)
    return [two_way_softmax(float(row[0]), float(row[1])) for row in logits]


def class_probs(
    adapter: MlmAdapter, pvp: PatternVerbalizerPair, example: Example
) -> ClassDistribution:
    """Distribution over the two classes from the mask-position label logits."""
    return class_probs_batch(adapter, pvp, [example])[0]


def fine_tune(
    adapter: MlmAdapter,
    pvp: PatternVerbalizerPair,
    trainset: Sequence[Example],
    hyper: TrainHyper,
    seed: int,
    soft_targets: Optional[Sequence[ClassDistribution]] = None,
) -> MlmAdapter:
    """Gradient fine-tuning toward gold labels or soft targets.

    Mutates the handle in place and returns it. ``hyper.steps == 0`` is a
    no-op that leaves parameters and ``state_version`` untouched. Fixed
    (inputs, hyper, seed) give bit-identical parameters.
    """
    if not adapter.trainable:
        raise CapabilityError(f"{adapter.backend_kind} backend cannot be fine-tuned")
    if not trainset:
        raise ValueError("fine_tune requires a non-empty training set")
    if soft_targets is None:
        unlabeled = [ex.id for ex in trainset if ex.label is None]
        if unlabeled:
            raise ValueError(
                f"fine_tune without soft targets needs labels (first missing: {unlabeled[0]!r})"
            )
    elif len(soft_targets) != len(trainset):
        raise ValueError("soft_targets must align one-to-one with the training set")
    if hyper.steps == 0:
        return adapter
    losses = adapter.fine_tune_impl(pvp, trainset, hyper, seed, soft_targets)
    adapter.loss_history = losses
    adapter.state_version += 1
    return adapter


def parameter_fingerprint(adapter: MlmAdapter) -> str:
    """SHA-256 over the serialized parameters plus the vocabulary."""
    digest = hashlib.sha256()
    digest.update(adapter.parameter_state())
    digest.update(adapter.vocab.content_hash().encode("ascii"))
    return digest.hexdigest()


def checkpoint_metadata(adapter: MlmAdapter) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "backend_kind": adapter.backend_kind,
        "vocabulary_hash": adapter.vocab.content_hash(),
        "embedding_dim": adapter.embedding_dim,
        "state_version": adapter.state_version,
    }


def save_checkpoint(adapter: MlmAdapter, path: str | Path) -> None:
    """Write the opaque parameter blob plus a JSON metadata sidecar."""
    path = Path(path)
    path.write_bytes(adapter.parameter_state())
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    sidecar.write_text(json.dumps(checkpoint_metadata(adapter), indent=2, sort_keys=True) + "\n")


def read_checkpoint_metadata(path: str | Path) -> dict:
    sidecar = Path(str(path) + ".meta.json")
    if not sidecar.exists():
        raise CheckpointError(f"missing checkpoint sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {meta.get('format_version')!r}"
        )
    return meta
