"""Embedding inference for MWEs from surface n-grams plus harvested contexts.

A form embedding (mean of character n-gram vectors) substitutes the MWE's
input-layer embedding inside each context; the encoder contextualizes it, and
a single-query attention layer aggregates the per-context vectors into one
embedding. Training mimics gold vectors of frequent words under squared
Euclidean loss. Inferred vectors can be injected into an adapter's input
embedding matrix as new single-token entries.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .adapters.tiny import TinyMlmAdapter
from .corpus import ContextSet, harvest_contexts, mwe_pattern
from .errors import BertramError, CapabilityError, CheckpointError, EmptyContextError, InjectionError
from .adapters.vocab import pretokenize


def normalize_form(mwe: str) -> str:
    """Canonical token string for an MWE: single underscores join the words."""
    words = mwe.split()
    if not words:
        raise ValueError("cannot normalize an empty expression")
    return "_".join(words)


def padded_form(mwe: str) -> str:
    return "<" + normalize_form(mwe) + ">"


def ngram_set(form: str, n_min: int, n_max: int) -> list[str]:
    """All substrings of the padded form with lengths in [n_min, n_max].

    Enumeration is left-to-right and shorter-first at each position;
    duplicates are retained. When n_min exceeds the padded length the whole
    padded form is the single fallback gram.
    """
    if n_min < 1 or n_max < n_min:
        raise ValueError(f"invalid n-gram bounds [{n_min}, {n_max}]")
    padded = padded_form(form)
    if n_min > len(padded):
        return [padded]
    grams = []
    for start in range(len(padded)):
        for n in range(n_min, n_max + 1):
            if start + n <= len(padded):
                grams.append(padded[start : start + n])
    return grams


class NGramTable:
    """Trainable store of n-gram vectors sharing one embedding dimension."""

    def __init__(self, n_min: int, n_max: int, grams: Sequence[str], dim: int, seed: int = 0):
        if n_min > n_max:
            raise ValueError("n_min must not exceed n_max")
        self.n_min = n_min
        self.n_max = n_max
        self.dim = dim
        self.index: dict[str, int] = {}
        for gram in grams:
            if gram not in self.index:
                self.index[gram] = len(self.index)
        weight = torch.empty(len(self.index), dim)
        weight.normal_(0.0, 0.02, generator=torch.Generator().manual_seed(seed))
        self.embedding = nn.Embedding.from_pretrained(weight, freeze=False)

    @classmethod
    def build(cls, forms: Sequence[str], n_min: int = 3, n_max: int = 5, dim: int = 48, seed: int = 0) -> "NGramTable":
        grams: list[str] = []
        for form in forms:
            grams.extend(ngram_set(form, n_min, n_max))
        return cls(n_min, n_max, grams, dim, seed)

    def __contains__(self, gram: str) -> bool:
        return gram in self.index

    def __len__(self) -> int:
        return len(self.index)

    def vector(self, gram: str) -> Optional[np.ndarray]:
        if gram not in self.index:
            return None
        return self.embedding.weight[self.index[gram]].detach().numpy().copy()

    def as_dict(self) -> dict[str, np.ndarray]:
        weights = self.embedding.weight.detach().numpy()
        return {gram: weights[i].copy() for gram, i in self.index.items()}


@dataclass(frozen=True)
class FormEmbedding:
    token_form: str
    vector: np.ndarray
    matched_count: int

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"non-finite form embedding for {self.token_form!r}")


@dataclass(frozen=True)
class MWEEmbedding:
    mwe: str
    vector: np.ndarray
    context_count: int

    def __post_init__(self) -> None:
        if self.context_count < 1:
            raise ValueError("an inferred embedding needs at least one context")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"non-finite embedding for {self.mwe!r}")


def form_embedding(form: str, table: NGramTable) -> FormEmbedding:
    """Mean of the table vectors of the form's n-grams.

    Unknown n-grams contribute nothing and shrink the divisor; a form with no
    known n-grams gets the zero vector and a warning.
    """
    if len(table) == 0:
        raise ValueError("n-gram table is empty")
    grams = ngram_set(form, table.n_min, table.n_max)
    matched = [g for g in grams if g in table]
    if not matched:
        warnings.warn(f"no known n-grams for {form!r}; form embedding is zero", stacklevel=2)
        return FormEmbedding(normalize_form(form), np.zeros(table.dim, dtype=np.float64), 0)
    weights = table.embedding.weight.detach().numpy()
    vectors = np.stack([weights[table.index[g]] for g in matched]).astype(np.float64)
    return FormEmbedding(normalize_form(form), vectors.mean(axis=0), len(matched))


class BertramModel:
    """Form n-gram table + frozen context encoder + learned attention head."""

    def __init__(self, ngram_table: NGramTable, context_encoder: TinyMlmAdapter, seed: int = 0):
        if ngram_table.dim != context_encoder.embedding_dim:
            raise BertramError(
                f"n-gram table dim {ngram_table.dim} != encoder dim {context_encoder.embedding_dim}"
            )
        if not hasattr(context_encoder, "encode_with_replacement_batch"):
            raise CapabilityError(
                f"{context_encoder.backend_kind} backend cannot serve as context encoder"
            )
        self.ngram_table = ngram_table
        self.encoder = context_encoder
        dim = ngram_table.dim
        gen = torch.Generator().manual_seed(seed)
        self.query = nn.Parameter(torch.empty(dim).normal_(0.0, 0.02, generator=gen))
        self.out_weight = nn.Parameter(torch.eye(dim))
        self.out_bias = nn.Parameter(torch.zeros(dim))
        self.loss_history: list[float] = []

    @property
    def dim(self) -> int:
        return self.ngram_table.dim

    def attention_parameters(self) -> list[nn.Parameter]:
        return [self.query, self.out_weight, self.out_bias]

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [self.ngram_table.embedding.weight, *self.attention_parameters()]

    # -- differentiable pieces ----------------------------------------------
    def form_vector(self, form: str) -> torch.Tensor:
        grams = ngram_set(form, self.ngram_table.n_min, self.ngram_table.n_max)
        indices = [self.ngram_table.index[g] for g in grams if g in self.ngram_table]
        if not indices:
            return torch.zeros(self.dim)
        return self.ngram_table.embedding(torch.tensor(indices, dtype=torch.long)).mean(dim=0)

    def split_context(self, mwe: str, context: str) -> Optional[tuple[list[int], list[int]]]:
        """Token ids before and after the first MWE occurrence, or None."""
        match = mwe_pattern(mwe).search(context)
        if match is None:
            return None
        prefix = self.encoder.tokenize(context[: match.start()])
        suffix = self.encoder.tokenize(context[match.end() :])
        return prefix, suffix

    def contextualize(self, form_vec: torch.Tensor, splits: Sequence[tuple[list[int], list[int]]]) -> torch.Tensor:
        """Encoder hidden states at the replaced position, shape (k, dim)."""
        replacements = form_vec.expand(len(splits), -1)
        return self.encoder.encode_with_replacement_batch(list(splits), replacements)

    def aggregate(self, hidden: torch.Tensor) -> torch.Tensor:
        scores = hidden @ self.query / math.sqrt(self.dim)
        weights = scores.softmax(dim=0)
        return self.out_weight @ (weights[:, None] * hidden).sum(dim=0) + self.out_bias


def infer_embedding_detailed(
    mwe: str, contexts: ContextSet, model: BertramModel
) -> tuple[MWEEmbedding, np.ndarray]:
    """Inferred embedding plus the attention weights over the used contexts.

    Contexts are encoded one at a time and aggregated in float64, which makes
    the result invariant (to well below 1e-9) under context permutation.
    """
    if len(contexts) == 0:
        raise ValueError("cannot infer an embedding from zero contexts")
    form_vec = model.form_vector(mwe).detach()
    hiddens = []
    for context in contexts.contexts:
        split = model.split_context(mwe, context)
        if split is None:
            warnings.warn(f"context without {mwe!r} skipped: {context[:60]!r}", stacklevel=2)
            continue
        with torch.no_grad():
            hidden = model.contextualize(form_vec, [split])[0]
        hiddens.append(hidden.numpy().astype(np.float64))
    if not hiddens:
        raise BertramError(f"none of the {len(contexts)} contexts contain {mwe!r}")

    stack = np.stack(hiddens)
    query = model.query.detach().numpy().astype(np.float64)
    scores = stack @ query / math.sqrt(model.dim)
    scores -= scores.max()
    weights = np.exp(scores)
    weights /= weights.sum()
    pooled = weights @ stack
    out_w = model.out_weight.detach().numpy().astype(np.float64)
    out_b = model.out_bias.detach().numpy().astype(np.float64)
    vector = out_w @ pooled + out_b
    return MWEEmbedding(mwe=mwe, vector=vector, context_count=len(hiddens)), weights


def infer_embedding(mwe: str, contexts: ContextSet, model: BertramModel) -> MWEEmbedding:
    embedding, _ = infer_embedding_detailed(mwe, contexts, model)
    return embedding


@dataclass(frozen=True)
class MimicHyper:
    """Mimic-training knobs."""

    steps: int = 200
    batch_words: int = 20
    learning_rate: float = 0.01
    contexts_per_word: int = 20

    def __post_init__(self) -> None:
        if self.steps < 0 or self.batch_words < 1 or self.contexts_per_word < 1:
            raise ValueError("invalid mimic hyperparameters")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class MimicItem:
    word: str
    gold: np.ndarray
    splits: list[tuple[list[int], list[int]]]


def prepare_mimic_data(
    frequent_words: Sequence[tuple[str, np.ndarray]],
    corpus_path: str | Path,
    model: BertramModel,
    contexts_per_word: int,
) -> list[MimicItem]:
    """Harvest and tokenize contexts for each training word.

    Words without any harvestable context are excluded with a warning; an
    entirely empty result is an error.
    """
    if not frequent_words:
        raise ValueError("mimic training needs at least one word")
    items = []
    for word, gold in frequent_words:
        gold = np.asarray(gold, dtype=np.float32)
        if gold.shape != (model.dim,):
            raise BertramError(f"gold vector for {word!r} has shape {gold.shape}, expected ({model.dim},)")
        try:
            contexts = harvest_contexts(corpus_path, word, contexts_per_word)
        except EmptyContextError:
            warnings.warn(f"no contexts for {word!r}; excluded from mimic training", stacklevel=2)
            continue
        splits = [s for c in contexts.contexts if (s := model.split_context(word, c)) is not None]
        if not splits:
            warnings.warn(f"no usable contexts for {word!r}; excluded", stacklevel=2)
            continue
        items.append(MimicItem(word=word, gold=gold, splits=splits))
    if not items:
        raise BertramError("every training word was excluded for lack of contexts")
    return items


def _batched_outputs(model: BertramModel, items: Sequence[MimicItem]) -> torch.Tensor:
    """Inferred vectors for a batch of words in one encoder pass (differentiable)."""
    all_splits: list[tuple[list[int], list[int]]] = []
    bounds = [0]
    form_vecs = []
    for item in items:
        all_splits.extend(item.splits)
        bounds.append(bounds[-1] + len(item.splits))
        form_vecs.append(model.form_vector(item.word))
    replacements = torch.cat(
        [fv.expand(len(item.splits), -1) for fv, item in zip(form_vecs, items)]
    )
    hidden = model.encoder.encode_with_replacement_batch(all_splits, replacements)
    outputs = []
    for i in range(len(items)):
        outputs.append(model.aggregate(hidden[bounds[i] : bounds[i + 1]]))
    return torch.stack(outputs)


def mimic_mean_loss(model: BertramModel, items: Sequence[MimicItem]) -> float:
    """Mean squared Euclidean distance between inferred and gold vectors."""
    with torch.no_grad():
        outputs = _batched_outputs(model, items)
        golds = torch.tensor(np.stack([item.gold for item in items]))
        return ((outputs - golds) ** 2).sum(dim=-1).mean().item()


def train_mimic(
    frequent_words: Sequence[tuple[str, np.ndarray]],
    corpus_path: str | Path,
    model: BertramModel,
    hyper: MimicHyper,
    seed: int = 0,
    prepared: Optional[Sequence[MimicItem]] = None,
) -> BertramModel:
    """Fit n-gram vectors and the attention head to mimic gold embeddings.

    The context encoder stays frozen; gradients flow through it into the form
    vectors. Deterministic under fixed seed. Zero steps leave the model
    untouched.
    """
    items = list(prepared) if prepared is not None else prepare_mimic_data(
        frequent_words, corpus_path, model, hyper.contexts_per_word
    )
    if hyper.steps == 0:
        return model

    encoder_params = list(model.encoder.torch_parameters())
    frozen_states = [p.requires_grad for p in encoder_params]
    for p in encoder_params:
        p.requires_grad_(False)
    gen = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(model.trainable_parameters(), lr=hyper.learning_rate)
    losses: list[float] = []
    order = torch.empty(0, dtype=torch.long)
    try:
        for _ in range(hyper.steps):
            while order.numel() < hyper.batch_words:
                order = torch.cat([order, torch.randperm(len(items), generator=gen)])
            batch_idx, order = order[: hyper.batch_words], order[hyper.batch_words :]
            batch = [items[i] for i in batch_idx.tolist()]
            outputs = _batched_outputs(model, batch)
            golds = torch.tensor(np.stack([item.gold for item in batch]))
            loss = ((outputs - golds) ** 2).sum(dim=-1).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
    finally:
        for p, state in zip(encoder_params, frozen_states):
            p.requires_grad_(state)
    model.loss_history = losses
    return model


def inject_embeddings(
    adapter: TinyMlmAdapter, embeddings: Sequence[MWEEmbedding], overwrite: bool = False
) -> TinyMlmAdapter:
    """Add inferred MWE vectors to the adapter's input embedding matrix.

    Each MWE becomes one new vocabulary entry (normalized form as the token
    string); tokenization thereafter maps the surface form to that single
    token. Existing rows are preserved bit-exactly, so injection is reversible
    by truncating the appended rows.
    """
    if not embeddings:
        raise ValueError("nothing to inject")
    forms = [normalize_form(e.mwe) for e in embeddings]
    if len(set(forms)) != len(forms):
        duplicate = next(f for f in forms if forms.count(f) > 1)
        raise InjectionError(f"duplicate MWE in injection batch: {duplicate!r}")
    for emb in embeddings:
        if emb.vector.shape != (adapter.embedding_dim,):
            raise InjectionError(
                f"embedding for {emb.mwe!r} has dim {emb.vector.shape}, "
                f"adapter expects ({adapter.embedding_dim},)"
            )

    fresh: list[MWEEmbedding] = []
    for emb, form in zip(embeddings, forms):
        if form in adapter.vocab:
            if not overwrite:
                raise InjectionError(
                    f"{form!r} is already a vocabulary token; pass overwrite=True to replace it"
                )
            adapter.overwrite_input_vector(adapter.vocab.index[form], emb.vector)
        else:
            fresh.append(emb)
    if fresh:
        vectors = np.stack([e.vector for e in fresh]).astype(np.float32)
        tokens = [normalize_form(e.mwe) for e in fresh]
        components = [pretokenize(e.mwe) for e in fresh]
        adapter.append_tokens(tokens, vectors, components)
    return adapter


def export_embeddings(embeddings: Sequence[MWEEmbedding], path: str | Path) -> None:
    """Headered TSV ``mwe  dim  v0..v{dim-1}`` with decimal floats."""
    if not embeddings:
        raise ValueError("nothing to export")
    dim = len(embeddings[0].vector)
    header = ["mwe", "dim"] + [f"v{i}" for i in range(dim)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for emb in embeddings:
            if len(emb.vector) != dim:
                raise BertramError("embeddings in one export must share a dimension")
            values = [repr(float(v)) for v in emb.vector]
            fh.write("\t".join([emb.mwe, str(dim)] + values) + "\n")


def import_embeddings(path: str | Path) -> list[MWEEmbedding]:
    """Inverse of :func:`export_embeddings`; context counts are not stored."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["mwe", "dim"]:
            raise BertramError(f"{path}: expected embedding header 'mwe<TAB>dim<TAB>v0..'")
        out = []
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            try:
                dim = int(fields[1])
                vector = np.array([float(v) for v in fields[2 : 2 + dim]], dtype=np.float64)
                if len(vector) != dim:
                    raise ValueError(f"expected {dim} components, found {len(vector)}")
                out.append(MWEEmbedding(mwe=fields[0], vector=vector, context_count=1))
            except (ValueError, IndexError) as exc:
                raise BertramError(f"{path}: line {line_no}: {exc}") from None
    if not out:
        raise BertramError(f"{path}: no embeddings found")
    return out


def save_bertram(model: BertramModel, path: str | Path) -> None:
    """Binary checkpoint of the n-gram table and attention head."""
    buffer = io.BytesIO()
    torch.save(
        {
            "format_version": 1,
            "n_min": model.ngram_table.n_min,
            "n_max": model.ngram_table.n_max,
            "dim": model.dim,
            "grams": list(model.ngram_table.index.keys()),
            "ngram_weight": model.ngram_table.embedding.weight.detach(),
            "query": model.query.detach(),
            "out_weight": model.out_weight.detach(),
            "out_bias": model.out_bias.detach(),
            "encoder_vocab_hash": model.encoder.vocab.content_hash(),
        },
        buffer,
    )
    Path(path).write_bytes(buffer.getvalue())


def load_bertram(path: str | Path, context_encoder: TinyMlmAdapter) -> BertramModel:
    payload = torch.load(io.BytesIO(Path(path).read_bytes()), weights_only=False)
    if payload.get("format_version") != 1:
        raise CheckpointError(f"unsupported bertram checkpoint version {payload.get('format_version')!r}")
    table = NGramTable(payload["n_min"], payload["n_max"], payload["grams"], payload["dim"])
    with torch.no_grad():
        table.embedding.weight.copy_(payload["ngram_weight"])
    model = BertramModel(table, context_encoder)
    with torch.no_grad():
        model.query.copy_(payload["query"])
        model.out_weight.copy_(payload["out_weight"])
        model.out_bias.copy_(payload["out_bias"])
    if payload["encoder_vocab_hash"] != context_encoder.vocab.content_hash():
        warnings.warn(
            "context encoder vocabulary differs from the one this model was trained with",
            stacklevel=2,
        )
    return model
