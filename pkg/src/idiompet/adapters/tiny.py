"""Small trainable transformer MLM that runs in seconds on one CPU core.

Pre-LN blocks with no final normalization keep an identity path from a
position's input embedding to its final hidden state, which is what the
embedding-inference machinery relies on. All randomness flows through
explicit torch generators so equal seeds give bit-identical parameters.
"""

from __future__ import annotations

import io
import math
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from ..corpus import Example
from ..errors import AdapterError, CheckpointError
from ..pvp import PatternVerbalizerPair, render
from .base import ClassDistribution, MlmAdapter, TrainHyper, verbalizer_token_ids
from .vocab import MASK_TOKEN, Vocabulary


class _Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("embedding dim must be divisible by head count")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor]) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        out = scores.softmax(dim=-1) @ v
        out = out.transpose(1, 2).reshape(b, t, d)
        return self.proj(out)


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = _Attention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim))

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor]) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), pad_mask)
        return x + self.mlp(self.ln2(x))


class _TinyTransformer(nn.Module):
    def __init__(self, vocab_size: int, dim: int, layers: int, heads: int, ff_dim: int, max_len: int):
        super().__init__()
        self.token_emb = nn.Embedding(vocab_size, dim)
        self.pos_emb = nn.Embedding(max_len, dim)
        self.blocks = nn.ModuleList(_Block(dim, heads, ff_dim) for _ in range(layers))
        self.out_weight = nn.Parameter(torch.empty(vocab_size, dim))
        self.out_bias = nn.Parameter(torch.zeros(vocab_size))
        self.max_len = max_len

    def hidden_from_embeds(
        self, embeds: torch.Tensor, pad_mask: Optional[torch.Tensor]
    ) -> torch.Tensor:
        t = embeds.shape[1]
        if t > self.max_len:
            raise AdapterError(f"sequence length {t} exceeds backend maximum {self.max_len}")
        x = embeds + self.pos_emb.weight[:t][None, :, :]
        for block in self.blocks:
            x = block(x, pad_mask)
        return x

    def hidden_from_ids(self, ids: torch.Tensor, pad_mask: Optional[torch.Tensor]) -> torch.Tensor:
        return self.hidden_from_embeds(self.token_emb(ids), pad_mask)


def _seeded_init(model: _TinyTransformer, seed: int, init_std: float = 0.02) -> None:
    gen = torch.Generator().manual_seed(seed)
    for name, param in sorted(model.named_parameters()):
        if param.dim() >= 2 or "emb" in name or name == "out_weight":
            with torch.no_grad():
                param.normal_(0.0, init_std, generator=gen)
        elif "ln" in name and name.endswith("weight"):
            with torch.no_grad():
                param.fill_(1.0)
        else:
            with torch.no_grad():
                param.zero_()


class TinyMlmAdapter(MlmAdapter):
    """Deterministic CPU-scale MLM backend over a fixture vocabulary."""

    backend_kind = "tiny-trainable"
    trainable = True

    def __init__(
        self,
        vocab: Vocabulary,
        embedding_dim: int = 48,
        layers: int = 2,
        heads: int = 4,
        ff_dim: int = 96,
        max_len: int = 128,
        seed: int = 0,
    ):
        super().__init__(vocab, MASK_TOKEN, embedding_dim)
        self.layers = layers
        self.heads = heads
        self.ff_dim = ff_dim
        self.max_len = max_len
        self.init_seed = seed
        self._model = _TinyTransformer(len(vocab), embedding_dim, layers, heads, ff_dim, max_len)
        _seeded_init(self._model, seed)
        self._model.eval()
        self._injected_count = 0

    # -- encoding ----------------------------------------------------------
    def _encode_masked(self, text: str) -> tuple[list[int], int]:
        ids = self.tokenize(text)
        positions = [i for i, tok in enumerate(ids) if tok == self.vocab.mask_id]
        if len(positions) != 1:
            raise AdapterError(
                f"expected exactly one mask token in input, found {len(positions)}"
            )
        if len(ids) > self.max_len:
            raise AdapterError(f"input of {len(ids)} tokens exceeds maximum {self.max_len}")
        return ids, positions[0]

    def _pad_batch(self, id_lists: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        width = max(len(ids) for ids in id_lists)
        batch = torch.full((len(id_lists), width), self.vocab.pad_id, dtype=torch.long)
        for row, ids in enumerate(id_lists):
            batch[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        return batch, batch.eq(self.vocab.pad_id)

    # -- inference ---------------------------------------------------------
    def mask_logits(self, text: str) -> np.ndarray:
        """Full-vocabulary logits at the single mask position of ``text``."""
        ids, pos = self._encode_masked(text)
        with torch.no_grad():
            hidden = self._model.hidden_from_ids(torch.tensor([ids]), None)[0, pos]
            logits = hidden @ self._model.out_weight.T + self._model.out_bias
        return logits.numpy()

    def label_logits(
        self, pvp: PatternVerbalizerPair, examples: Sequence[Example]
    ) -> np.ndarray:
        token_ids = verbalizer_token_ids(self, pvp)
        encoded = [
            self._encode_masked(render(pvp, ex, self.mask_marker).text) for ex in examples
        ]
        out = np.empty((len(examples), 2), dtype=np.float32)
        with torch.no_grad():
            for start in range(0, len(encoded), 64):
                chunk = encoded[start : start + 64]
                ids, pad = self._pad_batch([ids for ids, _ in chunk])
                positions = torch.tensor([pos for _, pos in chunk])
                hidden = self._model.hidden_from_ids(ids, pad)
                at_mask = hidden[torch.arange(len(chunk)), positions]
                pair = self._model.out_weight[[token_ids.literal_id, token_ids.idiom_id]]
                bias = self._model.out_bias[[token_ids.literal_id, token_ids.idiom_id]]
                out[start : start + len(chunk)] = (at_mask @ pair.T + bias).numpy()
        return out

    # -- training ----------------------------------------------------------
    def fine_tune_impl(
        self,
        pvp: PatternVerbalizerPair,
        trainset: Sequence[Example],
        hyper: TrainHyper,
        seed: int,
        soft_targets: Optional[Sequence[ClassDistribution]] = None,
    ) -> list[float]:
        token_ids = verbalizer_token_ids(self, pvp)
        encoded = [
            self._encode_masked(render(pvp, ex, self.mask_marker).text) for ex in trainset
        ]
        ids, pad = self._pad_batch([ids for ids, _ in encoded])
        positions = torch.tensor([pos for _, pos in encoded])
        if soft_targets is not None:
            targets = torch.tensor(
                [[t.p_literal, t.p_idiomatic] for t in soft_targets], dtype=torch.float32
            )
        else:
            targets = torch.tensor(
                [[1.0, 0.0] if ex.label.value == "literal" else [0.0, 1.0] for ex in trainset],
                dtype=torch.float32,
            )

        gen = torch.Generator().manual_seed(seed)
        optimizer = torch.optim.Adam(
            self._model.parameters(), lr=hyper.learning_rate, weight_decay=hyper.weight_decay
        )
        pair_index = torch.tensor([token_ids.literal_id, token_ids.idiom_id])
        n = len(trainset)
        losses: list[float] = []
        order = torch.empty(0, dtype=torch.long)
        self._model.train()
        try:
            for _ in range(hyper.steps):
                while order.numel() < hyper.batch_size:
                    order = torch.cat([order, torch.randperm(n, generator=gen)])
                batch, order = order[: hyper.batch_size], order[hyper.batch_size :]
                hidden = self._model.hidden_from_ids(ids[batch], pad[batch])
                at_mask = hidden[torch.arange(len(batch)), positions[batch]]
                logits = at_mask @ self._model.out_weight[pair_index].T
                logits = logits + self._model.out_bias[pair_index]
                loss = -(targets[batch] * logits.log_softmax(dim=-1)).sum(dim=-1).mean()
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(loss.item())
        finally:
            self._model.eval()
        return losses

    # -- embedding access (context-encoder role) ----------------------------
    def input_vector(self, token_id: int) -> np.ndarray:
        return self._model.token_emb.weight[token_id].detach().numpy().copy()

    def input_embedding_matrix(self) -> np.ndarray:
        return self._model.token_emb.weight.detach().numpy().copy()

    def embed_ids(self, ids: Sequence[int]) -> torch.Tensor:
        return self._model.token_emb(torch.tensor(list(ids), dtype=torch.long))

    def encode_with_replacement(
        self, prefix_ids: Sequence[int], replacement: torch.Tensor, suffix_ids: Sequence[int]
    ) -> torch.Tensor:
        """Final-layer hidden state at a position whose input embedding is supplied.

        Differentiable in ``replacement``; used to contextualize an inferred
        form vector inside a harvested sentence.
        """
        pieces = []
        if prefix_ids:
            pieces.append(self.embed_ids(prefix_ids))
        pieces.append(replacement.reshape(1, -1))
        if suffix_ids:
            pieces.append(self.embed_ids(suffix_ids))
        embeds = torch.cat(pieces, dim=0)[None, :, :]
        if embeds.shape[1] > self.max_len:
            # keep a window around the replaced position
            pos = len(prefix_ids)
            lo = max(0, min(pos - self.max_len // 2, embeds.shape[1] - self.max_len))
            embeds = embeds[:, lo : lo + self.max_len]
            pos -= lo
        else:
            pos = len(prefix_ids)
        hidden = self._model.hidden_from_embeds(embeds, None)
        return hidden[0, pos]

    def torch_parameters(self):
        return self._model.parameters()

    # -- vocabulary injection ------------------------------------------------
    def append_tokens(self, tokens: Sequence[str], vectors: np.ndarray,
                      components: Sequence[Sequence[str]]) -> list[int]:
        """Grow the vocabulary; new rows carry the given input vectors.

        Output-layer rows for new tokens are zero: injection targets the input
        matrix only. Existing rows are untouched.
        """
        if vectors.shape != (len(tokens), self.embedding_dim):
            raise AdapterError(
                f"expected vectors of shape {(len(tokens), self.embedding_dim)}, got {vectors.shape}"
            )
        new_ids = []
        for token, comps in zip(tokens, components):
            new_ids.append(self.vocab.add_token(token, components=comps))
        with torch.no_grad():
            new_rows = torch.tensor(np.asarray(vectors, dtype=np.float32))
            self._model.token_emb = nn.Embedding.from_pretrained(
                torch.cat([self._model.token_emb.weight.data, new_rows]), freeze=False
            )
            self._model.out_weight = nn.Parameter(
                torch.cat([self._model.out_weight.data, torch.zeros_like(new_rows)])
            )
            self._model.out_bias = nn.Parameter(
                torch.cat([self._model.out_bias.data, torch.zeros(len(tokens))])
            )
        self._injected_count += len(tokens)
        self.state_version += 1
        return new_ids

    def overwrite_input_vector(self, token_id: int, vector: np.ndarray) -> None:
        if vector.shape != (self.embedding_dim,):
            raise AdapterError(f"expected vector of dim {self.embedding_dim}, got {vector.shape}")
        with torch.no_grad():
            self._model.token_emb.weight[token_id] = torch.tensor(
                np.asarray(vector, dtype=np.float32)
            )
        self.state_version += 1

    # -- persistence ---------------------------------------------------------
    def parameter_state(self) -> bytes:
        buffer = io.BytesIO()
        torch.save(
            {
                "format_version": 1,
                "backend_kind": self.backend_kind,
                "config": {
                    "embedding_dim": self.embedding_dim,
                    "layers": self.layers,
                    "heads": self.heads,
                    "ff_dim": self.ff_dim,
                    "max_len": self.max_len,
                    "seed": self.init_seed,
                },
                "state_version": self.state_version,
                "vocab_tokens": self.vocab.tokens,
                "vocab_mwes": sorted(self.vocab.mwe_entries.items()),
                "state_dict": self._model.state_dict(),
            },
            buffer,
        )
        return buffer.getvalue()

    @classmethod
    def from_parameter_state(cls, blob: bytes) -> "TinyMlmAdapter":
        payload = torch.load(io.BytesIO(blob), weights_only=False)
        if payload.get("backend_kind") != cls.backend_kind:
            raise CheckpointError(
                f"checkpoint holds backend {payload.get('backend_kind')!r}, expected {cls.backend_kind!r}"
            )
        vocab = Vocabulary(payload["vocab_tokens"])
        for components, token_id in payload["vocab_mwes"]:
            vocab.register_mwe(token_id, components)
        adapter = cls(vocab, **payload["config"])
        model = _TinyTransformer(
            len(vocab),
            adapter.embedding_dim,
            adapter.layers,
            adapter.heads,
            adapter.ff_dim,
            adapter.max_len,
        )
        model.load_state_dict(payload["state_dict"])
        model.eval()
        adapter._model = model
        adapter.state_version = payload["state_version"]
        return adapter
