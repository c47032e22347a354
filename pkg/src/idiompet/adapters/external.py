"""Adapter over an externally pretrained masked-language model.

Wraps a Hugging Face ``AutoModelForMaskedLM`` checkpoint behind the same
contract as the built-in backends. Weights are not distributed with this
package; pass a model name or a local path that ``transformers`` can load
(e.g. ``bert-base-multilingual-cased`` for the multilingual runs, or the
monolingual Portuguese/Galician encoders for the per-language setups).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..corpus import Example
from ..errors import AdapterError, CapabilityError
from ..pvp import PatternVerbalizerPair, render
from .base import ClassDistribution, MlmAdapter, TrainHyper, verbalizer_token_ids
from .vocab import Vocabulary, SPECIAL_TOKENS


class ExternalMlmAdapter(MlmAdapter):
    backend_kind = "external-pretrained"
    trainable = True

    def __init__(self, model_name_or_path: str, max_len: int = 256):
        try:
            import torch  # noqa: F401
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:
            raise CapabilityError(
                "the external backend needs the 'transformers' extra installed"
            ) from exc
        self._tok = AutoTokenizer.from_pretrained(model_name_or_path)
        self._hf = AutoModelForMaskedLM.from_pretrained(model_name_or_path)
        self._hf.eval()
        if self._tok.mask_token is None:
            raise AdapterError(f"{model_name_or_path} has no mask token; not an MLM")
        dim = self._hf.get_input_embeddings().weight.shape[1]
        # the contract's vocabulary view is the HF tokenizer's vocab; keep a
        # facade with the shared special markers for interface parity
        facade = Vocabulary(SPECIAL_TOKENS)
        super().__init__(facade, self._tok.mask_token, dim)
        self.max_len = max_len
        self.model_name_or_path = model_name_or_path

    def word_token_ids(self, word: str) -> list[int]:
        return self._tok(word, add_special_tokens=False)["input_ids"]

    def tokenize(self, text: str) -> list[int]:
        return self._tok(text, add_special_tokens=True)["input_ids"]

    def _encode_batch(self, texts: Sequence[str]):
        import torch

        enc = self._tok(
            list(texts),
            return_tensors="pt",
            padding=True,
            truncation=True,
            max_length=self.max_len,
        )
        mask_positions = (enc["input_ids"] == self._tok.mask_token_id).nonzero()
        if len(mask_positions) != len(texts):
            raise AdapterError("each input must contain exactly one mask token")
        return enc, mask_positions[:, 1], torch

    def label_logits(
        self, pvp: PatternVerbalizerPair, examples: Sequence[Example]
    ) -> np.ndarray:
        token_ids = verbalizer_token_ids(self, pvp)
        texts = [render(pvp, ex, self.mask_marker).text for ex in examples]
        enc, positions, torch = self._encode_batch(texts)
        with torch.no_grad():
            logits = self._hf(**enc).logits
        at_mask = logits[torch.arange(len(texts)), positions]
        pair = at_mask[:, [token_ids.literal_id, token_ids.idiom_id]]
        return pair.numpy().astype(np.float64)

    def fine_tune_impl(
        self,
        pvp: PatternVerbalizerPair,
        trainset: Sequence[Example],
        hyper: TrainHyper,
        seed: int,
        soft_targets: Optional[Sequence[ClassDistribution]] = None,
    ) -> list[float]:
        import torch

        token_ids = verbalizer_token_ids(self, pvp)
        texts = [render(pvp, ex, self.mask_marker).text for ex in trainset]
        enc, positions, _ = self._encode_batch(texts)
        if soft_targets is not None:
            targets = torch.tensor([[t.p_literal, t.p_idiomatic] for t in soft_targets])
        else:
            targets = torch.tensor(
                [[1.0, 0.0] if ex.label.value == "literal" else [0.0, 1.0] for ex in trainset]
            )
        gen = torch.Generator().manual_seed(seed)
        optimizer = torch.optim.AdamW(
            self._hf.parameters(), lr=hyper.learning_rate, weight_decay=hyper.weight_decay
        )
        n = len(trainset)
        order = torch.empty(0, dtype=torch.long)
        losses: list[float] = []
        self._hf.train()
        try:
            for _ in range(hyper.steps):
                while order.numel() < hyper.batch_size:
                    order = torch.cat([order, torch.randperm(n, generator=gen)])
                batch, order = order[: hyper.batch_size], order[hyper.batch_size :]
                out = self._hf(
                    input_ids=enc["input_ids"][batch],
                    attention_mask=enc["attention_mask"][batch],
                ).logits
                at_mask = out[torch.arange(len(batch)), positions[batch]]
                pair = at_mask[:, [token_ids.literal_id, token_ids.idiom_id]]
                loss = -(targets[batch] * pair.log_softmax(dim=-1)).sum(dim=-1).mean()
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(loss.item())
        finally:
            self._hf.eval()
        return losses

    def append_tokens(
        self, tokens: Sequence[str], vectors: np.ndarray, components: Sequence[Sequence[str]]
    ) -> list[int]:
        import torch

        added = self._tok.add_tokens(list(tokens))
        if added != len(tokens):
            raise AdapterError("some tokens were already present in the external tokenizer")
        self._hf.resize_token_embeddings(len(self._tok))
        emb = self._hf.get_input_embeddings().weight
        new_ids = [self._tok.convert_tokens_to_ids(tok) for tok in tokens]
        with torch.no_grad():
            for token_id, vector in zip(new_ids, vectors):
                emb[token_id] = torch.as_tensor(np.asarray(vector), dtype=emb.dtype)
        self.state_version += 1
        return new_ids

    def parameter_state(self) -> bytes:
        import io

        import torch

        buffer = io.BytesIO()
        torch.save({"state_dict": self._hf.state_dict()}, buffer)
        return buffer.getvalue()
