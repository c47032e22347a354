"""Fixture vocabulary and tokenizer for the built-in backends.

Tokenization is whitespace + punctuation splitting followed by greedy
wordpiece matching (``##`` continuation pieces), case-sensitive. Special
markers are kept atomic. Registered multiword entries are matched on the
word sequence (case-insensitive) before wordpiece lookup, which is how
injected MWE tokens become single tokens.
"""

from __future__ import annotations

import hashlib
import re
from typing import Iterable, Optional, Sequence

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
MASK_TOKEN = "[MASK]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, MASK_TOKEN)

_PRETOKEN = re.compile(
    "|".join(re.escape(tok) for tok in SPECIAL_TOKENS) + r"|\w+|[^\w\s]"
)


def pretokenize(text: str) -> list[str]:
    """Split text into words, punctuation marks, and atomic special markers."""
    return _PRETOKEN.findall(text)


class Vocabulary:
    """Ordered token inventory with wordpiece and multiword lookup."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens: list[str] = list(tokens)
        for special in SPECIAL_TOKENS:
            if special not in self.tokens:
                raise ValueError(f"vocabulary must contain {special}")
        self.index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.index[tok] = i
        # lower-cased component-word sequences that map to a single token id
        self._mwe_entries: dict[tuple[str, ...], int] = {}
        self._max_mwe_words = 0

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def pad_id(self) -> int:
        return self.index[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.index[UNK_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.index[MASK_TOKEN]

    @property
    def mwe_entries(self) -> dict[tuple[str, ...], int]:
        return dict(self._mwe_entries)

    def add_token(self, token: str, components: Optional[Sequence[str]] = None) -> int:
        """Append a token; the optional component-word key enables multiword matching."""
        if token in self.index:
            raise ValueError(f"token {token!r} already in vocabulary")
        token_id = len(self.tokens)
        self.tokens.append(token)
        self.index[token] = token_id
        if components:
            self.register_mwe(token_id, components)
        return token_id

    def register_mwe(self, token_id: int, components: Sequence[str]) -> None:
        key = tuple(w.lower() for w in components)
        if not key:
            raise ValueError("multiword entry needs at least one component word")
        self._mwe_entries[key] = token_id
        self._max_mwe_words = max(self._max_mwe_words, len(key))

    def content_hash(self) -> str:
        payload = "\n".join(self.tokens) + "\n--\n" + repr(sorted(self._mwe_entries.items()))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _wordpiece(self, word: str) -> list[int]:
        """Greedy longest-prefix wordpiece; a word that cannot be covered is [UNK]."""
        pieces: list[int] = []
        start = 0
        while start < len(word):
            end = len(word)
            piece_id = None
            while end > start:
                candidate = word[start:end]
                if start > 0:
                    candidate = "##" + candidate
                if candidate in self.index:
                    piece_id = self.index[candidate]
                    break
                end -= 1
            if piece_id is None:
                return [self.unk_id]
            pieces.append(piece_id)
            start = end
        return pieces

    def word_token_ids(self, word: str) -> list[int]:
        """Token ids a single word maps to (one id for in-vocabulary words)."""
        if word in self.index:
            return [self.index[word]]
        return self._wordpiece(word)

    def encode(self, text: str) -> list[int]:
        """Tokenize to ids, matching registered multiword entries first."""
        words = pretokenize(text)
        lowered = [w.lower() for w in words]
        ids: list[int] = []
        i = 0
        while i < len(words):
            matched = False
            if self._mwe_entries:
                limit = min(self._max_mwe_words, len(words) - i)
                for span in range(limit, 1, -1):
                    key = tuple(lowered[i : i + span])
                    if key in self._mwe_entries:
                        ids.append(self._mwe_entries[key])
                        i += span
                        matched = True
                        break
            if not matched:
                ids.extend(self.word_token_ids(words[i]))
                i += 1
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocabulary(texts: Iterable[str], extra_tokens: Iterable[str] = ()) -> Vocabulary:
    """Collect a vocabulary from raw text plus any tokens that must be present.

    Words keep first-seen order after the special markers, so construction is
    deterministic for a fixed input order.
    """
    tokens: list[str] = list(SPECIAL_TOKENS)
    seen = set(tokens)
    for extra in extra_tokens:
        if extra not in seen:
            tokens.append(extra)
            seen.add(extra)
    for text in texts:
        for word in pretokenize(text):
            if word not in seen:
                tokens.append(word)
                seen.add(word)
    return Vocabulary(tokens)
