"""Class labels and their on-disk encoding.

The binary task distinguishes idiomatic from literal MWE usage. Dataset and
prediction files store labels as short strings; the mapping is configurable
because different distributions of the task data disagree on polarity. The
default follows the convention 1 = idiomatic, 0 = literal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import CorpusError


class Label(str, enum.Enum):
    IDIOMATIC = "idiomatic"
    LITERAL = "literal"

    def __str__(self) -> str:  # keep TSV output free of enum repr noise
        return self.value


@dataclass(frozen=True)
class LabelCodec:
    """Maps labels to the strings used in dataset and prediction files."""

    idiomatic: str = "1"
    literal: str = "0"

    def __post_init__(self) -> None:
        if self.idiomatic == self.literal:
            raise ValueError("label encodings must be distinct")

    def encode(self, label: Label) -> str:
        return self.idiomatic if label is Label.IDIOMATIC else self.literal

    def decode(self, raw: str) -> Label:
        if raw == self.idiomatic:
            return Label.IDIOMATIC
        if raw == self.literal:
            return Label.LITERAL
        # accept the canonical names as well, so in-memory dumps reload
        if raw == Label.IDIOMATIC.value:
            return Label.IDIOMATIC
        if raw == Label.LITERAL.value:
            return Label.LITERAL
        raise CorpusError(
            f"unknown label value {raw!r} (expected {self.idiomatic!r} or {self.literal!r})"
        )


DEFAULT_CODEC = LabelCodec()
