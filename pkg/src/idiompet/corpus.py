"""Dataset ingestion, balanced subsampling, and raw-text context harvesting.

Dataset files are headered TSV (UTF-8, LF) with columns
``id  language  mwe  sentence  label``; the label column may be missing for
unlabeled splits and is encoded through a :class:`~idiompet.labels.LabelCodec`.
Context corpora are plain newline-delimited text.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random
from typing import Iterable, Optional, Sequence

from .errors import CapacityError, CorpusError, EmptyContextError
from .labels import DEFAULT_CODEC, Label, LabelCodec

SPLIT_NAMES = ("train", "dev", "eval", "test")
DATASET_COLUMNS = ("id", "language", "mwe", "sentence", "label")


@dataclass(frozen=True)
class Example:
    """One MWE occurrence: a sentence, the expression inside it, and an optional label."""

    id: str
    language: str
    mwe: str
    sentence: str
    label: Optional[Label] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("example id must be non-empty")
        if not self.language:
            raise ValueError("example language must be non-empty")
        if not self.mwe.strip():
            raise ValueError(f"example {self.id}: mwe must be non-empty")
        if self.mwe.lower() not in self.sentence.lower():
            raise ValueError(
                f"example {self.id}: sentence does not contain mwe {self.mwe!r}"
            )

    def with_label(self, label: Label) -> "Example":
        return replace(self, label=label)


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    examples: tuple[Example, ...]

    def __post_init__(self) -> None:
        if self.name not in SPLIT_NAMES:
            raise ValueError(f"unknown split name {self.name!r}, expected one of {SPLIT_NAMES}")
        object.__setattr__(self, "examples", tuple(self.examples))

    def __len__(self) -> int:
        return len(self.examples)


@dataclass(frozen=True)
class ContextSet:
    """Raw corpus sentences that contain a given MWE."""

    mwe: str
    contexts: tuple[str, ...]
    source: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "contexts", tuple(self.contexts))

    def __len__(self) -> int:
        return len(self.contexts)


def load_dataset(
    path: str | Path,
    split_name: str,
    codec: LabelCodec = DEFAULT_CODEC,
    allowed_languages: Optional[Iterable[str]] = None,
) -> DatasetSplit:
    """Read a headered TSV dataset file into a :class:`DatasetSplit`.

    Row order is preserved. A missing ``label`` column (or empty label cells)
    yields unlabeled examples; any non-empty label cell must decode under
    ``codec``. Errors name the offending column or 1-based data row.
    """
    path = Path(path)
    allowed = {lang.upper() for lang in allowed_languages} if allowed_languages else None
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError(f"{path}: empty dataset file") from None
        columns = {name: idx for idx, name in enumerate(header)}
        for required in ("id", "language", "mwe", "sentence"):
            if required not in columns:
                raise CorpusError(f"{path}: missing required column {required!r}")
        label_col = columns.get("label")

        examples = []
        for row_no, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0]):
                continue  # trailing blank line
            try:
                raw_label = row[label_col] if label_col is not None and label_col < len(row) else ""
                label = codec.decode(raw_label) if raw_label else None
                example = Example(
                    id=row[columns["id"]],
                    language=row[columns["language"]].upper(),
                    mwe=row[columns["mwe"]],
                    sentence=row[columns["sentence"]],
                    label=label,
                )
            except (IndexError, ValueError, CorpusError) as exc:
                raise CorpusError(f"{path}: row {row_no}: {exc}") from None
            if allowed is not None and example.language not in allowed:
                raise CorpusError(
                    f"{path}: row {row_no}: language {example.language!r} not in {sorted(allowed)}"
                )
            examples.append(example)
    if not examples:
        raise CorpusError(f"{path}: dataset file has a header but no data rows")
    return DatasetSplit(name=split_name, examples=tuple(examples))


def write_dataset(split: DatasetSplit, path: str | Path, codec: LabelCodec = DEFAULT_CODEC) -> None:
    """Write a split back to TSV; inverse of :func:`load_dataset`."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(DATASET_COLUMNS) + "\n")
        for ex in split.examples:
            raw = codec.encode(ex.label) if ex.label is not None else ""
            fh.write("\t".join((ex.id, ex.language, ex.mwe, ex.sentence, raw)) + "\n")


def sample_labeled(
    split: DatasetSplit, n: int, seed: int
) -> tuple[list[Example], list[Example]]:
    """Draw a class-balanced labeled subset of size ``n`` (n/2 per class).

    Sampling is uniform without replacement across all languages in the split
    and deterministic in ``seed``. Returns ``(labeled, remainder)``; both keep
    the split's original relative order and together partition it.
    """
    if n < 0 or n % 2 != 0:
        raise ValueError(f"sample size must be even and non-negative, got {n}")
    unlabeled = [ex.id for ex in split.examples if ex.label is None]
    if unlabeled:
        raise ValueError(f"split contains unlabeled examples (first: {unlabeled[0]!r})")

    per_class = n // 2
    by_class: dict[Label, list[int]] = {Label.IDIOMATIC: [], Label.LITERAL: []}
    for idx, ex in enumerate(split.examples):
        by_class[ex.label].append(idx)
    for label, indices in by_class.items():
        if len(indices) < per_class:
            raise CapacityError(
                f"need {per_class} {label.value} examples but split has only "
                f"{len(indices)} (deficit {per_class - len(indices)})"
            )

    rng = Random(seed)
    chosen: set[int] = set()
    for label in (Label.IDIOMATIC, Label.LITERAL):
        chosen.update(rng.sample(by_class[label], per_class))
    labeled = [ex for idx, ex in enumerate(split.examples) if idx in chosen]
    remainder = [ex for idx, ex in enumerate(split.examples) if idx not in chosen]
    return labeled, remainder


def mwe_pattern(mwe: str) -> re.Pattern[str]:
    """Case-insensitive whole-word pattern for an MWE.

    Component words must appear in order, separated by single spaces, with no
    word characters abutting either end; no inflection handling.
    """
    words = mwe.split()
    if not words:
        raise ValueError("mwe must contain at least one word")
    body = r"\ ".join(re.escape(w) for w in words)
    return re.compile(rf"(?<!\w){body}(?!\w)", re.IGNORECASE)


def harvest_contexts(corpus_path: str | Path, mwe: str, k: int) -> ContextSet:
    """Scan a newline-delimited corpus for up to ``k`` lines containing ``mwe``.

    Lines are taken in file order and the scan stops as soon as ``k`` matches
    are found. Raises :class:`EmptyContextError` when nothing matches.
    """
    if k < 1:
        raise ValueError(f"context count must be >= 1, got {k}")
    corpus_path = Path(corpus_path)
    pattern = mwe_pattern(mwe)
    contexts: list[str] = []
    with open(corpus_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if pattern.search(line):
                contexts.append(line)
                if len(contexts) >= k:
                    break
    if not contexts:
        raise EmptyContextError(f"no line of {corpus_path} contains {mwe!r}")
    return ContextSet(mwe=mwe, contexts=tuple(contexts), source=str(corpus_path))
