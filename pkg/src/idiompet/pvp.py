"""Cloze patterns and verbalizers.

A pattern template is a plain string with placeholders:

  ``{X}``        the example sentence
  ``{IDIOM}``    the MWE surface form
  ``{IDIOM_k}``  the k-th component word of the MWE (k >= 1)
  ``{BLANK}``    the mask slot (exactly one per template)

Rendering substitutes placeholders verbatim and alters no other text, so the
output is byte-exact for a given template. The built-in inventory covers the
five English patterns P1..P5 plus the Portuguese and Galician variants of P4.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .corpus import Example
from .errors import CorpusError, PatternError, RenderError

_PLACEHOLDER = re.compile(r"\{(X|IDIOM(?:_(\d+))?|BLANK)\}")


def idiom_component(mwe: str, k: int) -> str:
    """Return the k-th (1-based) whitespace-separated word of the MWE."""
    if k < 1:
        raise ValueError(f"component index must be >= 1, got {k}")
    words = mwe.split()
    if k > len(words):
        raise ValueError(f"mwe {mwe!r} has {len(words)} words, no component {k}")
    return words[k - 1]


@dataclass(frozen=True)
class Pattern:
    id: str
    template: str
    prompt_language: str = "EN"

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompt_language", self.prompt_language.upper())
        blanks = sum(1 for m in _PLACEHOLDER.finditer(self.template) if m.group(1) == "BLANK")
        xs = sum(1 for m in _PLACEHOLDER.finditer(self.template) if m.group(1) == "X")
        if blanks != 1:
            raise PatternError(f"pattern {self.id}: template must contain exactly one {{BLANK}}")
        if xs > 1:
            raise PatternError(f"pattern {self.id}: template may contain at most one {{X}}")
        for m in _PLACEHOLDER.finditer(self.template):
            if m.group(2) is not None and int(m.group(2)) < 1:
                raise PatternError(f"pattern {self.id}: {{IDIOM_k}} requires k >= 1")

    @property
    def uses_idiom(self) -> bool:
        return any(m.group(1).startswith("IDIOM") for m in _PLACEHOLDER.finditer(self.template))


@dataclass(frozen=True)
class Verbalizer:
    literal_token: str
    idiom_token: str

    def __post_init__(self) -> None:
        if not self.literal_token or not self.idiom_token:
            raise PatternError("verbalizer tokens must be non-empty")
        if self.literal_token == self.idiom_token:
            raise PatternError("verbalizer tokens must be distinct")


@dataclass(frozen=True)
class PatternVerbalizerPair:
    pattern: Pattern
    verbalizer: Verbalizer

    @property
    def id(self) -> str:
        return self.pattern.id


@dataclass(frozen=True)
class MaskedText:
    """A rendered cloze input; ``mask_index`` is filled in by the adapter's tokenizer."""

    text: str
    mask_marker: str
    mask_index: Optional[int] = None


def render(pvp: PatternVerbalizerPair, example: Example, mask_marker: str) -> MaskedText:
    """Substitute the pattern's placeholders for one example.

    The template is scanned once, so placeholder-like text inside the sentence
    or MWE is never re-expanded. Exactly one mask marker ends up in the output.
    """
    if not example.sentence:
        raise RenderError(f"example {example.id}: empty sentence")
    template = pvp.pattern.template
    if pvp.pattern.uses_idiom and not example.mwe.strip():
        raise RenderError(f"example {example.id}: pattern {pvp.id} needs an MWE")

    parts: list[str] = []
    cursor = 0
    for m in _PLACEHOLDER.finditer(template):
        parts.append(template[cursor : m.start()])
        name, index = m.group(1), m.group(2)
        if name == "X":
            value = example.sentence
        elif name == "BLANK":
            value = mask_marker
        elif index is None:  # {IDIOM}
            value = example.mwe
        else:
            try:
                value = idiom_component(example.mwe, int(index))
            except ValueError as exc:
                raise RenderError(f"example {example.id}: {exc}") from None
        if name != "BLANK" and mask_marker in value:
            raise RenderError(
                f"example {example.id}: substituted text contains the mask marker {mask_marker!r}"
            )
        parts.append(value)
        cursor = m.end()
    parts.append(template[cursor:])
    return MaskedText(text="".join(parts), mask_marker=mask_marker)


# Built-in inventory. The five English templates pair generic prompts (P1, P2)
# with idiom-highlighting prompts (P3..P5); P4 additionally exists in
# Portuguese and Galician with yes/no verbalizers in those languages.
_EN_PVPS = (
    ("P1", "{X}: {BLANK}", "literal", "phrase"),
    ("P2", "({BLANK}) {X}", "literal", "phrase"),
    ("P3", "{X}. {IDIOM} is {BLANK} literal.", "actually", "not"),
    ("P4", "{X}. {BLANK}, {IDIOM} is literal.", "yes", "no"),
    ("P5", "{X}. {IDIOM} is {BLANK} {IDIOM_2}", "actually", "not"),
)

_TRANSLATED_P4 = {
    "PT": ("{X}. {BLANK}, {IDIOM} é literal.", "sim", "não"),
    "GL": ("{X}. {BLANK}, {IDIOM} é literal.", "si", "non"),
}


def builtin_pvps(prompt_language: str = "EN") -> list[PatternVerbalizerPair]:
    """Return the built-in PVPs for a prompt language (EN: P1..P5; PT/GL: P4)."""
    lang = prompt_language.upper()
    if lang == "EN":
        return [
            PatternVerbalizerPair(
                Pattern(id=pid, template=tpl, prompt_language="EN"),
                Verbalizer(literal_token=lit, idiom_token=idm),
            )
            for pid, tpl, lit, idm in _EN_PVPS
        ]
    if lang in _TRANSLATED_P4:
        tpl, lit, idm = _TRANSLATED_P4[lang]
        return [
            PatternVerbalizerPair(
                Pattern(id="P4", template=tpl, prompt_language=lang),
                Verbalizer(literal_token=lit, idiom_token=idm),
            )
        ]
    raise ValueError(f"no built-in patterns for prompt language {prompt_language!r}")


def builtin_pvp(pvp_id: str, prompt_language: str = "EN") -> PatternVerbalizerPair:
    for pvp in builtin_pvps(prompt_language):
        if pvp.id == pvp_id:
            return pvp
    raise ValueError(f"no built-in pattern {pvp_id!r} for language {prompt_language!r}")


def load_pvp_file(path: str | Path) -> list[PatternVerbalizerPair]:
    """Load user-defined PVPs from a headered TSV.

    Columns: ``id  template  prompt_language  literal_token  idiom_token``.
    """
    path = Path(path)
    required = ("id", "template", "prompt_language", "literal_token", "idiom_token")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        if reader.fieldnames is None:
            raise CorpusError(f"{path}: empty pattern file")
        for column in required:
            if column not in reader.fieldnames:
                raise CorpusError(f"{path}: missing required column {column!r}")
        pvps = []
        for row_no, row in enumerate(reader, start=1):
            try:
                pvps.append(
                    PatternVerbalizerPair(
                        Pattern(
                            id=row["id"],
                            template=row["template"],
                            prompt_language=row["prompt_language"],
                        ),
                        Verbalizer(
                            literal_token=row["literal_token"],
                            idiom_token=row["idiom_token"],
                        ),
                    )
                )
            except (PatternError, TypeError) as exc:
                raise CorpusError(f"{path}: row {row_no}: {exc}") from None
    if not pvps:
        raise CorpusError(f"{path}: pattern file has a header but no data rows")
    return pvps
