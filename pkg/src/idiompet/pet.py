"""Pattern-exploiting training: per-PVP ensembles, soft labeling, distillation.

One model is fine-tuned per (pattern, seed) pair on the small labeled set.
The ensemble's averaged class probabilities over the unlabeled pool become
soft targets for a single final classifier, which consumes the same cloze
format through a designated pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .adapters.base import (
    ClassDistribution,
    MlmAdapter,
    TrainHyper,
    class_probs_batch,
    fine_tune,
)
from .corpus import Example
from .errors import IdiompetError, PetError
from .labels import DEFAULT_CODEC, Label, LabelCodec
from .pvp import PatternVerbalizerPair, builtin_pvp

BackendFactory = Callable[[int], MlmAdapter]


@dataclass
class EnsembleMember:
    pvp_id: str
    seed: int
    pvp: PatternVerbalizerPair
    adapter: MlmAdapter

    @property
    def name(self) -> str:
        return f"{self.pvp_id}-s{self.seed}"


@dataclass
class Ensemble:
    members: list[EnsembleMember]
    provenance: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.members:
            raise PetError("ensemble must have at least one member")
        keys = [(m.pvp_id, m.seed) for m in self.members]
        if len(set(keys)) != len(keys):
            raise PetError("duplicate (pvp, seed) pair in ensemble")

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class SoftLabeledSet:
    """Unlabeled examples paired with ensemble-averaged distributions."""

    entries: list[tuple[Example, ClassDistribution]]
    failures: list[tuple[str, str]] = field(default_factory=list)  # (example id, reason)

    def __post_init__(self) -> None:
        ids = [ex.id for ex, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise PetError("soft-labeled set has duplicate example ids")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class FinalClassifier:
    adapter: MlmAdapter
    pvp: PatternVerbalizerPair
    decision_rule: str = "argmax; exact tie predicts literal"


def train_ensemble(
    pvps: Sequence[PatternVerbalizerPair],
    labeled: Sequence[Example],
    seeds: Sequence[int],
    backend_factory: BackendFactory,
    hyper: TrainHyper,
) -> Ensemble:
    """Train one member per (pvp, seed) pair, each from a fresh backend.

    Non-trainable backends (the oracle) skip the gradient step but still
    occupy a member slot, so the rest of the pipeline is exercised unchanged.
    """
    if not pvps:
        raise ValueError("train_ensemble needs at least one PVP")
    if not seeds:
        raise ValueError("train_ensemble needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"duplicate seeds: {sorted(seeds)}")
    if not labeled:
        raise ValueError("train_ensemble needs labeled examples")
    pvp_ids = [pvp.id for pvp in pvps]
    if len(set(pvp_ids)) != len(pvp_ids):
        raise ValueError(f"duplicate PVP ids: {pvp_ids}")

    members = []
    for pvp in pvps:
        for seed in seeds:
            adapter = backend_factory(seed)
            if adapter.trainable:
                fine_tune(adapter, pvp, labeled, hyper, seed)
            members.append(EnsembleMember(pvp_id=pvp.id, seed=seed, pvp=pvp, adapter=adapter))
    return Ensemble(members=members)


def soft_annotate(
    ensemble: Ensemble,
    unlabeled: Sequence[Example],
    weights: Optional[Sequence[float]] = None,
) -> SoftLabeledSet:
    """Average member distributions over the pool (uniform unless weighted).

    An example that fails under some members is averaged over the members that
    accept it; it is dropped (and recorded) only when every member fails.
    """
    if weights is None:
        weights = [1.0] * len(ensemble.members)
    if len(weights) != len(ensemble.members):
        raise ValueError("one weight per ensemble member required")
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    ids = [ex.id for ex in unlabeled]
    if len(set(ids)) != len(ids):
        raise PetError("unlabeled pool has duplicate example ids")

    per_member: list[dict[str, ClassDistribution]] = []
    failures: list[tuple[str, str]] = []
    for member in ensemble.members:
        probs: dict[str, ClassDistribution] = {}
        try:
            dists = class_probs_batch(member.adapter, member.pvp, unlabeled)
            probs = {ex.id: dist for ex, dist in zip(unlabeled, dists)}
        except (IdiompetError, ValueError):
            # one bad row poisons the member's batch; fall back per example
            # and record which rows the member cannot score
            for ex in unlabeled:
                try:
                    probs[ex.id] = class_probs_batch(member.adapter, member.pvp, [ex])[0]
                except (IdiompetError, ValueError) as exc:
                    failures.append((ex.id, f"{member.name}: {exc}"))
        per_member.append(probs)

    entries = []
    dropped: list[tuple[str, str]] = []
    for ex in unlabeled:
        num_i = num_l = denom = 0.0
        for weight, probs in zip(weights, per_member):
            dist = probs.get(ex.id)
            if dist is None:
                continue
            num_i += weight * dist.p_idiomatic
            num_l += weight * dist.p_literal
            denom += weight
        if denom == 0.0:
            dropped.append((ex.id, "failed under all ensemble members"))
            continue
        entries.append(
            (ex, ClassDistribution(p_idiomatic=num_i / denom, p_literal=num_l / denom))
        )
    return SoftLabeledSet(entries=entries, failures=failures + dropped)


def _temper(dist: ClassDistribution, temperature: float) -> ClassDistribution:
    if temperature == 1.0:
        return dist
    pi = dist.p_idiomatic ** (1.0 / temperature)
    pl = dist.p_literal ** (1.0 / temperature)
    return ClassDistribution(p_idiomatic=pi / (pi + pl), p_literal=pl / (pi + pl))


def distill(
    softset: SoftLabeledSet,
    classifier_backend: MlmAdapter,
    hyper: TrainHyper,
    seed: int,
    pvp: Optional[PatternVerbalizerPair] = None,
    temperature: float = 1.0,
) -> FinalClassifier:
    """Train the final classifier against the ensemble's soft targets."""
    if not softset.entries:
        raise ValueError("distill needs a non-empty soft-labeled set")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if pvp is None:
        pvp = builtin_pvp("P4")
    examples = [ex for ex, _ in softset.entries]
    targets = [_temper(dist, temperature) for _, dist in softset.entries]
    fine_tune(classifier_backend, pvp, examples, hyper, seed, soft_targets=targets)
    return FinalClassifier(adapter=classifier_backend, pvp=pvp)


def predict(classifier: FinalClassifier, example: Example) -> Label:
    """Argmax of the classifier's class probabilities; exact ties predict literal."""
    return predict_batch(classifier, [example])[0]


def predict_batch(classifier: FinalClassifier, examples: Sequence[Example]) -> list[Label]:
    dists = class_probs_batch(classifier.adapter, classifier.pvp, examples)
    return [dist.argmax() for dist in dists]


def write_predictions(
    examples: Sequence[Example],
    labels: Sequence[Label],
    path: str | Path,
    codec: LabelCodec = DEFAULT_CODEC,
) -> None:
    """Prediction file: TSV ``id<TAB>label``, one row per example in input order."""
    if len(examples) != len(labels):
        raise ValueError("one label per example required")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tlabel\n")
        for ex, label in zip(examples, labels):
            fh.write(f"{ex.id}\t{codec.encode(label)}\n")


def read_predictions(path: str | Path, codec: LabelCodec = DEFAULT_CODEC) -> dict[str, Label]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header.split("\t")[:2] != ["id", "label"]:
            raise PetError(f"{path}: expected prediction header 'id<TAB>label'")
        out: dict[str, Label] = {}
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                ex_id, raw = line.split("\t")[:2]
                out[ex_id] = codec.decode(raw)
            except Exception as exc:
                raise PetError(f"{path}: line {line_no}: {exc}") from None
    if not out:
        raise PetError(f"{path}: no predictions found")
    return out
