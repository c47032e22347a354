"""Iterative PET: retrain members over generations on growing pseudo-labeled sets.

At generation g each member gets a training set of size
``min(|L| * d**g, |L| + |pool|)``: the labeled seed set plus the most
confident pseudo-labels drawn from *other* members' frozen predictions on the
pool, class-balanced to the requested ratio. Members retrain from fresh
initialization each generation.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Optional, Sequence

from .adapters.base import ClassDistribution, TrainHyper, class_probs_batch, fine_tune
from .corpus import Example
from .errors import IpetError
from .labels import Label
from .pet import BackendFactory, Ensemble, EnsembleMember, train_ensemble
from .pvp import PatternVerbalizerPair

AUDIT_COLUMNS = ("generation", "member", "example_id", "pseudo_label", "confidence", "labeling_member")


@dataclass(frozen=True)
class GenerationPlan:
    """Self-training schedule: how many generations, how fast sets grow."""

    generations: int = 2
    growth_factor: float = 5.0
    class_ratio: tuple[float, float] = (1.0, 1.0)  # idiomatic : literal

    def __post_init__(self) -> None:
        if self.generations < 1:
            raise ValueError("plan needs at least one generation")
        if self.growth_factor <= 1.0:
            raise ValueError("growth factor must exceed 1")
        if any(r <= 0 for r in self.class_ratio):
            raise ValueError("class ratio entries must be positive")

    def target_size(self, labeled_size: int, generation: int, pool_size: int) -> int:
        raw = int(round(labeled_size * self.growth_factor**generation))
        return min(raw, labeled_size + pool_size)


@dataclass(frozen=True)
class AuditRow:
    generation: int
    member: str
    example_id: str
    pseudo_label: Label
    confidence: float
    labeling_member: str


@dataclass
class GrownTrainingSet:
    examples: list[Example]
    audit: list[AuditRow]
    shortfall: int = 0


@dataclass
class IpetResult:
    ensemble: Ensemble
    audit: list[AuditRow] = field(default_factory=list)


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def _split_quota(n: int, ratio: tuple[float, float]) -> tuple[int, int]:
    """Split n into per-class quotas matching the ratio up to one example."""
    share = ratio[0] / (ratio[0] + ratio[1])
    idiomatic = int(round(n * share))
    return idiomatic, n - idiomatic


def next_training_set(
    models: Ensemble,
    self_index: int,
    unlabeled: Sequence[Example],
    labeled_seed_set: Sequence[Example],
    target_size: int,
    ratio: tuple[float, float] = (1.0, 1.0),
    seed: int = 0,
    generation: int = 1,
    prob_cache: Optional[dict[int, list[ClassDistribution]]] = None,
) -> GrownTrainingSet:
    """Grow one member's training set from other members' predictions.

    For each pool example one labeling member (never the member itself) is
    sampled under ``seed``; candidates are then taken per predicted class in
    descending confidence until the class quotas are met. A pool too small to
    meet the quota fills what is available and records the shortfall.
    """
    if len(models.members) < 2:
        raise ValueError("self-training needs at least two ensemble members")
    if not 0 <= self_index < len(models.members):
        raise ValueError(f"member index {self_index} out of range")
    if target_size < len(labeled_seed_set):
        raise ValueError("target size cannot be smaller than the labeled seed set")
    target_size = min(target_size, len(labeled_seed_set) + len(unlabeled))

    self_member = models.members[self_index]
    n_pseudo = target_size - len(labeled_seed_set)
    if n_pseudo == 0:
        return GrownTrainingSet(examples=list(labeled_seed_set), audit=[])

    if prob_cache is None:
        prob_cache = {
            i: class_probs_batch(m.adapter, m.pvp, unlabeled)
            for i, m in enumerate(models.members)
        }
    other_indices = [i for i in range(len(models.members)) if i != self_index]
    rng = Random(seed)
    candidates: dict[Label, list[tuple[float, str, Example, int]]] = {
        Label.IDIOMATIC: [],
        Label.LITERAL: [],
    }
    for pos, ex in enumerate(unlabeled):
        labeler = rng.choice(other_indices)
        dist = prob_cache[labeler][pos]
        candidates[dist.argmax()].append((dist.confidence, ex.id, ex, labeler))

    quota_i, quota_l = _split_quota(n_pseudo, ratio)
    chosen: list[tuple[Example, Label, float, int]] = []
    shortfall = 0
    for label, quota in ((Label.IDIOMATIC, quota_i), (Label.LITERAL, quota_l)):
        ranked = sorted(candidates[label], key=lambda c: (-c[0], c[1]))
        take = ranked[:quota]
        shortfall += quota - len(take)
        chosen.extend((ex, label, conf, labeler) for conf, _, ex, labeler in take)
    if shortfall:
        warnings.warn(
            f"pseudo-label shortfall of {shortfall} for member {self_member.name}: "
            "pool predictions cannot meet the class ratio",
            stacklevel=2,
        )

    examples = list(labeled_seed_set)
    audit = []
    for ex, label, conf, labeler in chosen:
        examples.append(ex.with_label(label))
        audit.append(
            AuditRow(
                generation=generation,
                member=self_member.name,
                example_id=ex.id,
                pseudo_label=label,
                confidence=conf,
                labeling_member=models.members[labeler].name,
            )
        )
    return GrownTrainingSet(examples=examples, audit=audit, shortfall=shortfall)


def ipet_run(
    pvps: Sequence[PatternVerbalizerPair],
    labeled: Sequence[Example],
    unlabeled: Sequence[Example],
    plan: GenerationPlan,
    seeds: Sequence[int],
    backend_factory: BackendFactory,
    hyper: TrainHyper,
    run_seed: int = 0,
) -> IpetResult:
    """Run the generational schedule and return the final ensemble.

    Generation 0 trains every member on the labeled seed set. Each later
    generation freezes the previous members' pool predictions, grows each
    member's training set from the other members' confident pseudo-labels,
    and retrains that member from a fresh backend. Soft annotation and
    distillation afterwards reuse the standard PET recipe unchanged.
    """
    if len(pvps) * len(seeds) < 2:
        raise ValueError("iPET needs at least two ensemble members per generation")
    ensemble = train_ensemble(pvps, labeled, seeds, backend_factory, hyper)
    audit: list[AuditRow] = []
    for generation in range(1, plan.generations + 1):
        target = plan.target_size(len(labeled), generation, len(unlabeled))
        cache = {
            i: class_probs_batch(m.adapter, m.pvp, unlabeled)
            for i, m in enumerate(ensemble.members)
        }
        retrained = []
        for index, member in enumerate(ensemble.members):
            grown = next_training_set(
                ensemble,
                index,
                unlabeled,
                labeled,
                target,
                ratio=plan.class_ratio,
                seed=_derive_seed(run_seed, generation, index),
                generation=generation,
                prob_cache=cache,
            )
            audit.extend(grown.audit)
            fresh = backend_factory(member.seed)
            if fresh.trainable:
                fine_tune(
                    fresh,
                    member.pvp,
                    grown.examples,
                    hyper,
                    _derive_seed(member.seed, generation),
                )
            retrained.append(
                EnsembleMember(pvp_id=member.pvp_id, seed=member.seed, pvp=member.pvp, adapter=fresh)
            )
        ensemble = Ensemble(members=retrained, provenance=ensemble.provenance)
    return IpetResult(ensemble=ensemble, audit=audit)


def write_audit_log(audit: Sequence[AuditRow], path: str | Path) -> None:
    """Per-generation audit log as headered TSV."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(AUDIT_COLUMNS) + "\n")
        for row in audit:
            fh.write(
                "\t".join(
                    (
                        str(row.generation),
                        row.member,
                        row.example_id,
                        row.pseudo_label.value,
                        f"{row.confidence:.6f}",
                        row.labeling_member,
                    )
                )
                + "\n"
            )
