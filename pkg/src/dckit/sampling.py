"""Condition sampling: choosing ID conditions and pairing them with style conditions.

The ID pipeline removes candidates that match a reference bank, drops
candidates by attribute tag (e.g. ``sunglasses``), keeps a greedy unique
subset, then selects subjects either at random or balanced across attribute
groups. Each selected ID is paired with style-bank entries, optionally
restricted to entries with the same tag, and can be oversampled with
self-pairs.

Randomness comes from ``numpy.random.Generator(PCG64(seed))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from dckit.embedding_store import LabeledEmbeddingSet
from dckit.errors import (
    FormatError,
    MissingAttributeError,
    PreconditionError,
    ShapeMismatchError,
    UnmatchedAttributeError,
)
from dckit.metrics import DEFAULT_TAU, _unit_rows, uniqueness_unlabeled

ALGORITHM_VERSION = 1

#: style_index value of an oversampled pair that uses the ID image as its own style
SELF_STYLE = -1

ID_MODES = ("random", "balance")
STYLE_MODES = ("random", "match")
STAGE_ORDERS = ("dedup_first", "attribute_first")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFF_FFFF_FFFF_FFFF))


@dataclass(frozen=True)
class ConditionPair:
    label: int
    id_index: int
    style_index: int

    @property
    def is_self(self) -> bool:
        return self.style_index == SELF_STYLE

    def to_json(self) -> str:
        style = "self" if self.is_self else self.style_index
        return json.dumps({"label": self.label, "id_index": self.id_index, "style_index": style})

    @classmethod
    def from_json(cls, line: str) -> "ConditionPair":
        doc = json.loads(line)
        style = SELF_STYLE if doc["style_index"] == "self" else int(doc["style_index"])
        return cls(int(doc["label"]), int(doc["id_index"]), style)


@dataclass(frozen=True)
class SamplingPlan:
    subjects: int
    images_per_subject: int
    seed: int = 0
    id_mode: str = "random"
    style_mode: str = "random"
    oversample_count: int = 0
    tau: float = DEFAULT_TAU
    exclude_tags: Tuple[str, ...] = ("sunglasses",)
    stage_order: str = "dedup_first"

    def __post_init__(self):
        if self.id_mode not in ID_MODES:
            raise PreconditionError(f"id_mode must be one of {ID_MODES}, got {self.id_mode!r}")
        if self.style_mode not in STYLE_MODES:
            raise PreconditionError(f"style_mode must be one of {STYLE_MODES}, got {self.style_mode!r}")
        if self.stage_order not in STAGE_ORDERS:
            raise PreconditionError(f"stage_order must be one of {STAGE_ORDERS}, got {self.stage_order!r}")
        if self.subjects < 1 or self.images_per_subject < 1:
            raise PreconditionError("subjects and images_per_subject must be positive")
        if self.oversample_count < 0:
            raise PreconditionError("oversample_count must be non-negative")
        if not -1 < self.tau <= 1:
            raise PreconditionError(f"tau={self.tau} outside (-1, 1]")
        object.__setattr__(self, "exclude_tags", tuple(self.exclude_tags))

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplingPlan":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise FormatError(f"unknown plan fields: {unknown}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise FormatError(f"invalid plan: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "SamplingPlan":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except ValueError as exc:
                raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise FormatError(f"{path}: plan must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "id_mode": self.id_mode,
            "style_mode": self.style_mode,
            "oversample_count": self.oversample_count,
            "subjects": self.subjects,
            "images_per_subject": self.images_per_subject,
            "seed": self.seed,
            "tau": self.tau,
            "exclude_tags": list(self.exclude_tags),
            "stage_order": self.stage_order,
        }


def _record_tags(feature_set: LabeledEmbeddingSet, indices) -> List[str]:
    tags = []
    for i in indices:
        label = int(feature_set.labels[i])
        tag = feature_set.attribute_of(label)
        if tag is None:
            raise MissingAttributeError(label)
        tags.append(tag)
    return tags


def dedup_against_reference(
    candidates: LabeledEmbeddingSet, reference: LabeledEmbeddingSet, tau: float = DEFAULT_TAU
) -> List[int]:
    """Indices of candidates whose maximum cosine similarity to every reference is below ``tau``."""
    if len(candidates) == 0:
        return []
    if len(reference) == 0:
        return list(range(len(candidates)))
    if candidates.dim != reference.dim:
        raise ShapeMismatchError(f"candidate dim {candidates.dim} != reference dim {reference.dim}")
    cand = _unit_rows(candidates.vectors.astype(np.float64))
    ref = _unit_rows(reference.vectors.astype(np.float64))
    max_sim = np.full(cand.shape[0], -np.inf)
    for s in range(0, ref.shape[0], 4096):
        np.maximum(max_sim, (cand @ ref[s:s + 4096].T).max(axis=1), out=max_sim)
    return np.flatnonzero(max_sim < tau).tolist()


def attribute_filter(
    candidates: LabeledEmbeddingSet,
    predicate: Callable[[str], bool],
    indices: Optional[Sequence[int]] = None,
) -> List[int]:
    """Indices (from ``indices``, default all) whose attribute tag satisfies ``predicate``."""
    if indices is None:
        indices = range(len(candidates))
    indices = list(indices)
    tags = _record_tags(candidates, indices)
    return [i for i, tag in zip(indices, tags) if predicate(tag)]


def exclude_tags(tags: Sequence[str]) -> Callable[[str], bool]:
    banned = frozenset(tags)
    return lambda tag: tag not in banned


def balanced_quotas(group_sizes: Dict[str, int], n: int) -> Dict[str, int]:
    """Per-group counts for ``n`` picks, as equal as capacity allows.

    One pick at a time is handed out round-robin over groups in lexicographic
    tag order, skipping groups that are exhausted, so small groups contribute
    all their members and the deficit spreads over the rest.
    """
    total = sum(group_sizes.values())
    if n > total:
        raise PreconditionError(f"cannot select {n} from {total} candidates")
    quotas = {tag: 0 for tag in sorted(group_sizes)}
    open_groups = [tag for tag in quotas if group_sizes[tag] > 0]
    remaining = n
    while remaining:
        # whole rounds at once, then a partial round in tag order
        per_round = min(remaining // len(open_groups), min(group_sizes[t] - quotas[t] for t in open_groups))
        if per_round:
            for tag in open_groups:
                quotas[tag] += per_round
            remaining -= per_round * len(open_groups)
        else:
            for tag in open_groups[:remaining]:
                quotas[tag] += 1
            remaining -= min(remaining, len(open_groups))
        open_groups = [t for t in open_groups if quotas[t] < group_sizes[t]]
    return quotas


def balanced_sample(indices: Sequence[int], tags: Sequence[str], n: int, seed: int) -> List[int]:
    """Select ``n`` of ``indices`` with per-tag counts from :func:`balanced_quotas`.

    Members within a group are drawn uniformly without replacement. The result
    keeps the input order of ``indices``.
    """
    indices = list(indices)
    if len(tags) != len(indices):
        raise PreconditionError(f"{len(tags)} tags for {len(indices)} candidates")
    if n < 0:
        raise PreconditionError("n must be non-negative")
    groups: Dict[str, List[int]] = {}
    for pos, tag in enumerate(tags):
        groups.setdefault(tag, []).append(pos)
    quotas = balanced_quotas({t: len(p) for t, p in groups.items()}, n)
    rng = make_rng(seed)
    chosen = []
    for tag in sorted(groups):
        members = groups[tag]
        take = quotas[tag]
        if take == len(members):
            chosen.extend(members)
        elif take:
            chosen.extend(np.asarray(members)[rng.choice(len(members), size=take, replace=False)].tolist())
    return [indices[p] for p in sorted(chosen)]


def random_sample(indices: Sequence[int], n: int, seed: int) -> List[int]:
    indices = list(indices)
    if n > len(indices):
        raise PreconditionError(f"cannot select {n} from {len(indices)} candidates")
    picks = make_rng(seed).choice(len(indices), size=n, replace=False)
    return [indices[p] for p in sorted(picks.tolist())]


def pair_styles(
    ids: Sequence[int],
    style_bank: LabeledEmbeddingSet,
    plan: SamplingPlan,
    id_tags: Optional[Sequence[str]] = None,
) -> List[ConditionPair]:
    """``plan.subjects x plan.images_per_subject`` pairs; label ``i`` uses ``ids[i]``.

    In ``match`` mode ``id_tags[i]`` must be given and styles are drawn only
    from bank entries with the same tag.
    """
    ids = list(ids)
    if len(ids) != plan.subjects:
        raise PreconditionError(f"plan asks for {plan.subjects} subjects but {len(ids)} IDs were given")
    if len(style_bank) == 0:
        raise PreconditionError("style bank is empty")
    rng = make_rng(plan.seed + 1)
    per = plan.images_per_subject
    if plan.style_mode == "random":
        styles = rng.integers(0, len(style_bank), size=(len(ids), per))
    else:
        if id_tags is None or len(id_tags) != len(ids):
            raise PreconditionError("match mode needs one attribute tag per ID")
        bank_tags = np.asarray(_record_tags(style_bank, range(len(style_bank))))
        pools = {tag: np.flatnonzero(bank_tags == tag) for tag in sorted(set(id_tags))}
        for tag, pool in pools.items():
            if pool.size == 0:
                raise UnmatchedAttributeError(tag)
        styles = np.stack([pools[tag][rng.integers(0, pools[tag].size, size=per)] for tag in id_tags])
    return [
        ConditionPair(label=label, id_index=int(id_index), style_index=int(s))
        for label, (id_index, row) in enumerate(zip(ids, styles))
        for s in row
    ]


def oversample_ids(pairs: Sequence[ConditionPair], m: int = 5) -> List[ConditionPair]:
    """Append ``m`` self-pairs per label (ascending label order) after the original pairs."""
    if m < 0:
        raise PreconditionError("m must be non-negative")
    out = list(pairs)
    origin: Dict[int, int] = {}
    for p in pairs:
        origin.setdefault(p.label, p.id_index)
    for label in sorted(origin):
        out.extend(ConditionPair(label, origin[label], SELF_STYLE) for _ in range(m))
    return out


@dataclass
class SamplingResult:
    pairs: List[ConditionPair]
    selected_ids: List[int]
    stage_counts: Dict[str, int] = field(default_factory=dict)

    def to_jsonl(self) -> str:
        return "".join(p.to_json() + "\n" for p in self.pairs)


def run_sampling(
    candidates: LabeledEmbeddingSet,
    reference: Optional[LabeledEmbeddingSet],
    style_bank: LabeledEmbeddingSet,
    plan: SamplingPlan,
) -> SamplingResult:
    """Full ID pipeline then style pairing and oversampling.

    Stage order is ``dedup -> attribute -> unique -> selection`` by default;
    ``plan.stage_order == "attribute_first"`` swaps the first two. The
    attribute stage is skipped when the candidate set carries no tags at all.
    """
    counts = {"candidates": len(candidates)}
    remaining = list(range(len(candidates)))

    def dedup(idx):
        if reference is None or len(reference) == 0:
            return idx
        keep = set(dedup_against_reference(candidates.subset(idx), reference, plan.tau))
        return [i for pos, i in enumerate(idx) if pos in keep]

    def attribute(idx):
        if not candidates.attributes or not plan.exclude_tags:
            return idx
        return attribute_filter(candidates, exclude_tags(plan.exclude_tags), idx)

    stages = [("dedup", dedup), ("attribute", attribute)]
    if plan.stage_order == "attribute_first":
        stages.reverse()
    for name, stage in stages:
        remaining = stage(remaining)
        counts[name] = len(remaining)

    if remaining:
        _, kept = uniqueness_unlabeled(candidates.vectors[remaining], plan.tau)
        remaining = [remaining[k] for k in kept]
    counts["unique"] = len(remaining)

    if plan.subjects > len(remaining):
        raise PreconditionError(
            f"plan asks for {plan.subjects} subjects but only {len(remaining)} candidates survive filtering"
        )
    if plan.id_mode == "balance":
        selected = balanced_sample(remaining, _record_tags(candidates, remaining), plan.subjects, plan.seed)
    else:
        selected = random_sample(remaining, plan.subjects, plan.seed)
    counts["selected"] = len(selected)

    id_tags = _record_tags(candidates, selected) if plan.style_mode == "match" else None
    pairs = pair_styles(selected, style_bank, plan, id_tags=id_tags)
    if plan.oversample_count:
        pairs = oversample_ids(pairs, plan.oversample_count)
    counts["pairs"] = len(pairs)
    return SamplingResult(pairs=pairs, selected_ids=selected, stage_counts=counts)
