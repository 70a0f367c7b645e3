"""Episodic core: one-vs-rest task formation, parent-children alignment,
prototypes, distance-softmax probabilities, taxonomy-aware embedded labels,
and the max-coupled episode loss.

A multi-label query spawns one single-label task per in-pool label: the
label becomes the task's active class, the remaining roster slots are drawn
from non-active pool classes, and every roster class receives a support set.
When a query carries both a child and its parent label, the child task is
aligned with the parent task: the child's own-class supports are swapped for
the parent's and the slot is relabelled, pushing the model to recognize the
more abstract class at least as well. The episode loss couples each such
pair through a max, so the harder of the two tasks dominates; independent
labels simply add up, which makes the whole construction collapse to plain
one-vs-rest prototypical networks on a flat taxonomy.

All sampling is driven by an explicit numpy Generator over canonically
sorted candidate lists, so runs are reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ConfigError,
    DataError,
    InfeasibleTaskError,
    NumericError,
    ShapeError,
    StateError,
)
from .taxonomy import ClassId, Taxonomy

DISTANCES = ("sqeuclidean", "cosine", "dot")


@dataclass(frozen=True)
class EpisodeConfig:
    n_way: int = 12
    k_shot: int = 5
    distance: str = "sqeuclidean"
    beta: float | None = None  # embedded-label sharpness; None = one-hot targets

    def __post_init__(self):
        if self.n_way < 2:
            raise ConfigError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ConfigError("k_shot must be >= 1")
        if self.distance not in DISTANCES:
            raise ConfigError(
                f"unknown distance {self.distance!r}; pick one of {DISTANCES}"
            )
        if self.beta is not None and self.beta <= 0:
            raise ConfigError("beta must be positive (omit it for one-hot targets)")


@dataclass(frozen=True)
class Task:
    """One single-label classification problem derived from a query.

    ``source_label`` is the query label that spawned the task and stays
    fixed under alignment; ``active_class`` is the positive roster class and
    moves to the parent when the task is aligned.
    """

    query_id: str
    source_label: ClassId
    active_class: ClassId
    roster: tuple[ClassId, ...]
    support: Mapping[ClassId, tuple[str, ...]]

    def __post_init__(self):
        if len(set(self.roster)) != len(self.roster):
            raise DataError(f"task roster has duplicate classes: {self.roster}")
        if self.active_class not in self.roster:
            raise DataError(
                f"active class {self.active_class!r} missing from roster"
            )
        if set(self.support) != set(self.roster):
            raise DataError("support map must cover exactly the roster classes")
        for c, ids in self.support.items():
            if self.query_id in ids:
                raise DataError(
                    f"query {self.query_id!r} leaked into the support set of {c!r}"
                )


@dataclass(frozen=True)
class PrototypeSet:
    """Per-class mean embeddings, rows aligned with ``classes``."""

    classes: tuple[ClassId, ...]
    vectors: Tensor  # [n_classes, dim]

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.classes):
            raise ShapeError(
                f"prototype matrix {self.vectors.shape} does not match "
                f"{len(self.classes)} classes"
            )
        if not np.all(np.isfinite(self.vectors.data)):
            raise NumericError("prototype set contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class EmbeddedLabel:
    """A soft target distribution over a task roster."""

    classes: tuple[ClassId, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        p = self.probabilities
        if p.shape != (len(self.classes),):
            raise ShapeError("embedded label length must match its roster")
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
            raise NumericError("embedded label must be a probability vector")


# -- example pools -----------------------------------------------------------


class ExamplePool:
    """A set of examples visible through one split's class set.

    Labels outside ``classes`` are masked, not deleted: an example keeps its
    full label set, but only in-pool labels can become actives, negatives,
    or support assignments.
    """

    def __init__(
        self,
        classes: Iterable[ClassId],
        labels_by_id: Mapping[str, Iterable[ClassId]],
        features: Mapping[str, np.ndarray] | None = None,
    ):
        self.classes: tuple[ClassId, ...] = tuple(sorted(set(classes)))
        class_set = frozenset(self.classes)
        self._labels: dict[str, frozenset[ClassId]] = {
            cid: frozenset(labels) for cid, labels in labels_by_id.items()
        }
        self._visible: dict[str, frozenset[ClassId]] = {
            cid: labels & class_set for cid, labels in self._labels.items()
        }
        self._members: dict[ClassId, tuple[str, ...]] = {
            c: tuple(sorted(cid for cid, vis in self._visible.items() if c in vis))
            for c in self.classes
        }
        self.features = features if features is not None else {}

    def __len__(self) -> int:
        return len(self._labels)

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._labels))

    def labels(self, clip_id: str) -> frozenset[ClassId]:
        try:
            return self._labels[clip_id]
        except KeyError:
            raise DataError(f"unknown example id {clip_id!r}") from None

    def visible_labels(self, clip_id: str) -> frozenset[ClassId]:
        try:
            return self._visible[clip_id]
        except KeyError:
            raise DataError(f"unknown example id {clip_id!r}") from None

    def members(self, c: ClassId) -> tuple[str, ...]:
        try:
            return self._members[c]
        except KeyError:
            raise DataError(f"class {c!r} is not visible in this pool") from None

    def feature(self, clip_id: str) -> np.ndarray:
        try:
            return self.features[clip_id]
        except KeyError:
            raise DataError(f"no features for example {clip_id!r}") from None

    def restrict_to_feasible(self, k_shot: int) -> "ExamplePool":
        """Drop classes that cannot field k_shot supports plus one query."""
        keep = [c for c in self.classes if len(self._members[c]) >= k_shot + 1]
        return ExamplePool(keep, self._labels, self.features)

    def query_candidates(self) -> tuple[str, ...]:
        """Examples with at least one in-pool label, sorted."""
        return tuple(sorted(cid for cid, vis in self._visible.items() if vis))


# -- task formation -----------------------------------------------------------


def _sample_without_replacement(rng: np.random.Generator, items: Sequence, k: int) -> list:
    if k == 0:
        return []
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[i] for i in idx]


def _sample_supports(
    pool: ExamplePool,
    cls: ClassId,
    roster: Sequence[ClassId],
    k_shot: int,
    query_id: str,
    rng: np.random.Generator,
) -> tuple[str, ...]:
    """k_shot support ids for one roster class, preferring examples whose
    visible labels meet the roster only at that class."""
    members = [m for m in pool.members(cls) if m != query_id]
    if len(members) < k_shot:
        raise InfeasibleTaskError(
            f"class {cls!r} has only {len(members)} usable examples, "
            f"needs {k_shot}"
        )
    roster_set = frozenset(roster)
    pure = [m for m in members if pool.visible_labels(m) & roster_set == {cls}]
    mixed = [m for m in members if m not in set(pure)]
    take_pure = min(k_shot, len(pure))
    chosen = _sample_without_replacement(rng, pure, take_pure)
    if take_pure < k_shot:
        chosen += _sample_without_replacement(rng, mixed, k_shot - take_pure)
    return tuple(chosen)


def form_tasks(
    query_id: str,
    pool: ExamplePool,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
) -> list[Task]:
    """One task per in-pool query label.

    Roster negatives are drawn uniformly without replacement from pool
    classes that are neither the active class nor another query label;
    the other query labels are only admitted as negatives when the pool is
    too small to avoid them (the forced-roster case).
    """
    query_labels = sorted(pool.visible_labels(query_id))
    tasks: list[Task] = []
    for active in query_labels:
        others = [c for c in pool.classes if c != active and c not in query_labels]
        if len(others) < cfg.n_way - 1:
            others = [c for c in pool.classes if c != active]
        if len(others) < cfg.n_way - 1:
            raise InfeasibleTaskError(
                f"pool has {len(pool.classes)} classes; cannot draw "
                f"{cfg.n_way - 1} negatives for active class {active!r}"
            )
        negatives = _sample_without_replacement(rng, others, cfg.n_way - 1)
        roster = tuple([active] + negatives)
        support = {
            c: _sample_supports(pool, c, roster, cfg.k_shot, query_id, rng)
            for c in roster
        }
        tasks.append(
            Task(
                query_id=query_id,
                source_label=active,
                active_class=active,
                roster=roster,
                support=support,
            )
        )
    return tasks


def align_parent_child(tasks: Sequence[Task], taxonomy: Taxonomy) -> list[Task]:
    """Couple each child task with its parent task when both labels sit on
    the same query.

    In the child's task the active slot is relabelled to the parent class
    and receives the parent task's own-class supports; everything else stays
    put. Pairs are resolved against the pre-alignment tasks, so chains of
    three or more labels align pairwise and independently. In the forced
    corner where the parent was already sampled as a negative of the child
    task, the two slots swap labels to keep the roster duplicate-free.
    """
    original = {t.source_label: t for t in tasks}
    out: list[Task] = []
    for t in tasks:
        parent = taxonomy.parent_of(t.source_label)
        if parent is None or parent not in original:
            out.append(t)
            continue
        parent_supports = original[parent].support[parent]
        roster = list(t.roster)
        support = dict(t.support)
        slot = roster.index(t.active_class)
        if parent in roster:
            # parent already sampled as a negative: swap the two labels so
            # the roster stays duplicate-free; the child keeps its own
            # supports in the demoted slot
            roster[roster.index(parent)] = t.active_class
        else:
            support.pop(t.source_label)
        roster[slot] = parent
        support[parent] = parent_supports
        out.append(
            replace(
                t,
                active_class=parent,
                roster=tuple(roster),
                support=support,
            )
        )
    return out


# -- prototype math -----------------------------------------------------------


def compute_prototypes(
    supports: Mapping[ClassId, Sequence], dim_check: bool = True
) -> PrototypeSet:
    """Arithmetic mean of each class's support embeddings, in mapping order.

    Support list sizes may differ per class; each class is averaged over its
    own count.
    """
    classes = tuple(supports)
    if not classes:
        raise DataError("cannot build prototypes from an empty support map")
    rows = []
    for c in classes:
        embeddings = [ad.astensor(e) for e in supports[c]]
        if not embeddings:
            raise DataError(f"class {c!r} has an empty support list")
        rows.append(ad.tmean(ad.stack(embeddings, axis=0), axis=0))
    return PrototypeSet(classes=classes, vectors=ad.stack(rows, axis=0))


def pairwise_distances(query_embedding, protos: PrototypeSet, distance: str) -> Tensor:
    """Distance from one query embedding to every prototype, roster order."""
    q = ad.astensor(query_embedding)
    if q.ndim != 1 or q.shape[0] != protos.dim:
        raise ShapeError(
            f"query embedding shape {q.shape} does not match prototype dim "
            f"{protos.dim}"
        )
    a = protos.vectors
    if distance == "sqeuclidean":
        diff = ad.sub(a, q)
        return ad.tsum(ad.square(diff), axis=1)
    if distance == "dot":
        return ad.mul(ad.matmul(a, q), -1.0)
    if distance == "cosine":
        eps = 1e-12
        qn = ad.sqrt(ad.add(ad.tsum(ad.square(q)), eps))
        an = ad.sqrt(ad.add(ad.tsum(ad.square(a), axis=1), eps))
        cos = ad.div(ad.div(ad.matmul(a, q), an), qn)
        return ad.sub(1.0, cos)
    raise ConfigError(f"unknown distance {distance!r}")


def class_probabilities(query_embedding, protos: PrototypeSet, distance: str = "sqeuclidean") -> Tensor:
    """softmax(-distance) over the prototype roster."""
    q = ad.astensor(query_embedding)
    if not np.all(np.isfinite(q.data)):
        raise NumericError("query embedding contains non-finite values")
    d = pairwise_distances(q, protos, distance)
    return ad.softmax(ad.mul(d, -1.0))


def one_hot_target(roster: Sequence[ClassId], positive: ClassId) -> np.ndarray:
    idx = list(roster).index(positive)
    t = np.zeros(len(roster))
    t[idx] = 1.0
    return t


def uniform_target(roster: Sequence[ClassId]) -> np.ndarray:
    """The explicit beta -> 0 limit of the embedded label."""
    n = len(roster)
    return np.full(n, 1.0 / n)


def embed_labels(
    roster: Sequence[ClassId],
    positive: ClassId,
    taxonomy: Taxonomy,
    beta: float,
) -> EmbeddedLabel:
    """Taxonomy-aware soft target: each class's probability decays
    exponentially with its hop distance from the positive class.

    p(c) = exp(-beta * d(c, positive)) normalized over the roster. The
    positive class always takes the strict maximum since d = 0 only there;
    large beta approaches one-hot. beta must be positive; use
    :func:`uniform_target` for the explicit beta -> 0 limit.
    """
    roster = tuple(roster)
    if positive not in roster:
        raise DataError(f"positive class {positive!r} missing from roster")
    if beta is None or beta <= 0:
        raise ConfigError("beta must be a positive real")
    dist = np.array([taxonomy.distance(c, positive) for c in roster], dtype=np.float64)
    logits = -beta * dist
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    return EmbeddedLabel(classes=roster, probabilities=p)


def task_loss(probabilities, target) -> Tensor:
    """Cross-entropy -sum(p * log q) with predictions clamped at 1e-12.

    ``target`` may be a plain probability vector (e.g. one-hot) or an
    EmbeddedLabel; with a one-hot target this is -log q(active).
    """
    q = probabilities if isinstance(probabilities, Tensor) else ad.astensor(probabilities)
    p = target.probabilities if isinstance(target, EmbeddedLabel) else np.asarray(target, dtype=np.float64)
    if q.ndim != 1 or p.shape != q.shape:
        raise ShapeError(
            f"probabilities {q.shape} and target {p.shape} must be equal-length vectors"
        )
    return ad.mul(ad.tsum(ad.mul(ad.log(ad.clamp_min(q, 1e-12)), p)), -1.0)


def episode_loss(
    per_label_losses: Mapping[ClassId, Tensor],
    query_labels: Iterable[ClassId],
    taxonomy: Taxonomy | None,
) -> Tensor:
    """Sum of per-label task losses with parent-child pairs fused by a max.

    Deepest labels claim their parents first; a parent consumed by a max
    contributes no further term, so nothing is double-counted. Ties inside
    a max resolve to the parent branch. With no parent-child pairs (or no
    taxonomy) this is a plain sum over the canonically sorted labels.
    """
    labels = sorted(set(query_labels))
    missing = [c for c in labels if c not in per_label_losses]
    if missing:
        raise StateError(f"missing task losses for query labels: {missing}")
    if taxonomy is None:
        order = labels
        parent_of = {c: None for c in labels}
    else:
        order = sorted(labels, key=lambda c: (-taxonomy.depth(c), c))
        parent_of = {c: taxonomy.parent_of(c) for c in labels}

    label_set = set(labels)
    consumed: set[ClassId] = set()
    terms: list[Tensor] = []
    for c in order:
        if c in consumed:
            continue
        consumed.add(c)
        parent = parent_of[c]
        if parent is not None and parent in label_set and parent not in consumed:
            consumed.add(parent)
            child_loss = per_label_losses[c]
            parent_loss = per_label_losses[parent]
            # subgradient of the attaining branch; ties go to the parent
            pick = parent_loss if parent_loss.data >= child_loss.data else child_loss
            terms.append(pick)
        else:
            terms.append(per_label_losses[c])
    # canonical accumulation order for bit-reproducibility
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


# -- full episodes --------------------------------------------------------------


@dataclass(frozen=True)
class TaskResult:
    task: Task
    probabilities: np.ndarray  # softmax over the roster, detached
    target: np.ndarray
    loss: float


@dataclass(frozen=True)
class EpisodeResult:
    loss: Tensor  # scalar, attached to the network's graph
    tasks: tuple[TaskResult, ...]

    @property
    def loss_value(self) -> float:
        return float(self.loss.data)


def _embed_unique(net, pool: ExamplePool, ids: Sequence[str]) -> dict[str, Tensor]:
    """Embed each distinct example once; shared examples share gradients."""
    unique = sorted(set(ids))
    batch = np.stack([pool.feature(i) for i in unique], axis=0)
    out = net.forward(batch)  # [B, D]
    return {cid: out[i] for i, cid in enumerate(unique)}


def run_episode(
    query_id: str,
    pool: ExamplePool,
    net,
    cfg: EpisodeConfig,
    taxonomy: Taxonomy,
    rng: np.random.Generator,
    *,
    align: bool = True,
    couple: bool = True,
) -> EpisodeResult:
    """Form, align, and score every task of one query; returns the coupled
    episode loss attached to the network graph.

    ``align=False, couple=False`` gives plain one-vs-rest behavior. Targets
    are embedded labels when cfg.beta is set, one-hot otherwise.
    """
    tasks = form_tasks(query_id, pool, cfg, rng)
    if not tasks:
        return EpisodeResult(loss=Tensor(np.float64(0.0)), tasks=())
    if align:
        tasks = align_parent_child(tasks, taxonomy)

    needed = [query_id]
    for t in tasks:
        for ids in t.support.values():
            needed.extend(ids)
    embeddings = _embed_unique(net, pool, needed)

    losses: dict[ClassId, Tensor] = {}
    results: list[TaskResult] = []
    for t in tasks:
        protos = compute_prototypes(
            {c: [embeddings[i] for i in t.support[c]] for c in t.roster}
        )
        probs = class_probabilities(embeddings[query_id], protos, cfg.distance)
        if cfg.beta is not None:
            target = embed_labels(t.roster, t.active_class, taxonomy, cfg.beta)
            target_vec = target.probabilities
        else:
            target_vec = one_hot_target(t.roster, t.active_class)
        loss = task_loss(probs, target_vec)
        losses[t.source_label] = loss
        results.append(
            TaskResult(
                task=t,
                probabilities=probs.data.copy(),
                target=target_vec,
                loss=float(loss.data),
            )
        )
    total = episode_loss(losses, list(losses), taxonomy if couple else None)
    return EpisodeResult(loss=total, tasks=tuple(results))


def run_baseline_episode(
    pool: ExamplePool,
    net,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
) -> EpisodeResult:
    """A standard single-label episode: sample an n_way roster, k_shot
    supports and one query per class, and average the per-query losses.

    Each (query, class) pairing is treated as a single-label point; the
    query's other labels are masked. Support draws do not prefer pure
    examples here, matching plain prototypical-network practice.
    """
    if len(pool.classes) < cfg.n_way:
        raise InfeasibleTaskError(
            f"pool has {len(pool.classes)} classes, episode needs {cfg.n_way}"
        )
    roster = tuple(_sample_without_replacement(rng, list(pool.classes), cfg.n_way))
    queries: dict[ClassId, str] = {}
    for c in roster:
        members = list(pool.members(c))
        if len(members) < cfg.k_shot + 1:
            raise InfeasibleTaskError(
                f"class {c!r} has {len(members)} examples, needs "
                f"{cfg.k_shot + 1} for supports plus a query"
            )
        queries[c] = _sample_without_replacement(rng, members, 1)[0]
    query_set = set(queries.values())
    supports: dict[ClassId, tuple[str, ...]] = {}
    for c in roster:
        members = [m for m in pool.members(c) if m not in query_set]
        if len(members) < cfg.k_shot:
            raise InfeasibleTaskError(
                f"class {c!r} has {len(members)} non-query examples, needs "
                f"{cfg.k_shot} supports"
            )
        supports[c] = tuple(_sample_without_replacement(rng, members, cfg.k_shot))

    needed = list(queries.values())
    for ids in supports.values():
        needed.extend(ids)
    embeddings = _embed_unique(net, pool, needed)
    protos = compute_prototypes(
        {c: [embeddings[i] for i in supports[c]] for c in roster}
    )

    results = []
    per_query: list[Tensor] = []
    for c in roster:
        probs = class_probabilities(embeddings[queries[c]], protos, cfg.distance)
        target_vec = one_hot_target(roster, c)
        loss = task_loss(probs, target_vec)
        per_query.append(loss)
        results.append(
            TaskResult(
                task=Task(
                    query_id=queries[c],
                    source_label=c,
                    active_class=c,
                    roster=roster,
                    support=supports,
                ),
                probabilities=probs.data.copy(),
                target=target_vec,
                loss=float(loss.data),
            )
        )
    total = per_query[0]
    for t in per_query[1:]:
        total = ad.add(total, t)
    total = ad.mul(total, 1.0 / len(per_query))
    return EpisodeResult(loss=total, tasks=tuple(results))
