"""Dataset curation: class eligibility, seeded label splits, de-smearing,
pool assignment, and overlap auditing.

The pipeline turns FSD50K-style clip metadata plus an ontology into a
curated few-shot dataset: pick the eligible class levels, split the label
set into base / novel-validation / novel-evaluation by ratio, migrate base
classes that end up data-starved because smeared (ancestor-propagated)
labels concentrate examples on a few label combinations, then assign every
clip to exactly one example pool. Clips touching both base and novel labels
stay in the novel pool with all labels kept; labels outside a pool's class
set are masked at episode time, never deleted.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, InfeasibleSplitError
from .taxonomy import ClassId, Taxonomy

POOL_NAMES = ("base", "validation", "evaluation")


@dataclass(frozen=True)
class ClipRecord:
    """One clip's identity, label set, and source split."""

    clip_id: str
    labels: frozenset[ClassId]
    source_split: str = "dev"  # "dev" or "eval", per the metadata file of origin

    def __post_init__(self):
        if not self.clip_id:
            raise DataError("clip record with empty clip_id")
        if not self.labels:
            raise DataError(f"clip {self.clip_id!r} has no labels")
        if self.source_split not in ("dev", "eval"):
            raise DataError(
                f"clip {self.clip_id!r} has unknown source split "
                f"{self.source_split!r}"
            )


@dataclass(frozen=True)
class LabelSplit:
    """Disjoint base / validation / evaluation class sets."""

    base: frozenset[ClassId]
    validation: frozenset[ClassId]
    evaluation: frozenset[ClassId]

    def __post_init__(self):
        if self.base & self.validation or self.base & self.evaluation or (
            self.validation & self.evaluation
        ):
            raise DataError("label split sets must be pairwise disjoint")

    @property
    def all_classes(self) -> frozenset[ClassId]:
        return self.base | self.validation | self.evaluation

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.base), len(self.validation), len(self.evaluation))


@dataclass(frozen=True)
class OverlapReport:
    """Clip ids shared between a training-role and a testing-role list."""

    shared: tuple[str, ...]

    @property
    def is_empty(self) -> bool:
        return not self.shared


@dataclass(frozen=True)
class CuratedDataset:
    split: LabelSplit
    records: tuple[ClipRecord, ...]
    pools: Mapping[str, tuple[ClipRecord, ...]]  # pool name -> records
    audit: OverlapReport


def filter_classes(taxonomy: Taxonomy, keep_depths: Iterable[int]) -> frozenset[ClassId]:
    """Eligible classes: single-path nodes at the kept depths, minus the
    multi-path blacklist."""
    return taxonomy.level_filter(keep_depths) - taxonomy.multipath_blacklist()


def split_labels(
    classes: Iterable[ClassId],
    ratio: Sequence[float],
    seed: int,
) -> LabelSplit:
    """Randomly split a class set into base/validation/evaluation by ratio.

    Deterministic for a fixed seed and independent of the iteration order of
    ``classes`` (they are canonically sorted before shuffling). Set sizes are
    the largest-remainder apportionment of ``len(classes)`` by ``ratio``;
    every part must receive at least one class.
    """
    ordered = sorted(set(classes))
    if len(ratio) != 3:
        raise InfeasibleSplitError(f"ratio must have 3 parts, got {len(ratio)}")
    if any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise InfeasibleSplitError(f"ratio parts must be >= 0 and sum > 0: {ratio}")
    if len(ordered) < 3:
        raise InfeasibleSplitError(
            f"need at least 3 classes to split, got {len(ordered)}"
        )
    sizes = _largest_remainder(len(ordered), ratio)
    if min(sizes) < 1:
        raise InfeasibleSplitError(
            f"ratio {tuple(ratio)} leaves an empty split for "
            f"{len(ordered)} classes (sizes {sizes})"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    b, v, _ = sizes
    return LabelSplit(
        base=frozenset(shuffled[:b]),
        validation=frozenset(shuffled[b : b + v]),
        evaluation=frozenset(shuffled[b + v :]),
    )


def _largest_remainder(n: int, ratio: Sequence[float]) -> tuple[int, int, int]:
    total = float(sum(ratio))
    quotas = [n * r / total for r in ratio]
    floors = [int(q) for q in quotas]
    leftover = n - sum(floors)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:leftover]:
        floors[i] += 1
    return tuple(floors)  # type: ignore[return-value]


def restrict_to_eligible(
    records: Iterable[ClipRecord], eligible: Iterable[ClassId]
) -> tuple[ClipRecord, ...]:
    """Drop ineligible labels; drop records left with no label at all."""
    keep = frozenset(eligible)
    out = []
    for r in records:
        labels = r.labels & keep
        if labels:
            out.append(replace(r, labels=labels))
    return tuple(out)


def _base_pool_counts(
    records: Sequence[ClipRecord],
    base: frozenset[ClassId],
    novel: frozenset[ClassId],
) -> Counter:
    """Per-class example counts among records that would land in the base pool
    (records touching no novel label)."""
    counts: Counter = Counter()
    for r in records:
        if r.labels & novel:
            continue
        for c in r.labels & base:
            counts[c] += 1
    return counts


def desmear(
    records: Iterable[ClipRecord],
    split: LabelSplit,
    eligible: Iterable[ClassId],
    min_per_class: int,
) -> tuple[tuple[ClipRecord, ...], LabelSplit]:
    """Restrict labels to the eligible set and repair data-starved base classes.

    A base class whose base-pool example count falls below ``min_per_class``
    is migrated to the smaller novel set (ties to validation) and counts are
    recomputed, because moving a class also moves every clip carrying it out
    of the base pool. Repeats until every surviving base class can support at
    least one episode. Records are never deleted here beyond the eligibility
    restriction.
    """
    kept = restrict_to_eligible(records, eligible)
    base = set(split.base)
    validation = set(split.validation)
    evaluation = set(split.evaluation)
    while True:
        counts = _base_pool_counts(
            kept, frozenset(base), frozenset(validation | evaluation)
        )
        scarce = sorted(
            (c for c in base if counts[c] < min_per_class),
            key=lambda c: (counts[c], c),
        )
        if not scarce:
            break
        mover = scarce[0]
        base.remove(mover)
        if not base:
            raise InfeasibleSplitError(
                "de-smearing emptied the base set; not enough data for "
                f"min_per_class={min_per_class}"
            )
        if len(validation) <= len(evaluation):
            validation.add(mover)
        else:
            evaluation.add(mover)
    return kept, LabelSplit(
        base=frozenset(base),
        validation=frozenset(validation),
        evaluation=frozenset(evaluation),
    )


def retain_cross_split_records(
    records: Iterable[ClipRecord], split: LabelSplit
) -> dict[str, tuple[ClipRecord, ...]]:
    """Assign each record to exactly one example pool.

    Records touching a novel class go to that novel pool (so base labels
    stay visible there); records touching both novel sets go to the pool
    holding more of their labels, ties to validation. Labels are never
    dropped, only masked later at episode time.
    """
    pools: dict[str, list[ClipRecord]] = {name: [] for name in POOL_NAMES}
    for r in records:
        n_val = len(r.labels & split.validation)
        n_eval = len(r.labels & split.evaluation)
        if n_val and n_eval:
            pool = "validation" if n_val >= n_eval else "evaluation"
        elif n_val:
            pool = "validation"
        elif n_eval:
            pool = "evaluation"
        else:
            pool = "base"
        pools[pool].append(r)
    return {name: tuple(rs) for name, rs in pools.items()}


def audit_overlap(
    train: Iterable[ClipRecord], test: Iterable[ClipRecord]
) -> OverlapReport:
    train_ids = {r.clip_id for r in train}
    shared = sorted({r.clip_id for r in test} & train_ids)
    return OverlapReport(shared=tuple(shared))


def curate(
    taxonomy: Taxonomy,
    records: Iterable[ClipRecord],
    keep_depths: Iterable[int],
    ratio: Sequence[float],
    seed: int,
    min_per_class: int,
) -> CuratedDataset:
    """Run the full curation pipeline and audit the result."""
    eligible = filter_classes(taxonomy, keep_depths)
    if not eligible:
        raise InfeasibleSplitError(
            f"no eligible classes at depths {sorted(set(keep_depths))}"
        )
    split = split_labels(eligible, ratio, seed)
    kept, split = desmear(records, split, eligible, min_per_class)
    pools = retain_cross_split_records(kept, split)
    audit = audit_overlap(
        pools["base"], list(pools["validation"]) + list(pools["evaluation"])
    )
    return CuratedDataset(split=split, records=kept, pools=pools, audit=audit)


# -- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated taxonomy + clip metadata table.

    ``depth`` counts levels below each root; every non-leaf node has
    ``branching`` children. With probability ``parent_pair_prob`` a clip's
    label set includes a (child, parent) pair to exercise alignment.
    """

    n_roots: int = 2
    depth: int = 2
    branching: int = 3
    n_clips: int = 200
    labels_per_clip: int = 2
    seed: int = 0
    parent_pair_prob: float = 0.5

    def __post_init__(self):
        for name in ("n_roots", "depth", "branching", "labels_per_clip"):
            if getattr(self, name) < 1:
                raise DataError(f"synthetic spec field {name} must be positive")
        if self.n_clips < 0:
            raise DataError("synthetic spec n_clips must be >= 0")
        if not 0.0 <= self.parent_pair_prob <= 1.0:
            raise DataError("parent_pair_prob must lie in [0, 1]")

    def node_count(self) -> int:
        """Closed-form node count for the generated shape."""
        b, d = self.branching, self.depth
        per_root = d + 1 if b == 1 else (b ** (d + 1) - 1) // (b - 1)
        return self.n_roots * per_root


def generate_synthetic(spec: SyntheticSpec) -> tuple[Taxonomy, tuple[ClipRecord, ...]]:
    """Deterministically generate a taxonomy and multi-label clip metadata."""
    records_json = []
    non_root: list[str] = []
    for r in range(spec.n_roots):
        root_id = f"syn/r{r}"
        frontier = [root_id]
        records_json.append({"id": root_id, "name": root_id, "child_ids": []})
        by_id = {root_id: records_json[-1]}
        for _ in range(spec.depth):
            nxt = []
            for node in frontier:
                for k in range(spec.branching):
                    child = f"{node}.{k}"
                    records_json.append({"id": child, "name": child, "child_ids": []})
                    by_id[child] = records_json[-1]
                    by_id[node]["child_ids"].append(child)
                    nxt.append(child)
                    non_root.append(child)
            frontier = nxt
    taxonomy = Taxonomy.from_records(records_json)

    rng = np.random.default_rng(spec.seed)
    candidates = sorted(non_root)
    parents = {c: taxonomy.parent_of(c) for c in candidates}
    # children whose parent is itself a non-root node, so a sampled
    # (child, parent) pair survives a depth>=1 eligibility filter
    pairable = [c for c in candidates if parents[c] in parents]
    n_labels = min(spec.labels_per_clip, len(candidates))
    clips = []
    for i in range(spec.n_clips):
        labels: set[str] = set()
        if n_labels >= 2 and pairable and rng.random() < spec.parent_pair_prob:
            child = pairable[rng.integers(len(pairable))]
            labels.add(child)
            labels.add(parents[child])
        while len(labels) < n_labels:
            labels.add(candidates[rng.integers(len(candidates))])
        clips.append(
            ClipRecord(
                clip_id=f"clip{i:05d}",
                labels=frozenset(labels),
                source_split="dev",
            )
        )
    return taxonomy, tuple(clips)


# -- metadata ingestion ----------------------------------------------------


def read_clip_metadata(path, default_split: str = "dev") -> tuple[ClipRecord, ...]:
    """Read FSD50K-shaped CSV metadata (fname, labels, mids[, split]).

    Class identity keys on the ``mids`` column; the display-name ``labels``
    column is ignored for identity. A ``split`` value of ``test`` or ``eval``
    marks the record as coming from the evaluation metadata file; anything
    else (``train``/``val``) counts as dev.
    """
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "fname" not in reader.fieldnames:
            raise DataError(f"{path}: missing header with an 'fname' column")
        if "mids" not in reader.fieldnames:
            raise DataError(f"{path}: missing 'mids' column")
        for i, row in enumerate(reader, start=2):
            fname = (row.get("fname") or "").strip()
            mids = [m.strip() for m in (row.get("mids") or "").split(",") if m.strip()]
            if not fname:
                raise DataError(f"{path}:{i}: empty fname")
            if not mids:
                raise DataError(f"{path}:{i}: clip {fname!r} has no mids")
            raw_split = (row.get("split") or "").strip().lower()
            source = "eval" if raw_split in ("test", "eval") else (
                default_split if not raw_split else "dev"
            )
            records.append(
                ClipRecord(clip_id=fname, labels=frozenset(mids), source_split=source)
            )
    return tuple(records)


def write_clip_metadata(records: Iterable[ClipRecord], path, taxonomy: Taxonomy | None = None) -> None:
    """Write metadata in the same CSV shape ``read_clip_metadata`` accepts."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fname", "labels", "mids", "split"])
        for r in records:
            mids = sorted(r.labels)
            names = [taxonomy.name(m) if taxonomy else m for m in mids]
            split = "test" if r.source_split == "eval" else "train"
            writer.writerow([r.clip_id, ",".join(names), ",".join(mids), split])


# -- split manifest --------------------------------------------------------


def split_manifest_dict(dataset: CuratedDataset, config: Mapping | None = None) -> dict:
    """A JSON-ready manifest with stable key ordering for golden-file diffing."""
    return {
        "classes": {
            "base": sorted(dataset.split.base),
            "validation": sorted(dataset.split.validation),
            "evaluation": sorted(dataset.split.evaluation),
        },
        "pools": {
            name: {r.clip_id: sorted(r.labels) for r in pool}
            for name, pool in dataset.pools.items()
        },
        "overlap": list(dataset.audit.shared),
        "curation": dict(config or {}),
    }


def write_split_manifest(dataset: CuratedDataset, path, config: Mapping | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split_manifest_dict(dataset, config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_split_manifest(path) -> tuple[LabelSplit, dict[str, tuple[ClipRecord, ...]]]:
    """Rebuild the label split and per-pool records from a manifest file."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        split = LabelSplit(
            base=frozenset(doc["classes"]["base"]),
            validation=frozenset(doc["classes"]["validation"]),
            evaluation=frozenset(doc["classes"]["evaluation"]),
        )
        pools = {
            name: tuple(
                ClipRecord(clip_id=cid, labels=frozenset(labels))
                for cid, labels in sorted(doc["pools"][name].items())
            )
            for name in POOL_NAMES
        }
    except KeyError as e:
        raise DataError(f"{path}: split manifest missing key {e}") from None
    return split, pools
