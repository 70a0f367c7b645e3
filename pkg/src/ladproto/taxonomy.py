"""Sound-class taxonomy: ontology loading, parent lookup, and hop distances.

The ontology is a rooted DAG of class nodes in the AudioSet JSON shape
(records with ``id``, ``name``, ``child_ids``). Nodes with exactly one path
to a root ("single-path") behave like tree nodes: they have a well-defined
parent, depth, and a pairwise hop distance through the lowest common
ancestor. Nodes reachable along two or more root paths land on a blacklist
and are rejected by the tree-only queries; curation strips them out before
anything episodic happens.

Depth convention: roots sit at depth 0. Human-facing "level" numbering is
1-based, so level 2 corresponds to depth 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import MultiPathError, OntologyError, UnknownClassError

ClassId = str


@dataclass(frozen=True)
class ClassNode:
    """One ontology record."""

    id: ClassId
    name: str
    children: tuple[ClassId, ...]


class Taxonomy:
    """Immutable class hierarchy. All queries are pure and thread-safe.

    Use :func:`load_taxonomy` / :func:`load_taxonomy_file` or
    :meth:`Taxonomy.from_records` instead of calling the constructor with
    hand-built internals.
    """

    def __init__(self, nodes: Mapping[ClassId, ClassNode]):
        self._nodes: dict[ClassId, ClassNode] = dict(nodes)
        self._validate_ids()
        self._parents: dict[ClassId, tuple[ClassId, ...]] = self._build_parents()
        self._roots: tuple[ClassId, ...] = tuple(
            c for c in self._nodes if not self._parents[c]
        )
        self._assert_acyclic()
        self._path_counts: dict[ClassId, int] = self._count_root_paths()
        self._blacklist: frozenset[ClassId] = frozenset(
            c for c, n in self._path_counts.items() if n >= 2
        )
        self._depth: dict[ClassId, int] = self._build_depths()

    # -- construction -----------------------------------------------------

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "Taxonomy":
        nodes: dict[ClassId, ClassNode] = {}
        for i, rec in enumerate(records):
            cid = rec.get("id")
            if not cid or not isinstance(cid, str):
                raise OntologyError(f"record {i} has a missing or empty 'id'")
            if cid in nodes:
                raise OntologyError(f"duplicate class id {cid!r}")
            nodes[cid] = ClassNode(
                id=cid,
                name=str(rec.get("name", cid)),
                children=tuple(rec.get("child_ids") or ()),
            )
        if not nodes:
            raise OntologyError("ontology contains no records")
        return cls(nodes)

    def _validate_ids(self) -> None:
        for node in self._nodes.values():
            for child in node.children:
                if child not in self._nodes:
                    raise OntologyError(
                        f"class {node.id!r} lists unknown child id {child!r}"
                    )
            if len(set(node.children)) != len(node.children):
                raise OntologyError(f"class {node.id!r} lists a child twice")

    def _build_parents(self) -> dict[ClassId, tuple[ClassId, ...]]:
        parents: dict[ClassId, list[ClassId]] = {c: [] for c in self._nodes}
        for node in self._nodes.values():
            for child in node.children:
                parents[child].append(node.id)
        return {c: tuple(ps) for c, ps in parents.items()}

    def _assert_acyclic(self) -> None:
        # Kahn's algorithm; anything left over sits on a cycle.
        remaining = {c: len(self._parents[c]) for c in self._nodes}
        queue = [c for c, n in remaining.items() if n == 0]
        seen = 0
        while queue:
            cur = queue.pop()
            seen += 1
            for child in self._nodes[cur].children:
                remaining[child] -= 1
                if remaining[child] == 0:
                    queue.append(child)
        if seen == len(self._nodes):
            return
        cycle = self._find_cycle({c for c, n in remaining.items() if n > 0})
        raise OntologyError("ontology contains a cycle: " + " -> ".join(cycle))

    def _find_cycle(self, candidates: set[ClassId]) -> list[ClassId]:
        # Every leftover node retains at least one leftover parent, so
        # walking parents must revisit a node; that suffix is a cycle.
        start = sorted(candidates)[0]
        trail: list[ClassId] = []
        pos: dict[ClassId, int] = {}
        cur = start
        while cur not in pos:
            pos[cur] = len(trail)
            trail.append(cur)
            cur = next(p for p in self._parents[cur] if p in candidates)
        loop = trail[pos[cur] :] + [cur]
        return loop[::-1]  # report in parent -> child direction

    def _count_root_paths(self) -> dict[ClassId, int]:
        counts = {c: 0 for c in self._nodes}
        for r in self._roots:
            counts[r] = 1
        order = self._topological_order()
        for cur in order:
            for child in self._nodes[cur].children:
                counts[child] += counts[cur]
        return counts

    def _topological_order(self) -> list[ClassId]:
        remaining = {c: len(self._parents[c]) for c in self._nodes}
        queue = sorted(self._roots)
        order: list[ClassId] = []
        while queue:
            cur = queue.pop()
            order.append(cur)
            for child in self._nodes[cur].children:
                remaining[child] -= 1
                if remaining[child] == 0:
                    queue.append(child)
        return order

    def _build_depths(self) -> dict[ClassId, int]:
        depth: dict[ClassId, int] = {}
        for cur in self._topological_order():
            if cur in self._blacklist:
                continue
            parents = self._parents[cur]
            depth[cur] = 0 if not parents else depth[parents[0]] + 1
        return depth

    # -- basic access ------------------------------------------------------

    def __contains__(self, c: ClassId) -> bool:
        return c in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def roots(self) -> tuple[ClassId, ...]:
        return self._roots

    def ids(self) -> tuple[ClassId, ...]:
        return tuple(sorted(self._nodes))

    def name(self, c: ClassId) -> str:
        return self._node(c).name

    def children(self, c: ClassId) -> tuple[ClassId, ...]:
        return self._node(c).children

    def _node(self, c: ClassId) -> ClassNode:
        try:
            return self._nodes[c]
        except KeyError:
            raise UnknownClassError(f"unknown class id {c!r}") from None

    def is_multipath(self, c: ClassId) -> bool:
        self._node(c)
        return c in self._blacklist

    def multipath_blacklist(self) -> frozenset[ClassId]:
        """Classes with two or more distinct paths to a root."""
        return self._blacklist

    def single_path_ids(self) -> tuple[ClassId, ...]:
        return tuple(sorted(c for c in self._nodes if c not in self._blacklist))

    # -- tree queries (single-path nodes only) -----------------------------

    def _require_single_path(self, c: ClassId) -> None:
        self._node(c)
        if c in self._blacklist:
            raise MultiPathError(
                f"class {c!r} has multiple root paths; it must be blacklisted, "
                "not queried"
            )

    def parent_of(self, c: ClassId) -> ClassId | None:
        """The unique parent of a single-path class; ``None`` for roots."""
        self._require_single_path(c)
        parents = self._parents[c]
        return parents[0] if parents else None

    def depth(self, c: ClassId) -> int:
        """Edges between ``c`` and its root (roots have depth 0)."""
        self._require_single_path(c)
        return self._depth[c]

    def root_of(self, c: ClassId) -> ClassId:
        self._require_single_path(c)
        while True:
            parent = self._parents[c]
            if not parent:
                return c
            c = parent[0]

    def ancestry(self, c: ClassId) -> tuple[ClassId, ...]:
        """Chain from ``c`` up to its root, inclusive."""
        self._require_single_path(c)
        chain = [c]
        while self._parents[chain[-1]]:
            chain.append(self._parents[chain[-1]][0])
        return tuple(chain)

    def distance(self, a: ClassId, b: ClassId) -> int:
        """Undirected hop distance through the lowest common ancestor.

        Classes under different roots are joined through a virtual
        super-root one hop above every real root, giving
        ``depth(a) + depth(b) + 2``.
        """
        self._require_single_path(a)
        self._require_single_path(b)
        if a == b:
            return 0
        up_a = {node: i for i, node in enumerate(self.ancestry(a))}
        for hops_b, node in enumerate(self.ancestry(b)):
            if node in up_a:
                return up_a[node] + hops_b
        return self._depth[a] + self._depth[b] + 2

    def level_filter(self, keep_depths: Iterable[int]) -> frozenset[ClassId]:
        """Single-path classes whose depth lies in ``keep_depths``."""
        keep = set(keep_depths)
        return frozenset(
            c for c in self._nodes if c not in self._blacklist and self._depth[c] in keep
        )


def load_taxonomy(document: str | bytes) -> Taxonomy:
    """Parse an AudioSet-shaped ontology document (JSON array of records)."""
    try:
        records = json.loads(document)
    except json.JSONDecodeError as e:
        raise OntologyError(
            f"ontology is not valid JSON: {e.msg} at line {e.lineno} column {e.colno}"
        ) from None
    if not isinstance(records, list):
        raise OntologyError("ontology document must be a JSON array of records")
    return Taxonomy.from_records(records)


def load_taxonomy_file(path) -> Taxonomy:
    with open(path, "rb") as fh:
        return load_taxonomy(fh.read())


def save_taxonomy_file(taxonomy: Taxonomy, path) -> None:
    """Write the taxonomy back out in the same record shape it is read from."""
    records = [
        {"id": c, "name": taxonomy.name(c), "child_ids": list(taxonomy.children(c))}
        for c in taxonomy.ids()
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")
