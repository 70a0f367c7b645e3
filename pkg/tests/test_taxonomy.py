import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ladproto.errors import MultiPathError, OntologyError, UnknownClassError
from ladproto.taxonomy import Taxonomy, load_taxonomy

from conftest import chain_taxonomy, taxonomy_from


# -- oracles -----------------------------------------------------------------


def count_root_paths(edges: dict[str, list[str]], node: str) -> int:
    """Exhaustive path enumeration from every root down to ``node``."""
    parents: dict[str, list[str]] = {c: [] for c in edges}
    for p, children in edges.items():
        for c in children:
            parents[c].append(p)

    def paths(n: str) -> int:
        if not parents[n]:
            return 1
        return sum(paths(p) for p in parents[n])

    return paths(node)


def bfs_distance(edges: dict[str, list[str]], a: str, b: str) -> int:
    """Breadth-first hop count on the undirected tree plus a virtual
    super-root linked to every real root."""
    adj: dict[str, set[str]] = {n: set() for n in edges}
    adj["__super__"] = set()
    is_child = {c for children in edges.values() for c in children}
    for p, children in edges.items():
        for c in children:
            adj[p].add(c)
            adj[c].add(p)
    for n in edges:
        if n not in is_child:
            adj["__super__"].add(n)
            adj[n].add("__super__")
    frontier, dist = [a], 0
    seen = {a}
    while frontier:
        if b in frontier:
            return dist
        frontier = [m for n in frontier for m in adj[n] - seen]
        seen.update(frontier)
        dist += 1
    raise AssertionError("unreachable")


# -- loading -------------------------------------------------------------------


def test_singleton_record():
    t = taxonomy_from(("A", []))
    assert t.roots == ("A",)
    assert t.depth("A") == 0
    assert t.parent_of("A") is None


def test_two_node_chain():
    t = taxonomy_from(("A", ["B"]), ("B", []))
    assert t.parent_of("B") == "A"
    assert t.depth("B") == 1


def test_shared_child_is_multipath():
    t = taxonomy_from(("A", ["C"]), ("B", ["C"]), ("C", []))
    edges = {"A": ["C"], "B": ["C"], "C": []}
    for node in edges:
        expected = count_root_paths(edges, node) >= 2
        assert t.is_multipath(node) == expected
    assert t.multipath_blacklist() == {"C"}


def test_malformed_json_reports_location():
    with pytest.raises(OntologyError, match=r"line \d+ column \d+"):
        load_taxonomy('[{"id": "A", "child_ids": []')


def test_dangling_child_names_the_id():
    with pytest.raises(OntologyError, match="ghost"):
        taxonomy_from(("A", ["ghost"]))


def test_cycle_is_reported():
    with pytest.raises(OntologyError, match="cycle"):
        taxonomy_from(("A", ["B"]), ("B", ["C"]), ("C", ["A"]))


def test_non_array_document_rejected():
    with pytest.raises(OntologyError, match="array"):
        load_taxonomy('{"id": "A"}')


def test_duplicate_id_rejected():
    with pytest.raises(OntologyError, match="duplicate"):
        load_taxonomy(json.dumps([{"id": "A"}, {"id": "A"}]))


# -- parent lookup ---------------------------------------------------------------


def test_dog_parent_is_animal(mini_taxonomy):
    dog = "/m/0bt9lr"
    animal = "/m/0jbk"
    assert mini_taxonomy.name(dog) == "Dog"
    assert mini_taxonomy.parent_of(dog) == animal
    assert mini_taxonomy.name(animal) == "Animal"


def test_root_has_no_parent(mini_taxonomy):
    for root in mini_taxonomy.roots:
        assert mini_taxonomy.parent_of(root) is None


def test_chain_parent():
    t = taxonomy_from(("A", ["B"]), ("B", ["C"]), ("C", []))
    assert t.parent_of("C") == "B"


def test_unknown_id_raises(mini_taxonomy):
    with pytest.raises(UnknownClassError):
        mini_taxonomy.parent_of("/m/doesnotexist")


def test_multipath_parent_query_raises(mini_taxonomy):
    bicycle_bell = "/m/0gy1t2s"
    assert mini_taxonomy.is_multipath(bicycle_bell)
    with pytest.raises(MultiPathError):
        mini_taxonomy.parent_of(bicycle_bell)


# -- blacklist -------------------------------------------------------------------


def test_tree_has_empty_blacklist():
    t = taxonomy_from(("A", ["B", "C"]), ("B", []), ("C", []))
    assert t.multipath_blacklist() == frozenset()


def test_audioset_style_blacklist(mini_taxonomy):
    names = {mini_taxonomy.name(c) for c in mini_taxonomy.multipath_blacklist()}
    assert "Bicycle bell" in names
    assert "Tuning fork" in names


def test_diamond_blacklist():
    t = taxonomy_from(("A", ["B", "C"]), ("B", ["D"]), ("C", ["D"]), ("D", []))
    edges = {"A": ["B", "C"], "B": ["D"], "C": ["D"], "D": []}
    expected = {n for n in edges if count_root_paths(edges, n) >= 2}
    assert t.multipath_blacklist() == expected == {"D"}


def test_descendants_of_multipath_are_blacklisted():
    t = taxonomy_from(
        ("A", ["C"]), ("B", ["C"]), ("C", ["D"]), ("D", [])
    )
    assert t.multipath_blacklist() == {"C", "D"}


# -- distance ---------------------------------------------------------------------


def test_distance_identity(mini_taxonomy):
    for c in mini_taxonomy.single_path_ids():
        assert mini_taxonomy.distance(c, c) == 0


def test_sibling_distance():
    t = taxonomy_from(("P", ["a", "b"]), ("a", []), ("b", []))
    assert t.distance("a", "b") == 2


def test_child_parent_distance_and_chain_ends():
    t = chain_taxonomy(5)  # n0 .. n4, four edges
    assert t.distance("n1", "n0") == 1
    edges = {f"n{i}": ([f"n{i + 1}"] if i < 4 else []) for i in range(5)}
    assert t.distance("n0", "n4") == bfs_distance(edges, "n0", "n4") == 4


def test_cross_root_distance_uses_super_root():
    t = taxonomy_from(("A", ["a1"]), ("a1", []), ("B", ["b1"]), ("b1", []))
    # depth 1 + depth 1 + 2 hops through the virtual super-root
    assert t.distance("a1", "b1") == 4
    assert t.distance("A", "B") == 2


def test_distance_rejects_multipath(mini_taxonomy):
    with pytest.raises(MultiPathError):
        mini_taxonomy.distance("/m/0gy1t2s", "/m/0bt9lr")


# -- level filter ------------------------------------------------------------------


def test_level_filter_empty_set():
    t = chain_taxonomy(6)
    assert t.level_filter(set()) == frozenset()


def test_level_filter_middle_of_chain():
    t = chain_taxonomy(6)  # depths 0..5
    assert t.level_filter({1, 2}) == {"n1", "n2"}


def test_level_filter_keep_all():
    t = chain_taxonomy(6)
    assert t.level_filter(range(6)) == set(t.single_path_ids())


# -- properties over random trees ---------------------------------------------------


@st.composite
def random_tree(draw):
    n = draw(st.integers(min_value=2, max_value=50))
    parent_idx = [draw(st.integers(0, i - 1)) for i in range(1, n)]
    edges: dict[str, list[str]] = {f"v{i}": [] for i in range(n)}
    for child, parent in enumerate(parent_idx, start=1):
        edges[f"v{parent}"].append(f"v{child}")
    return edges


@st.composite
def random_dag(draw):
    n = draw(st.integers(min_value=2, max_value=25))
    edges: dict[str, list[str]] = {f"v{i}": [] for i in range(n)}
    for child in range(1, n):
        k = draw(st.integers(1, min(2, child)))
        parents = draw(
            st.lists(
                st.integers(0, child - 1), min_size=k, max_size=k, unique=True
            )
        )
        for p in parents:
            edges[f"v{p}"].append(f"v{child}")
    return edges


def _taxonomy_of(edges) -> Taxonomy:
    return taxonomy_from(*[(n, ch) for n, ch in edges.items()])


@given(random_tree(), st.data())
@settings(max_examples=60, deadline=None)
def test_distance_is_a_metric_matching_bfs(edges, data):
    t = _taxonomy_of(edges)
    nodes = sorted(edges)
    a = data.draw(st.sampled_from(nodes))
    b = data.draw(st.sampled_from(nodes))
    c = data.draw(st.sampled_from(nodes))
    dab, dba = t.distance(a, b), t.distance(b, a)
    assert dab == bfs_distance(edges, a, b)
    assert dab == dba
    assert dab >= 0
    assert (dab == 0) == (a == b)
    assert dab <= t.distance(a, c) + t.distance(c, b)


@given(random_tree())
@settings(max_examples=40, deadline=None)
def test_parent_of_children_identity(edges):
    t = _taxonomy_of(edges)
    for node in edges:
        for child in t.children(node):
            assert t.parent_of(child) == node


@given(random_dag())
@settings(max_examples=60, deadline=None)
def test_blacklist_empty_iff_forest(edges):
    t = _taxonomy_of(edges)
    parent_counts = {n: 0 for n in edges}
    for children in edges.values():
        for c in children:
            parent_counts[c] += 1
    is_forest = all(v <= 1 for v in parent_counts.values())
    assert (t.multipath_blacklist() == frozenset()) == is_forest


@given(random_tree())
@settings(max_examples=40, deadline=None)
def test_depth_equals_distance_to_root(edges):
    t = _taxonomy_of(edges)
    for node in edges:
        assert t.depth(node) == t.distance(node, t.root_of(node))
