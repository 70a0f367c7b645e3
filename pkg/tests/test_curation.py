import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ladproto.curation import (
    ClipRecord,
    LabelSplit,
    SyntheticSpec,
    audit_overlap,
    curate,
    desmear,
    filter_classes,
    generate_synthetic,
    read_clip_metadata,
    retain_cross_split_records,
    split_labels,
    write_clip_metadata,
)
from ladproto.errors import DataError, InfeasibleSplitError

from conftest import taxonomy_from


def rec(clip_id, *labels, split="dev"):
    return ClipRecord(clip_id=clip_id, labels=frozenset(labels), source_split=split)


# -- eligibility ---------------------------------------------------------------


def test_filter_classes_removes_multipath_at_kept_depth():
    t = taxonomy_from(
        ("R1", ["a", "shared"]),
        ("R2", ["shared"]),
        ("a", []),
        ("shared", []),
    )
    eligible = filter_classes(t, {1})
    assert eligible == {"a"}


def test_filter_classes_unpopulated_depth_is_empty():
    t = taxonomy_from(("A", ["b"]), ("b", []))
    assert filter_classes(t, {7}) == frozenset()


# -- split_labels -----------------------------------------------------------------


def test_split_143_classes_ratio_721():
    classes = [f"c{i:03d}" for i in range(143)]
    split = split_labels(classes, (7, 2, 1), seed=0)
    assert split.sizes() == (100, 29, 14)
    assert split.all_classes == set(classes)


def test_split_degenerate_ratio_is_infeasible():
    with pytest.raises(InfeasibleSplitError):
        split_labels([f"c{i}" for i in range(10)], (1, 0, 0), seed=0)


def test_split_nine_classes_evenly():
    split = split_labels([f"c{i}" for i in range(9)], (1, 1, 1), seed=5)
    assert split.sizes() == (3, 3, 3)
    assert not (split.base & split.validation)
    assert not (split.base & split.evaluation)
    assert not (split.validation & split.evaluation)


def test_split_too_few_classes():
    with pytest.raises(InfeasibleSplitError):
        split_labels(["a", "b"], (1, 1, 1), seed=0)


@given(st.integers(0, 2**32 - 1), st.permutations(list(range(12))))
@settings(max_examples=30, deadline=None)
def test_split_deterministic_and_order_invariant(seed, perm):
    classes = [f"c{i}" for i in range(12)]
    shuffled = [classes[i] for i in perm]
    a = split_labels(classes, (7, 2, 1), seed)
    b = split_labels(shuffled, (7, 2, 1), seed)
    assert a == b


# -- desmear -------------------------------------------------------------------------


def _five_class_setup():
    t = taxonomy_from(
        ("R", ["c1", "c2", "c3", "c4", "c5"]),
        ("c1", []),
        ("c2", []),
        ("c3", []),
        ("c4", []),
        ("c5", []),
    )
    eligible = filter_classes(t, {1})
    split = LabelSplit(
        base=frozenset({"c1", "c2", "c3"}),
        validation=frozenset({"c4"}),
        evaluation=frozenset({"c5"}),
    )
    return t, eligible, split


def test_desmear_fixed_point_when_counts_suffice():
    _, eligible, split = _five_class_setup()
    records = [rec(f"x{i}{c}", c) for c in ("c1", "c2", "c3") for i in range(3)]
    records += [rec("v0", "c4"), rec("e0", "c5")]
    kept, adjusted = desmear(records, split, eligible, min_per_class=2)
    assert adjusted == split
    assert len(kept) == len(records)


def test_desmear_moves_starved_class_to_a_novel_set():
    _, eligible, split = _five_class_setup()
    # c3 has no examples at all; the others have plenty
    records = [rec(f"x{i}{c}", c) for c in ("c1", "c2") for i in range(3)]
    records += [rec("v0", "c4"), rec("e0", "c5")]
    kept, adjusted = desmear(records, split, eligible, min_per_class=2)
    assert "c3" not in adjusted.base
    assert "c3" in adjusted.validation | adjusted.evaluation
    assert adjusted.base == {"c1", "c2"}


def test_desmear_counts_only_base_pool_examples():
    # c3's only examples also carry the novel label c4, so they will live in
    # the validation pool; c3 must therefore migrate out of base.
    _, eligible, split = _five_class_setup()
    records = [rec(f"x{i}{c}", c) for c in ("c1", "c2") for i in range(3)]
    records += [rec("m0", "c3", "c4"), rec("m1", "c3", "c4"), rec("e0", "c5")]
    _, adjusted = desmear(records, split, eligible, min_per_class=2)
    assert "c3" not in adjusted.base


def test_desmear_empty_base_is_infeasible():
    _, eligible, split = _five_class_setup()
    records = [rec("v0", "c4"), rec("e0", "c5")]
    with pytest.raises(InfeasibleSplitError):
        desmear(records, split, eligible, min_per_class=1)


# -- pool assignment ------------------------------------------------------------------


def test_retain_base_only_record():
    _, _, split = _five_class_setup()
    pools = retain_cross_split_records([rec("a", "c1")], split)
    assert [r.clip_id for r in pools["base"]] == ["a"]


def test_retain_base_plus_eval_goes_to_eval_with_labels_kept():
    _, _, split = _five_class_setup()
    pools = retain_cross_split_records([rec("a", "c1", "c5")], split)
    assert [r.clip_id for r in pools["evaluation"]] == ["a"]
    assert pools["evaluation"][0].labels == {"c1", "c5"}


def test_retain_tie_between_novel_sets_goes_to_validation():
    _, _, split = _five_class_setup()
    pools = retain_cross_split_records([rec("a", "c4", "c5")], split)
    assert [r.clip_id for r in pools["validation"]] == ["a"]


def test_retain_majority_wins():
    t = taxonomy_from(
        ("R", ["b1", "v1", "e1", "e2"]),
        ("b1", []),
        ("v1", []),
        ("e1", []),
        ("e2", []),
    )
    split = LabelSplit(
        base=frozenset({"b1"}),
        validation=frozenset({"v1"}),
        evaluation=frozenset({"e1", "e2"}),
    )
    pools = retain_cross_split_records([rec("a", "v1", "e1", "e2")], split)
    assert [r.clip_id for r in pools["evaluation"]] == ["a"]


def test_retain_never_deletes_labels():
    _, _, split = _five_class_setup()
    records = [rec("a", "c1", "c4"), rec("b", "c2"), rec("c", "c5", "c1")]
    pools = retain_cross_split_records(records, split)
    flat = {r.clip_id: r.labels for pool in pools.values() for r in pool}
    for r in records:
        assert flat[r.clip_id] == r.labels


# -- overlap audit ---------------------------------------------------------------------


def test_audit_disjoint_lists():
    report = audit_overlap([rec("a", "c1")], [rec("b", "c2")])
    assert report.is_empty


def test_audit_detects_shared_clip():
    report = audit_overlap([rec("a", "c1")], [rec("a", "c2"), rec("b", "c2")])
    assert report.shared == ("a",)


# -- synthetic generation ---------------------------------------------------------------


def test_generate_synthetic_zero_clips():
    t, records = generate_synthetic(SyntheticSpec(n_clips=0, seed=1))
    assert records == ()
    assert len(t) == SyntheticSpec(n_clips=0, seed=1).node_count()


def test_generate_synthetic_deterministic():
    spec = SyntheticSpec(n_clips=50, seed=9)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec)
    assert a[1] == b[1]
    assert a[0].ids() == b[0].ids()


def test_generate_synthetic_node_count_closed_form():
    spec = SyntheticSpec(n_roots=2, depth=3, branching=2, n_clips=0)
    t, _ = generate_synthetic(spec)
    # per root: 1 + 2*(2**3 - 1)/(2 - 1) = 15 nodes
    assert spec.node_count() == 2 * (1 + 2 * (2**3 - 1) // (2 - 1)) == 30
    assert len(t) == 30


def test_generate_synthetic_contains_parent_pairs():
    spec = SyntheticSpec(
        n_roots=1, depth=2, branching=3, n_clips=60, seed=3, parent_pair_prob=1.0
    )
    t, records = generate_synthetic(spec)
    with_pair = 0
    for r in records:
        for c in r.labels:
            p = t.parent_of(c)
            if p is not None and p in r.labels:
                with_pair += 1
                break
    assert with_pair == len(records)


# -- full pipeline ------------------------------------------------------------------------


def test_curate_pipeline_invariants():
    spec = SyntheticSpec(
        n_roots=1, depth=2, branching=4, n_clips=300, seed=7, labels_per_clip=2
    )
    taxonomy, records = generate_synthetic(spec)
    dataset = curate(
        taxonomy, records, keep_depths={1, 2}, ratio=(2, 1, 1), seed=11,
        min_per_class=6,
    )
    assert dataset.audit.is_empty
    # every record kept at least one label and sits in exactly one pool
    pool_ids = [r.clip_id for pool in dataset.pools.values() for r in pool]
    assert len(pool_ids) == len(set(pool_ids)) == len(dataset.records)
    # base classes retain enough base-pool examples
    base_records = dataset.pools["base"]
    for c in dataset.split.base:
        count = sum(1 for r in base_records if c in r.labels)
        assert count >= 6, f"base class {c} has only {count} examples"


# -- metadata io ---------------------------------------------------------------------------


def test_metadata_round_trip(tmp_path):
    t, records = generate_synthetic(SyntheticSpec(n_clips=25, seed=2))
    path = tmp_path / "metadata.csv"
    write_clip_metadata(records, path, t)
    loaded = read_clip_metadata(path)
    assert loaded == records


def test_metadata_requires_mids(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("fname,labels\nx,y\n")
    with pytest.raises(DataError, match="mids"):
        read_clip_metadata(path)


def test_metadata_quoted_multilabel(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(
        'fname,labels,mids,split\n'
        '1234,"Dog,Animal","/m/0bt9lr,/m/0jbk",train\n'
    )
    records = read_clip_metadata(path)
    assert records[0].labels == {"/m/0bt9lr", "/m/0jbk"}
    assert records[0].source_split == "dev"
