import json
from pathlib import Path

import pytest

from ladproto.taxonomy import Taxonomy, load_taxonomy

MINI_ONTOLOGY = (
    Path(__file__).resolve().parents[1]
    / "src"
    / "ladproto"
    / "data"
    / "mini_ontology.json"
)


@pytest.fixture(scope="session")
def mini_taxonomy() -> Taxonomy:
    return load_taxonomy(MINI_ONTOLOGY.read_text())


def taxonomy_from(*records) -> Taxonomy:
    """Build a taxonomy from (id, child_ids) pairs."""
    return load_taxonomy(
        json.dumps([{"id": i, "name": i, "child_ids": list(ch)} for i, ch in records])
    )


def chain_taxonomy(length: int) -> Taxonomy:
    """n0 -> n1 -> ... -> n{length-1}."""
    recs = []
    for i in range(length):
        children = [f"n{i + 1}"] if i + 1 < length else []
        recs.append((f"n{i}", children))
    return taxonomy_from(*recs)
