import json
from pathlib import Path

import jsonschema
import pytest

from contagion_kg.errors import InconsistentInputs
from contagion_kg.graph import dfs_extract, load_graph
from contagion_kg.pathway import OFF_PATH_FLOOR, RiskPath, RiskScores, extract_path
from contagion_kg.sankey import SankeyDoc, export_sankey, sankey_schema, validate_sankey

ROOT = Path(__file__).resolve().parents[1]


def _t1_doc(t1):
    f = dfs_extract(t1, "A", "C")
    scores = RiskScores({"A": 0.9, "B": 0.7, "C": 0.8, "D": 0.1}, 0.8)
    return export_sankey(extract_path(f, scores), f, scores, "chain A -> B -> C", query_id="q1", seed=5, checkpoint="abc")


def test_table1_document(t1):
    doc = _t1_doc(t1)
    assert [n["id"] for n in doc.nodes] == ["A", "B", "C", "D"]
    assert {n["id"] for n in doc.nodes if n["on_path"]} == {"A", "B", "C"}
    links = {(l["source"], l["target"]): l["value"] for l in doc.links}
    assert set(links) == {("A", "B"), ("B", "C"), ("D", "B")}
    assert links[("D", "B")] == OFF_PATH_FLOOR
    assert max(links.values()) == 1.0 and 0 < links[("B", "C")] <= 1
    assert doc.meta == {"query_id": "q1", "seed": 5, "checkpoint": "abc", "risk_estimate": 0.8}
    validate_sankey(doc)


def test_two_node_path():
    g = load_graph(
        [{"id": v, "label": v, "entity_type": "bank"} for v in "st"],
        [{"src": "s", "dst": "t", "relation_type": "r"}],
    )
    f = dfs_extract(g, "s", "t")
    scores = RiskScores({"s": 0.3, "t": 0.2}, 0.5)
    doc = export_sankey(extract_path(f, scores), f, scores, "")
    assert doc.links == [{"source": "s", "target": "t", "value": 1.0}]


def test_parallel_relations_collapse_to_one_link():
    g = load_graph(
        [{"id": v, "label": v, "entity_type": "bank"} for v in "st"],
        [{"src": "s", "dst": "t", "relation_type": "r1"}, {"src": "s", "dst": "t", "relation_type": "r2"}],
    )
    f = dfs_extract(g, "s", "t")
    scores = RiskScores({"s": 1.0, "t": 0.0}, 0.5)
    assert len(export_sankey(extract_path(f, scores), f, scores, "").links) == 1


def test_round_trip(t1):
    doc = _t1_doc(t1)
    text = doc.to_json()
    assert SankeyDoc.from_json(text) == doc
    assert SankeyDoc.from_json(text).to_json() == text


def test_inconsistent_inputs(t1):
    f = dfs_extract(t1, "A", "C")
    scores = RiskScores({v: 0.5 for v in "ABCD"}, 0.5)
    with pytest.raises(InconsistentInputs):
        export_sankey(RiskPath(["A", "X", "C"], [1.0, 1.0]), f, scores, "")
    with pytest.raises(InconsistentInputs):
        export_sankey(RiskPath(["A", "C"], [1.0]), f, scores, "")  # no A -> C edge
    with pytest.raises(InconsistentInputs):
        export_sankey(RiskPath(["A", "B", "C"], [1.0]), f, scores, "")


def test_schema_rejects_bad_documents(t1):
    d = _t1_doc(t1).to_dict()
    d["links"][0]["value"] = 1.5
    with pytest.raises(jsonschema.ValidationError):
        validate_sankey(d)
    d = _t1_doc(t1).to_dict()
    d["links"].append({"source": "A", "target": "ghost", "value": 0.5})
    with pytest.raises(InconsistentInputs):
        validate_sankey(d)


def test_published_schema_matches_packaged_copy():
    published = json.loads((ROOT / "docs" / "schemas" / "sankey.schema.json").read_text())
    assert published == sankey_schema()
