"""Sankey-diagram data for an extracted risk pathway."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .errors import InconsistentInputs
from .graph import FactualGraph
from .pathway import OFF_PATH_FLOOR, RiskPath, RiskScores

SCHEMA_NAME = "sankey.schema.json"


@dataclass
class SankeyDoc:
    nodes: list
    links: list
    explanation: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SankeyDoc":
        d = json.loads(text)
        return cls(d["nodes"], d["links"], d["explanation"], d.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def export_sankey(
    path: RiskPath,
    f: FactualGraph,
    scores: RiskScores,
    explanation: str,
    query_id: str | None = None,
    seed: int | None = None,
    checkpoint: str | None = None,
) -> SankeyDoc:
    """All factual nodes; path links carry the path intensities, every other edge the faint floor."""
    g = f.graph
    missing = [v for v in path.nodes if v not in g.nodes]
    if missing:
        raise InconsistentInputs(f"path nodes absent from the factual graph: {missing}")
    if len(path.intensities) != len(path.nodes) - 1:
        raise InconsistentInputs("one intensity per path link is required")
    on_path = dict(zip(zip(path.nodes, path.nodes[1:]), path.intensities))
    edge_pairs = {(e.src, e.dst) for e in g.edges}
    for pair in on_path:
        if pair not in edge_pairs:
            raise InconsistentInputs(f"path link {pair[0]} -> {pair[1]} is not an edge")
    top = max(path.intensities)
    if not top > 0:
        raise InconsistentInputs("path intensities must be positive")

    path_set = set(path.nodes)
    nodes = []
    for v, n in g.nodes.items():
        rec = {"id": v, "label": n.label, "entity_type": n.entity_type, "on_path": v in path_set}
        if v in scores.per_node:
            rec["risk"] = float(scores.per_node[v])
        nodes.append(rec)
    # one link per ordered pair, even when several relations join the same nodes
    links = [
        {"source": a, "target": b, "value": on_path[(a, b)] / top if (a, b) in on_path else OFF_PATH_FLOOR}
        for a, b in sorted(edge_pairs)
    ]
    meta = {"query_id": query_id, "seed": seed, "checkpoint": checkpoint, "risk_estimate": float(scores.estimate)}
    return SankeyDoc(nodes, links, explanation, meta)


def sankey_schema() -> dict:
    return json.loads(resources.files("contagion_kg").joinpath("data").joinpath(SCHEMA_NAME).read_text(encoding="utf-8"))


def validate_sankey(doc: SankeyDoc | dict) -> None:
    """JSON-schema validation plus the cross-field invariants a schema cannot state."""
    import jsonschema

    d = doc.to_dict() if isinstance(doc, SankeyDoc) else doc
    jsonschema.validate(d, sankey_schema())
    ids = {n["id"] for n in d["nodes"]}
    for link in d["links"]:
        if link["source"] not in ids or link["target"] not in ids:
            raise InconsistentInputs("link endpoint missing from nodes")
    if d["links"] and max(link["value"] for link in d["links"]) != 1.0:
        raise InconsistentInputs("largest link value must be 1")
