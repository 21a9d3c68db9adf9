"""Directed typed knowledge graphs, ingestion, and factual-subgraph extraction."""

from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from .errors import (
    DanglingEdge,
    DuplicateEdge,
    DuplicateNode,
    MalformedRecord,
    NodeNotFound,
    NoPath,
)

NodeId = str

NODE_FIELDS = ("id", "label", "entity_type")
EDGE_FIELDS = ("src", "dst", "relation_type")


class Node(NamedTuple):
    label: str
    entity_type: str


class Edge(NamedTuple):
    src: NodeId
    dst: NodeId
    relation_type: str


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable directed multigraph. Nodes are kept sorted by id, edges lexicographically."""

    nodes: Mapping[NodeId, Node]
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        nodes = {}
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            nodes[nid] = n if isinstance(n, Node) else Node(*n)
        seen = set()
        edges = []
        for e in self.edges:
            e = e if isinstance(e, Edge) else Edge(*e)
            for end in (e.src, e.dst):
                if end not in nodes:
                    raise DanglingEdge(f"edge {e.src}->{e.dst} references unknown node {end!r}")
            if e.src == e.dst:
                raise MalformedRecord(f"self-loop on {e.src!r}")
            if e in seen:
                raise DuplicateEdge(f"duplicate edge {e.src}->{e.dst} ({e.relation_type})")
            seen.add(e)
            edges.append(e)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(sorted(edges)))

    def __contains__(self, v):
        return v in self.nodes

    def __len__(self):
        return len(self.nodes)

    @property
    def node_ids(self) -> list[NodeId]:
        return list(self.nodes)

    @cached_property
    def successors(self) -> dict[NodeId, list[NodeId]]:
        out = {v: [] for v in self.nodes}
        for e in self.edges:
            if e.dst not in out[e.src]:
                out[e.src].append(e.dst)
        return out

    @cached_property
    def predecessors(self) -> dict[NodeId, list[NodeId]]:
        inc = {v: [] for v in self.nodes}
        for e in self.edges:
            if e.src not in inc[e.dst]:
                inc[e.dst].append(e.src)
        return inc

    @cached_property
    def neighbors(self) -> dict[NodeId, list[NodeId]]:
        return {
            v: sorted(set(self.successors[v]) | set(self.predecessors[v])) for v in self.nodes
        }

    def require(self, *vs: NodeId) -> None:
        for v in vs:
            if v not in self.nodes:
                raise NodeNotFound(f"node {v!r} not in graph")

    def subgraph(self, keep: Iterable[NodeId]) -> "KnowledgeGraph":
        keep = set(keep)
        return KnowledgeGraph(
            {v: n for v, n in self.nodes.items() if v in keep},
            tuple(e for e in self.edges if e.src in keep and e.dst in keep),
        )

    def to_records(self) -> dict:
        return {
            "nodes": [{"id": v, "label": n.label, "entity_type": n.entity_type} for v, n in self.nodes.items()],
            "edges": [e._asdict() for e in self.edges],
        }

    @classmethod
    def from_records(cls, rec: Mapping) -> "KnowledgeGraph":
        return load_graph(rec["nodes"], rec["edges"])


@dataclass(frozen=True)
class FactualGraph:
    graph: KnowledgeGraph
    source: NodeId
    target: NodeId
    path_nodes: frozenset = field(default_factory=frozenset)
    attached_nodes: frozenset = field(default_factory=frozenset)

    def to_records(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "path_nodes": sorted(self.path_nodes),
            "attached_nodes": sorted(self.attached_nodes),
            "graph": self.graph.to_records(),
        }

    @classmethod
    def from_records(cls, rec: Mapping) -> "FactualGraph":
        return cls(
            KnowledgeGraph.from_records(rec["graph"]),
            rec["source"],
            rec["target"],
            frozenset(rec["path_nodes"]),
            frozenset(rec["attached_nodes"]),
        )


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _field(rec: Mapping, name: str, kind: str) -> str:
    try:
        val = rec[name]
    except (KeyError, TypeError):
        raise MalformedRecord(f"{kind} record missing field {name!r}: {rec!r}") from None
    if val is None or not isinstance(val, str):
        raise MalformedRecord(f"{kind} field {name!r} must be a string: {rec!r}")
    return val


def load_graph(nodes_source: Iterable[Mapping], edges_source: Iterable[Mapping]) -> KnowledgeGraph:
    """Build a validated graph from node and edge record streams (dicts keyed by the CSV headers)."""
    nodes: dict[NodeId, Node] = {}
    for rec in nodes_source:
        if None in rec or len(rec) != len(NODE_FIELDS):
            raise MalformedRecord(f"node record has wrong arity: {rec!r}")
        nid = _field(rec, "id", "node")
        if not nid:
            raise MalformedRecord("node record with empty id")
        if nid in nodes:
            raise DuplicateNode(f"duplicate node id {nid!r}")
        nodes[nid] = Node(_field(rec, "label", "node"), _field(rec, "entity_type", "node"))
    edges = []
    for rec in edges_source:
        if None in rec or len(rec) != len(EDGE_FIELDS):
            raise MalformedRecord(f"edge record has wrong arity: {rec!r}")
        src, dst = _field(rec, "src", "edge"), _field(rec, "dst", "edge")
        if not src or not dst:
            raise MalformedRecord(f"edge record with empty endpoint: {rec!r}")
        edges.append(Edge(src, dst, _field(rec, "relation_type", "edge")))
    return KnowledgeGraph(nodes, tuple(edges))


def _csv_rows(text: str, header: tuple[str, ...]) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != header:
        raise MalformedRecord(f"expected CSV header {','.join(header)}, got {reader.fieldnames}")
    return list(reader)


def read_csv_graph(nodes_path, edges_path) -> KnowledgeGraph:
    nodes = _csv_rows(Path(nodes_path).read_text(encoding="utf-8"), NODE_FIELDS)
    edges = _csv_rows(Path(edges_path).read_text(encoding="utf-8"), EDGE_FIELDS)
    return load_graph(nodes, edges)


def write_csv_graph(g: KnowledgeGraph, nodes_path, edges_path) -> None:
    for path, header, rows in (
        (nodes_path, NODE_FIELDS, g.to_records()["nodes"]),
        (edges_path, EDGE_FIELDS, g.to_records()["edges"]),
    ):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


def read_jsonl_graph(path) -> KnowledgeGraph:
    nodes, edges = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"{path}:{lineno}: {exc}") from None
        kind = rec.pop("kind", None) if isinstance(rec, dict) else None
        if kind == "node":
            nodes.append(rec)
        elif kind == "edge":
            edges.append(rec)
        else:
            raise MalformedRecord(f"{path}:{lineno}: record kind must be 'node' or 'edge'")
    return load_graph(nodes, edges)


def write_jsonl_graph(g: KnowledgeGraph, path) -> None:
    rec = g.to_records()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for n in rec["nodes"]:
            fh.write(json.dumps({"kind": "node", **n}, ensure_ascii=False) + "\n")
        for e in rec["edges"]:
            fh.write(json.dumps({"kind": "edge", **e}, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def k_hop_neighborhood(g: KnowledgeGraph, v: NodeId, k: int) -> set[NodeId]:
    """Nodes within undirected distance ``k`` of ``v`` (``v`` included)."""
    g.require(v)
    dist = {v: 0}
    queue = deque([v])
    while queue:
        u = queue.popleft()
        if dist[u] == k:
            continue
        for w in g.neighbors[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return set(dist)


def remove_node(g: KnowledgeGraph, v: NodeId) -> KnowledgeGraph:
    g.require(v)
    return KnowledgeGraph(
        {u: n for u, n in g.nodes.items() if u != v},
        tuple(e for e in g.edges if v not in (e.src, e.dst)),
    )


def _dist_to(g: KnowledgeGraph, target: NodeId) -> dict[NodeId, int]:
    dist = {target: 0}
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for w in g.predecessors[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def nodes_on_paths(g: KnowledgeGraph, v_s: NodeId, v_t: NodeId, max_depth: int | None = None) -> set[NodeId]:
    """Nodes lying on at least one simple directed v_s -> v_t path with at most ``max_depth`` edges."""
    g.require(v_s, v_t)
    limit = len(g) if max_depth is None else max_depth
    to_t = _dist_to(g, v_t)
    found: set[NodeId] = set()
    stack = [v_s]
    on_stack = {v_s}

    # DFS over simple paths, pruned by the BFS distance-to-target lower bound
    def dfs(u: NodeId, depth: int) -> None:
        for w in g.successors[u]:
            if w in on_stack or to_t.get(w, limit + 1) > limit - depth - 1:
                continue
            if w == v_t:
                found.update(stack)
                found.add(w)
                continue
            stack.append(w)
            on_stack.add(w)
            dfs(w, depth + 1)
            stack.pop()
            on_stack.discard(w)

    if v_s in to_t and to_t[v_s] <= limit:
        dfs(v_s, 0)
    return found


def dfs_extract(kg: KnowledgeGraph, v_s: NodeId, v_t: NodeId, max_depth: int = 6, attach_hops: int = 1) -> FactualGraph:
    kg.require(v_s, v_t)
    if v_s == v_t:
        raise NoPath("source and target coincide")
    if max_depth < 1 or attach_hops < 0:
        raise ValueError("max_depth must be positive and attach_hops non-negative")
    path_nodes = nodes_on_paths(kg, v_s, v_t, max_depth)
    if not path_nodes:
        raise NoPath(f"no directed path {v_s}->{v_t} within {max_depth} edges")
    keep = set(path_nodes)
    frontier = set(path_nodes)
    for _ in range(attach_hops):
        frontier = {w for u in frontier for w in kg.neighbors[u]} - keep
        keep |= frontier
    return FactualGraph(
        kg.subgraph(keep), v_s, v_t, frozenset(path_nodes), frozenset(keep - path_nodes)
    )
