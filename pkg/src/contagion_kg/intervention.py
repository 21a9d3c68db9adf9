"""Node-removal interventions, reachability contagion labels, and the causal/non-causal split."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import NegativeEffect, NodeNotFound, TargetIntervention, TargetMissing
from .graph import FactualGraph, KnowledgeGraph, NodeId, remove_node


class Intervention(NamedTuple):
    node: NodeId
    graph: KnowledgeGraph
    label: float


@dataclass(frozen=True)
class InterventionSet:
    factual: FactualGraph
    interventions: tuple[Intervention, ...]
    factual_label: float

    @property
    def source(self) -> NodeId:
        return self.factual.source

    @property
    def target(self) -> NodeId:
        return self.factual.target

    def get(self, node: NodeId) -> Intervention:
        for iv in self.interventions:
            if iv.node == node:
                return iv
        if node == self.target:
            raise TargetIntervention(f"{node!r} is the target and is never intervened")
        raise NodeNotFound(f"no intervention on {node!r}")

    def graph_for(self, node: NodeId | None) -> KnowledgeGraph:
        """The factual graph for ``None``, else the do(node=0) graph."""
        return self.factual.graph if node is None else self.get(node).graph

    def label_for(self, node: NodeId | None) -> float:
        return self.factual_label if node is None else self.get(node).label

    def to_records(self) -> list[dict]:
        f = self.factual
        head = {
            "role": "factual",
            "intervened_node": None,
            "label": self.factual_label,
            "source": f.source,
            "target": f.target,
            "path_nodes": sorted(f.path_nodes),
            "attached_nodes": sorted(f.attached_nodes),
            "graph": f.graph.to_records(),
        }
        rows = [head]
        for iv in self.interventions:
            rows.append({
                "role": "intervention",
                "intervened_node": iv.node,
                "label": iv.label,
                "graph": iv.graph.to_records(),
            })
        return rows

    @classmethod
    def from_records(cls, rows: Iterable[dict]) -> "InterventionSet":
        rows = list(rows)
        head = rows[0]
        if head.get("role") != "factual":
            raise ValueError("first intervention-set record must be the factual graph")
        factual = FactualGraph.from_records(head)
        ivs = tuple(
            Intervention(r["intervened_node"], KnowledgeGraph.from_records(r["graph"]), float(r["label"]))
            for r in rows[1:]
        )
        return cls(factual, ivs, float(head["label"]))


@dataclass(frozen=True)
class CausalPartition:
    causal: frozenset
    non_causal: frozenset
    effects: dict

    def to_dict(self) -> dict:
        return {
            "causal": sorted(self.causal),
            "non_causal": sorted(self.non_causal),
            "effects": {k: self.effects[k] for k in sorted(self.effects)},
        }


def reachable(g: KnowledgeGraph, v_s: NodeId, v_t: NodeId) -> bool:
    seen = {v_s}
    queue = deque([v_s])
    while queue:
        u = queue.popleft()
        if u == v_t:
            return True
        for w in g.successors[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return False


def contagion_probability(g: KnowledgeGraph, v_s: NodeId, v_t: NodeId) -> float:
    """1.0 if risk at ``v_s`` can reach ``v_t`` along directed edges, else 0.0."""
    if v_t not in g:
        raise TargetMissing(f"target {v_t!r} missing from graph")
    if v_s not in g:
        return 0.0
    return 1.0 if reachable(g, v_s, v_t) else 0.0


def build_intervention_set(f: FactualGraph) -> InterventionSet:
    g, s, t = f.graph, f.source, f.target
    ivs = []
    for v in g.nodes:
        if v == t:
            continue
        h = remove_node(g, v)
        ivs.append(Intervention(v, h, contagion_probability(h, s, t)))
    return InterventionSet(f, tuple(ivs), contagion_probability(g, s, t))


def intervention_effect(s: InterventionSet, node: NodeId) -> float:
    """P(s->t | do(node=1)) - P(s->t | do(node=0)), with do(node=1) read as the factual graph."""
    if node == s.target:
        raise TargetIntervention(f"{node!r} is the target")
    if node not in s.factual.graph:
        raise NodeNotFound(f"node {node!r} not in factual graph")
    return s.factual_label - s.get(node).label


def classify_nodes(s: InterventionSet) -> CausalPartition:
    effects = {}
    causal, non_causal = set(), set()
    for iv in s.interventions:
        delta = intervention_effect(s, iv.node)
        if delta < 0:
            raise NegativeEffect(f"negative effect {delta} for {iv.node!r}")
        effects[iv.node] = delta
        (causal if delta > 0 else non_causal).add(iv.node)
    return CausalPartition(frozenset(causal), frozenset(non_causal), effects)


def one_path(g: KnowledgeGraph, v_s: NodeId, v_t: NodeId) -> list[NodeId] | None:
    """Some simple directed v_s -> v_t path (first found in sorted-successor DFS order)."""
    if v_s not in g or v_t not in g:
        return None
    parent = {v_s: None}
    stack = [v_s]
    while stack:
        u = stack.pop()
        if u == v_t:
            path = [u]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for w in reversed(g.successors[u]):
            if w not in parent:
                parent[w] = u
                stack.append(w)
    return None


def causal_chain(s: InterventionSet, p: CausalPartition) -> list[NodeId]:
    """Causal nodes plus the target, in propagation order.

    Every causal node sits on every source-target path, so their positions along
    any single path give the order.
    """
    path = one_path(s.factual.graph, s.source, s.target)
    if path is None:
        return []
    members = set(p.causal) | {s.target}
    return [v for v in path if v in members]


def write_intervention_set(s: InterventionSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in s.to_records():
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def read_intervention_set(path) -> InterventionSet:
    rows = [json.loads(l) for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
    return InterventionSet.from_records(rows)
