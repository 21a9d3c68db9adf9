"""Dataset-level evaluation and the confounder / subset-of-data robustness tests."""

from __future__ import annotations

import math
import random
from dataclasses import replace
from typing import Callable, Sequence

from .errors import EmptyDataset
from .forge import Instruction
from .graph import Edge, FactualGraph, KnowledgeGraph, Node, NodeId, nodes_on_paths, remove_node
from .intervention import build_intervention_set, causal_chain, classify_nodes
from .pathway import EvalReport, RiskScores, eval_metrics, extract_path, iou, report_delta

Scorer = Callable[[Instruction], "tuple[float, RiskScores]"]


def oracle_scorer(inst: Instruction) -> tuple[float, RiskScores]:
    """Reachability labels and indicator node scores on the causal chain."""
    s = inst.graph_set
    chain = set(causal_chain(s, classify_nodes(s)))
    per = {v: 1.0 if v in chain else 0.0 for v in s.factual.graph.nodes}
    return inst.label, RiskScores(per, s.factual_label)


def evaluate_instances(instances: Sequence[Instruction], scorer: Scorer) -> EvalReport:
    if not instances:
        raise EmptyDataset("nothing to evaluate")
    preds, ious = [], []
    for inst in instances:
        p, scores = scorer(inst)
        preds.append((p, int(inst.label)))
        s = inst.graph_set
        truth = causal_chain(s, classify_nodes(s))
        # a perturbed graph may lose every source-target route; IoU is then undefined
        ious.append(iou(extract_path(s.factual, scores), truth) if truth else None)
    report = eval_metrics(preds, ious)
    for rec, inst in zip(report.per_instance, instances):
        rec["id"] = inst.id
    return report


def _rebuild(inst: Instruction, graph: KnowledgeGraph) -> Instruction:
    f = inst.graph_set.factual
    path = nodes_on_paths(graph, f.source, f.target)
    fg = FactualGraph(graph, f.source, f.target, frozenset(path), frozenset(set(graph.nodes) - path))
    iset = build_intervention_set(fg)
    nu = inst.intervened_node if inst.intervened_node in graph.nodes else None
    known = set(graph.nodes)
    return replace(
        inst,
        graph_set=iset,
        label=iset.label_for(nu),
        intervened_node=nu,
        alignment=tuple(a for a in inst.alignment if a.node in known),
    )


def add_confounders(inst: Instruction, n_add: int, rng: random.Random) -> Instruction:
    """Add ``n_add`` source-only nodes with 1-3 edges into existing nodes."""
    if n_add == 0:
        return inst
    g = inst.graph_set.factual.graph
    existing = list(g.nodes)
    nodes = dict(g.nodes)
    edges = list(g.edges)
    for i in range(n_add):
        cid = f"{inst.id}:confounder{i}"
        nodes[cid] = Node(f"Confounder {i + 1}", "confounder")
        for dst in rng.sample(existing, min(len(existing), rng.randint(1, 3))):
            edges.append(Edge(cid, dst, "influences"))
    return _rebuild(inst, KnowledgeGraph(nodes, tuple(edges)))


def drop_nodes(inst: Instruction, drop_fraction: float, rng: random.Random) -> Instruction:
    """Remove ceil(fraction * (|V|-2)) nodes, never the source, target or intervened node."""
    f = inst.graph_set.factual
    g = f.graph
    protected = {f.source, f.target, inst.intervened_node}
    pool = [v for v in g.nodes if v not in protected]
    k = min(len(pool), math.ceil(drop_fraction * (len(g) - 2)))
    if k == 0:
        return inst
    for v in sorted(rng.sample(pool, k)):
        g = remove_node(g, v)
    return _rebuild(inst, g)


def random_confounder_test(instances: Sequence[Instruction], n_add: int, seed: int, scorer: Scorer = oracle_scorer) -> dict:
    rng = random.Random(seed)
    perturbed = [add_confounders(inst, n_add, rng) for inst in instances]
    return report_delta(
        evaluate_instances(instances, scorer),
        evaluate_instances(perturbed, scorer),
        test="random_confounder", n_add=n_add, seed=seed,
    )


def subset_of_data_test(instances: Sequence[Instruction], drop_fraction: float, seed: int, scorer: Scorer = oracle_scorer) -> dict:
    rng = random.Random(seed)
    perturbed = [drop_nodes(inst, drop_fraction, rng) for inst in instances]
    return report_delta(
        evaluate_instances(instances, scorer),
        evaluate_instances(perturbed, scorer),
        test="subset_of_data", drop_fraction=drop_fraction, seed=seed,
    )
