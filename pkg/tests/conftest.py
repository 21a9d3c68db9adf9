import random

import networkx as nx
import pytest

from contagion_kg.fixtures import table1_graph
from contagion_kg.graph import Edge, KnowledgeGraph, Node


@pytest.fixture
def t1():
    return table1_graph()


def random_digraph(rng: random.Random, n: int, p: float, dag: bool = False) -> KnowledgeGraph:
    ids = [f"n{i}" for i in range(n)]
    nodes = {v: Node(f"Entity {v}", "company") for v in ids}
    edges = []
    for i, u in enumerate(ids):
        for j, v in enumerate(ids):
            if i == j or (dag and j < i):
                continue
            if rng.random() < p:
                edges.append(Edge(u, v, "rel"))
    return KnowledgeGraph(nodes, tuple(edges))


def to_nx(g: KnowledgeGraph) -> nx.DiGraph:
    d = nx.DiGraph()
    d.add_nodes_from(g.nodes)
    d.add_edges_from((e.src, e.dst) for e in g.edges)
    return d


def enumerated_path_nodes(g: KnowledgeGraph, s, t, cutoff=None) -> set:
    d = to_nx(g)
    out = set()
    for p in nx.all_simple_paths(d, s, t, cutoff=cutoff):
        out.update(p)
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.TITLES):
        if n in mod.RESULTS:
            terminalreporter.write_line(mod.summary_line(n))
