"""Bundled example data: the four-company silk/fabric/qipao supply chain."""

from importlib import resources

from .graph import KnowledgeGraph, read_csv_graph


def table1_paths():
    root = resources.files("contagion_kg") / "data"
    return root / "table1_nodes.csv", root / "table1_edges.csv"


def table1_graph() -> KnowledgeGraph:
    """A supplies B, B supplies C, D partners with B. Query: does risk at A reach C?"""
    nodes, edges = table1_paths()
    return read_csv_graph(nodes, edges)
