import random

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from contagion_kg.errors import NodeNotFound, TargetIntervention, TargetMissing
from contagion_kg.graph import FactualGraph, dfs_extract, load_graph, remove_node
from contagion_kg.intervention import (
    InterventionSet,
    build_intervention_set,
    causal_chain,
    classify_nodes,
    contagion_probability,
    intervention_effect,
    read_intervention_set,
    write_intervention_set,
)

from conftest import random_digraph, to_nx


def _chain(*pairs):
    ids = sorted({x for p in pairs for x in p})
    return load_graph(
        [{"id": i, "label": f"Co {i}", "entity_type": "company"} for i in ids],
        [{"src": a, "dst": b, "relation_type": "r"} for a, b in pairs],
    )


def test_table1_probabilities(t1):
    assert contagion_probability(t1, "A", "C") == 1
    assert contagion_probability(remove_node(t1, "B"), "A", "C") == 0
    assert contagion_probability(remove_node(t1, "D"), "A", "C") == 1
    assert contagion_probability(remove_node(t1, "A"), "A", "C") == 0
    with pytest.raises(TargetMissing):
        contagion_probability(remove_node(t1, "C"), "A", "C")


def test_table1_intervention_set(t1):
    s = build_intervention_set(dfs_extract(t1, "A", "C"))
    assert s.factual_label == 1
    assert [(iv.node, iv.label) for iv in s.interventions] == [("A", 0), ("B", 0), ("D", 1)]
    for iv in s.interventions:
        assert iv.graph == remove_node(t1, iv.node)
    assert intervention_effect(s, "B") == 1
    assert intervention_effect(s, "D") == 0
    assert intervention_effect(s, "A") == 1
    with pytest.raises(TargetIntervention):
        intervention_effect(s, "C")
    with pytest.raises(NodeNotFound):
        intervention_effect(s, "Q")
    p = classify_nodes(s)
    assert p.causal == {"A", "B"} and p.non_causal == {"D"}
    assert causal_chain(s, p) == ["A", "B", "C"]


def test_minimal_chain():
    g = _chain(("A", "C"))
    s = build_intervention_set(dfs_extract(g, "A", "C"))
    assert len(s.interventions) + 1 == 2
    assert s.factual_label == 1 and s.interventions[0].label == 0


def test_chain_without_attached_has_empty_z():
    g = _chain(("A", "B"), ("B", "C"), ("C", "E"))
    p = classify_nodes(build_intervention_set(dfs_extract(g, "A", "E")))
    assert p.non_causal == frozenset()
    assert p.causal == {"A", "B", "C"}


def test_diamond_redundant_paths():
    g = _chain(("A", "B"), ("B", "C"), ("A", "E"), ("E", "C"))
    s = build_intervention_set(dfs_extract(g, "A", "C"))
    p = classify_nodes(s)
    assert p.causal == {"A"} and p.non_causal == {"B", "E"}
    assert causal_chain(s, p) == ["A", "C"]


def test_jsonl_roundtrip(t1, tmp_path):
    s = build_intervention_set(dfs_extract(t1, "A", "C"))
    write_intervention_set(s, tmp_path / "s.jsonl")
    assert read_intervention_set(tmp_path / "s.jsonl") == s
    assert InterventionSet.from_records(s.to_records()) == s


def _all_paths(g, s, t):
    return [set(p) for p in nx.all_simple_paths(to_nx(g), s, t)]


def test_random_sets_match_path_enumeration():
    rng = random.Random(5)
    done = 0
    while done < 150:
        g = random_digraph(rng, 8, 0.3)
        paths = _all_paths(g, "n0", "n7")
        if not paths:
            continue
        s = build_intervention_set(dfs_extract(g, "n0", "n7", max_depth=7, attach_hops=1))
        for iv in s.interventions:
            oracle = float(any(iv.node not in p for p in _all_paths(s.factual.graph, "n0", "n7")))
            assert iv.label == oracle
        # cut-vertex law
        p = classify_nodes(s)
        common = set.intersection(*_all_paths(s.factual.graph, "n0", "n7")) - {"n7"}
        assert p.causal == common
        done += 1


@settings(max_examples=80, deadline=None)
@given(st.integers(3, 9), st.floats(0.1, 0.6), st.integers(0, 2**31 - 1))
def test_properties(n, pr, seed):
    g = random_digraph(random.Random(seed), n, pr)
    s_id, t_id = "n0", f"n{n - 1}"
    if contagion_probability(g, s_id, t_id) == 0:
        return
    f = dfs_extract(g, s_id, t_id, max_depth=n, attach_hops=1)
    s = build_intervention_set(f)
    assert s == build_intervention_set(f)  # determinism
    p = classify_nodes(s)
    assert p.causal | p.non_causal == set(f.graph.nodes) - {t_id}
    assert not (p.causal & p.non_causal)
    assert set(p.effects.values()) <= {0.0, 1.0}
    # monotonicity: removing any node never raises reachability
    for v in f.graph.nodes:
        if v != t_id:
            assert contagion_probability(remove_node(f.graph, v), s_id, t_id) <= s.factual_label
