import math
import random

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from contagion_kg.errors import DimensionMismatch, EmptyPath, NoPath, SingleClass
from contagion_kg.fusion import AttentionStack, EncodedPair, Hyper, ModelState, build_vocab, cross_attention
from contagion_kg.gradcheck import toy_instance
from contagion_kg.graph import FactualGraph, dfs_extract, load_graph
from contagion_kg.model import forward, prepare
from contagion_kg.pathway import (
    EvalReport,
    RiskPath,
    RiskScores,
    auc_score,
    best_path,
    eval_metrics,
    extract_path,
    iou,
    node_risk_scores,
    path_loss,
    report_delta,
    risk_estimate,
    risk_preactivations,
)

from conftest import random_digraph, to_nx


def _graph(pairs):
    ids = sorted({x for p in pairs for x in p})
    return load_graph(
        [{"id": v, "label": f"L{v}", "entity_type": "bank"} for v in ids],
        [{"src": a, "dst": b, "relation_type": "r"} for a, b in pairs],
    )


def _model(J=1, d=2):
    return ModelState.init(Hyper(d=d, J=J, stack_heads=1), ["x"], ["bank"], seed=0)


def _stack(heads, h_node=None):
    heads = torch.as_tensor(heads, dtype=torch.float64)
    L = heads.shape[1]
    return AttentionStack(heads, torch.zeros(L, 2, dtype=torch.float64), torch.zeros(2 * L, 2, dtype=torch.float64), h_node)


# -- risk readout --------------------------------------------------------------

def test_zero_preactivations_give_half():
    assert float(risk_estimate(torch.zeros(3, dtype=torch.float64))) == 0.5


def test_single_head_unit_weight_is_column_mean():
    m = _model()
    with torch.no_grad():
        m["path.w"].fill_(1.0)
        m["path.u"].zero_()
        m["path.b"].zero_()
    a = [[[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]]]
    with torch.no_grad():
        r = node_risk_scores(_stack(a, torch.ones(2, 2, dtype=torch.float64)), m, ["p", "q"])
    assert r.per_node["p"] == pytest.approx((0.7 + 0.2 + 0.5) / 3, abs=1e-15)
    assert r.per_node["q"] == pytest.approx((0.3 + 0.8 + 0.5) / 3, abs=1e-15)


def test_two_by_two_hand_case():
    m = _model(J=2)
    with torch.no_grad():
        m["path.w"].copy_(torch.tensor([2.0, -1.0]))
        m["path.u"].copy_(torch.tensor([0.5, 0.25]))
        m["path.b"].fill_(0.1)
    heads = [[[0.9, 0.1], [0.4, 0.6]], [[0.5, 0.5], [0.0, 1.0]]]
    h = torch.tensor([[1.0, 2.0], [-2.0, 0.0]], dtype=torch.float64)
    pre = risk_preactivations(_stack(heads, h), m).detach().tolist()
    z0 = 2 * (0.9 + 0.4) / 2 - 1 * (0.5 + 0.0) / 2 + (0.5 * 1 + 0.25 * 2) + 0.1
    z1 = 2 * (0.1 + 0.6) / 2 - 1 * (0.5 + 1.0) / 2 + (0.5 * -2 + 0) + 0.1
    assert pre == pytest.approx([z0, z1], abs=1e-15)
    assert float(risk_estimate(torch.tensor(pre, dtype=torch.float64))) == pytest.approx(1 / (1 + math.exp(-(z0 + z1) / 2)), abs=1e-15)


def test_attention_only_readout_is_input_independent():
    # why the readout also reads the node states: row-stochastic heads make the
    # node-mean of the attention part equal sum(w)/M whatever the input
    m = _model(J=2)
    with torch.no_grad():
        m["path.u"].zero_()
    rng = np.random.default_rng(0)
    estimates = []
    for L, M in ((3, 2), (5, 2), (4, 2)):
        raw = rng.random((2, L, M))
        heads = raw / raw.sum(-1, keepdims=True)
        with torch.no_grad():
            estimates.append(float(risk_estimate(risk_preactivations(_stack(heads, torch.ones(M, 2, dtype=torch.float64)), m))))
    assert max(estimates) - min(estimates) < 1e-15


def test_readout_dimension_errors():
    m = _model(J=2)
    with pytest.raises(DimensionMismatch):
        risk_preactivations(_stack([[[1.0]]]), m)
    with pytest.raises(DimensionMismatch):
        node_risk_scores(_stack([[[1.0]], [[1.0]]], torch.ones(1, 2, dtype=torch.float64)), m, ["a", "b"])


# -- path loss -----------------------------------------------------------------

def test_path_loss_perfect_model():
    assert path_loss(1.0, {"a": 0.0, "b": 0.0, "z": 1.0}, {"a", "b"}, {"z"}) == -1.0


def test_path_loss_constant_model():
    assert path_loss(0.4, {"a": 0.4, "z": 0.4}, {"a"}, {"z"}) == 0.0


def test_path_loss_empty_side_is_zero():
    assert path_loss(0.9, {"a": 0.2}, {"a"}, set()) == pytest.approx(-0.7)
    assert path_loss(0.9, {"z": 0.2}, set(), {"z"}) == pytest.approx(0.7)


@given(st.floats(0, 1), st.lists(st.floats(0, 1), min_size=1, max_size=6), st.integers(0, 6))
def test_path_loss_range(pf, others, k):
    nodes = [f"v{i}" for i in range(len(others))]
    val = path_loss(pf, dict(zip(nodes, others)), set(nodes[:k]), set(nodes[k:]))
    assert -1 <= val <= 1


# -- path extraction ------------------------------------------------------------

def test_single_chain():
    f = dfs_extract(_graph([("a", "b"), ("b", "c")]), "a", "c")
    p = extract_path(f, RiskScores({"a": 0.1, "b": -3.0, "c": 0.2}, 0.5))
    assert p.nodes == ["a", "b", "c"] and max(p.intensities) == 1.0


def test_diamond_picks_higher_branch():
    f = dfs_extract(_graph([("s", "u"), ("u", "t"), ("s", "l"), ("l", "t")]), "s", "t")
    scores = {"s": 0.0, "u": 2.0, "l": 1.0, "t": 0.0}
    assert extract_path(f, RiskScores(scores, 0.5)).nodes == ["s", "u", "t"]
    scores["l"] = 3.0
    assert extract_path(f, RiskScores(scores, 0.5)).nodes == ["s", "l", "t"]


def test_tie_goes_to_lexicographically_smaller():
    f = dfs_extract(_graph([("s", "u"), ("u", "t"), ("s", "l"), ("l", "t")]), "s", "t")
    assert extract_path(f, RiskScores({v: 1.0 for v in "sult"}, 0.5)).nodes == ["s", "l", "t"]


def test_intensities_geometric_mean():
    f = dfs_extract(_graph([("a", "b"), ("b", "c")]), "a", "c")
    p = extract_path(f, RiskScores({"a": 1.0, "b": 0.0, "c": 0.5}, 0.5))
    # min-max to [0.05, 1]: a 1, b 0.05, c 0.525
    raw = [math.sqrt(1 * 0.05), math.sqrt(0.05 * 0.525)]
    assert p.intensities == pytest.approx([r / max(raw) for r in raw], abs=1e-15)


def test_cycle_falls_back_to_enumeration():
    g = _graph([("s", "a"), ("a", "b"), ("b", "a"), ("b", "t"), ("a", "t")])
    f = dfs_extract(g, "s", "t")
    p = extract_path(f, RiskScores({"s": 0, "a": 1, "b": 5, "t": 0}, 0.5))
    assert p.nodes == ["s", "a", "b", "t"]


def test_no_path():
    g = _graph([("a", "b"), ("c", "b")])
    f = FactualGraph(g, "a", "c", frozenset(), frozenset(g.nodes))
    with pytest.raises(NoPath):
        best_path(f, {v: 0.0 for v in g.nodes})


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_extract_path_matches_enumeration(seed):
    import networkx as nx

    rng = random.Random(seed)
    g = random_digraph(rng, rng.randint(3, 7), 0.35, dag=rng.random() < 0.5)
    if not nx.has_path(to_nx(g), "n0", f"n{len(g) - 1}"):
        return
    f = dfs_extract(g, "n0", f"n{len(g) - 1}", max_depth=len(g))
    scores = {v: float(rng.randint(-3, 3)) for v in g.nodes}
    p = extract_path(f, RiskScores(scores, 0.5))
    paths = list(nx.all_simple_paths(to_nx(g), "n0", f"n{len(g) - 1}"))
    best = min(paths, key=lambda q: (-sum(scores[v] for v in q), q))
    assert p.nodes == best
    assert set(p.nodes) <= f.path_nodes
    assert all(g.successors[a] and b in g.successors[a] for a, b in zip(p.nodes, p.nodes[1:]))
    assert max(p.intensities) == 1.0 and all(0 < x <= 1 for x in p.intensities)


# -- metrics ------------------------------------------------------------------

def test_iou_examples():
    assert iou(["A", "B", "C"], {"A", "B", "C"}) == 1.0
    assert iou(RiskPath(["A", "D", "C"], [1, 1]), {"A", "B", "C"}) == 0.5
    assert iou(["A"], {"B"}) == 0.0
    with pytest.raises(EmptyPath):
        iou([], {"A"})


@given(st.sets(st.integers(0, 9), min_size=1), st.sets(st.integers(0, 9), min_size=1))
def test_iou_properties(a, b):
    v = iou(a, b)
    assert v == iou(b, a) and 0 <= v <= 1
    assert (v == 1) == (a == b) and (v == 0) == a.isdisjoint(b)


def _pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 1)), min_size=2, max_size=50))
def test_auc_matches_pairwise_oracle(pairs):
    scores = [s / 8 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        with pytest.raises(SingleClass):
            auc_score(scores, labels)
        return
    assert auc_score(scores, labels) == _pairwise_auc(scores, labels)


def test_eval_metrics_examples():
    r = eval_metrics([(0.9, 1), (0.2, 0)])
    assert (r.acc, r.auc) == (1.0, 1.0)
    r = eval_metrics([(0.2, 1), (0.9, 0)])
    assert (r.acc, r.auc) == (0.0, 0.0)
    r = eval_metrics([(0.7, 1), (0.6, 1)], ious=[1.0, None])
    assert r.auc is None and r.iou_mean == 1.0 and r.acc == 1.0
    with pytest.raises(ValueError):
        eval_metrics([(0.5, 2)])


def test_report_json_and_delta():
    a = eval_metrics([(0.9, 1), (0.2, 0)], ious=[1.0, 0.5])
    b = eval_metrics([(0.4, 1), (0.2, 0)], ious=[0.5, 0.5])
    d = report_delta(a, b, seed=3, n_add=2)
    assert d["delta"]["acc"] == -0.5 and d["delta"]["iou_mean"] == -0.25 and d["params"] == {"seed": 3, "n_add": 2}
    assert '"schema_version": 1' in a.to_json()


# -- model-level properties ------------------------------------------------------

def test_p_hat_open_interval_and_per_graph():
    inst = toy_instance(3, 5)
    m = ModelState.init(Hyper(d=8, J=2), build_vocab([inst.sequence()]), ["bank", "fund"], seed=3)
    ex = prepare(inst, m)
    with torch.no_grad():
        fw = forward(ex, m)
    assert set(fw.p_hat) == {None} | {iv.node for iv in inst.graph_set.interventions}
    assert all(0 < float(p) < 1 for p in fw.p_hat.values())
