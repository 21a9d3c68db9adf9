"""Risk pathway inference: per-node risk scores, the intervention path loss,
path extraction, and the ACC/AUC/IoU evaluation harness."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from .errors import DimensionMismatch, EmptyPath, NoPath, SingleClass
from .graph import FactualGraph, NodeId
from .fusion import AttentionStack, ModelState

REPORT_SCHEMA_VERSION = 1
OFF_PATH_FLOOR = 0.05


@dataclass
class RiskScores:
    per_node: dict
    estimate: float


@dataclass
class RiskPath:
    nodes: list
    intensities: list


def risk_preactivations(stack: AttentionStack, m: ModelState) -> torch.Tensor:
    """Per-node pre-activations (length M).

    Heads are stacked J x L x M; the S-Linear map contracts the head axis with
    ``path.w`` and the token axis is mean-pooled. Because every attention row
    sums to one, that part alone averages to sum(w)/M for any input, so the map
    also reads each node's encoder state through ``path.u`` (plus a bias).
    """
    J = m.hyper.J
    if stack.heads.dim() != 3 or stack.heads.shape[0] != J:
        raise DimensionMismatch(f"expected {J} stacked heads, got shape {tuple(stack.heads.shape)}")
    z = torch.einsum("j,jm->m", m["path.w"], stack.heads.mean(1)) + m["path.b"]
    if stack.h_node is not None:
        z = z + stack.h_node @ m["path.u"]
    return z


def risk_estimate(pre: torch.Tensor) -> torch.Tensor:
    """P-hat: sigmoid of the node-mean readout."""
    return torch.sigmoid(pre.mean())


def node_risk_scores(stack: AttentionStack, m: ModelState, node_ids: Sequence[NodeId]) -> RiskScores:
    pre = risk_preactivations(stack, m)
    if len(node_ids) != len(pre):
        raise DimensionMismatch("node id list does not match attention width")
    return RiskScores(dict(zip(node_ids, pre.tolist())), float(risk_estimate(pre)))


def path_loss(p_factual, p_interventions: Mapping[NodeId, object], causal: Iterable[NodeId], non_causal: Iterable[NodeId]):
    """L_Z - L_X, each the mean drop in P-hat from the factual graph to the do(v=0) graph.

    An empty side contributes 0. Works on floats and on torch scalars.
    """
    def side(nodes):
        drops = [p_factual - p_interventions[v] for v in sorted(nodes)]
        return sum(drops) / len(drops) if drops else 0.0

    return side(non_causal) - side(causal)


# ---------------------------------------------------------------------------
# path extraction
# ---------------------------------------------------------------------------

def _topo_order(nodes: list, succ: dict) -> list | None:
    indeg = {v: 0 for v in nodes}
    for u in nodes:
        for w in succ[u]:
            indeg[w] += 1
    ready = sorted(v for v in nodes if indeg[v] == 0)
    order = []
    while ready:
        u = ready.pop(0)
        order.append(u)
        for w in succ[u]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
        ready.sort()
    return order if len(order) == len(nodes) else None


def best_path(f: FactualGraph, scores: Mapping[NodeId, float]) -> list[NodeId]:
    """Directed source-target path through path nodes with maximal score sum.

    Ties go to the lexicographically smaller node sequence. DAGs use dynamic
    programming; cyclic pieces fall back to simple-path enumeration.
    """
    keep = set(f.path_nodes)
    if f.source not in keep or f.target not in keep:
        raise NoPath("factual graph has no source-target path")
    nodes = sorted(keep)
    succ = {v: [w for w in f.graph.successors[v] if w in keep] for v in nodes}
    key = lambda cand: (-cand[0], cand[1])
    order = _topo_order(nodes, succ)
    if order is not None:
        best: dict = {f.source: (scores[f.source], [f.source])}
        for u in order:
            if u not in best:
                continue
            su, pu = best[u]
            for w in succ[u]:
                cand = (su + scores[w], pu + [w])
                if w not in best or key(cand) < key(best[w]):
                    best[w] = cand
        if f.target not in best:
            raise NoPath("target unreachable among path nodes")
        return best[f.target][1]

    found = None
    path, on = [f.source], {f.source}

    def dfs(u, total):
        nonlocal found
        if u == f.target:
            cand = (total, list(path))
            if found is None or key(cand) < key(found):
                found = cand
            return
        for w in succ[u]:
            if w not in on:
                path.append(w)
                on.add(w)
                dfs(w, total + scores[w])
                path.pop()
                on.discard(w)

    dfs(f.source, scores[f.source])
    if found is None:
        raise NoPath("target unreachable among path nodes")
    return found[1]


def scaled_scores(scores: Mapping[NodeId, float]) -> dict:
    """Min-max scale to [0.05, 1]; constant scores map to 1."""
    lo, hi = min(scores.values()), max(scores.values())
    if hi - lo <= 0:
        return {v: 1.0 for v in scores}
    return {v: OFF_PATH_FLOOR + (1 - OFF_PATH_FLOOR) * (s - lo) / (hi - lo) for v, s in scores.items()}


def extract_path(f: FactualGraph, r: RiskScores) -> RiskPath:
    nodes = best_path(f, r.per_node)
    s = scaled_scores(r.per_node)
    raw = [math.sqrt(s[a] * s[b]) for a, b in zip(nodes, nodes[1:])]
    top = max(raw)
    return RiskPath(nodes, [x / top for x in raw])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def iou(pred, truth) -> float:
    a = set(pred.nodes if isinstance(pred, RiskPath) else pred)
    b = set(truth)
    if not a or not b:
        raise EmptyPath("IoU needs two non-empty node sets")
    return len(a & b) / len(a | b)


def auc_score(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-statistic AUC; tied scores count one half."""
    y = np.asarray(labels, dtype=int)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(np.asarray(scores, dtype=float))
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    acc: float
    auc: float | None  # None when only one class is present
    iou_mean: float | None
    n: int
    per_instance: list = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> dict:
        return {"acc": self.acc, "auc": self.auc, "iou_mean": self.iou_mean, "n": self.n}


def eval_metrics(predictions: Sequence[tuple[float, int]], ious: Sequence[float] | None = None) -> EvalReport:
    if not predictions:
        raise SingleClass("no predictions")
    scores = [float(p) for p, _ in predictions]
    labels = [int(y) for _, y in predictions]
    if any(y not in (0, 1) for y in labels):
        raise ValueError("labels must be 0 or 1")
    acc = sum((p >= 0.5) == (y == 1) for p, y in zip(scores, labels)) / len(labels)
    try:
        auc = auc_score(scores, labels)
    except SingleClass:
        auc = None
    defined = [v for v in (ious or []) if v is not None]
    iou_mean = float(np.mean(defined)) if defined else None
    per = [{"p_hat": p, "label": y} for p, y in zip(scores, labels)]
    if ious:
        for rec, v in zip(per, ious):
            rec["iou"] = v
    return EvalReport(float(acc), auc, iou_mean, len(labels), per)


def report_delta(before: EvalReport, after: EvalReport, **params) -> dict:
    def diff(a, b):
        return None if a is None or b is None else b - a

    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "params": params,
        "before": before.summary(),
        "after": after.summary(),
        "delta": {
            "acc": diff(before.acc, after.acc),
            "auc": diff(before.auc, after.auc),
            "iou_mean": diff(before.iou_mean, after.iou_mean),
        },
    }
