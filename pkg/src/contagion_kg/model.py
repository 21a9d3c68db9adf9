"""Glue between instructions and the numerical kernel: per-instance forward passes."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .forge import Instruction
from .fusion import (
    EOS,
    AttentionStack,
    EncodedPair,
    GraphInputs,
    ModelState,
    batch_graph_inputs,
    contrastive_loss,
    cross_attention,
    cross_queries,
    encode_nodes,
    encode_tokens,
    generation_loss,
    graph_inputs,
)
from .graph import k_hop_neighborhood
from .intervention import CausalPartition, causal_chain, classify_nodes
from .pathway import RiskScores, path_loss, risk_estimate, risk_preactivations


@dataclass
class Example:
    inst: Instruction
    ids: torch.Tensor
    labels: torch.Tensor
    alignment: list  # (start, end, factual node row)
    neighborhoods: list
    graphs: GraphInputs  # factual graph first, then one segment per intervention
    members: list  # None for the factual graph, else the intervened node
    partition: CausalPartition

    @property
    def factual_rows(self) -> tuple[int, int]:
        return self.graphs.segments[0]

    def segment_of(self, node) -> int:
        return self.members.index(node)

    def truth_path(self) -> list:
        return causal_chain(self.inst.graph_set, self.partition)


def prepare(inst: Instruction, m: ModelState) -> Example:
    s = inst.graph_set
    fg = s.factual.graph
    ids = m.token_ids(inst.sequence())
    eos = m.token_index[EOS]
    labels = torch.cat([ids[1:], torch.tensor([eos])])
    rows = {v: i for i, v in enumerate(fg.nodes)}
    alignment = [(a.start, a.end, rows[a.node]) for a in inst.alignment]
    hoods = [sorted(rows[u] for u in k_hop_neighborhood(fg, v, m.hyper.k)) for v in fg.nodes]
    parts = [graph_inputs(fg, s.source, s.target, m)]
    members = [None]
    for iv in s.interventions:
        if len(iv.graph):
            parts.append(graph_inputs(iv.graph, s.source, s.target, m))
            members.append(iv.node)
    return Example(inst, ids, labels, alignment, hoods, batch_graph_inputs(parts), members, classify_nodes(s))


@dataclass
class Forward:
    l_cl: torch.Tensor
    l_en: torch.Tensor
    l_path: torch.Tensor
    p_hat: dict  # member (None = factual) -> scalar tensor
    factual_stack: AttentionStack
    factual_pre: torch.Tensor


def forward(ex: Example, m: ModelState, generation: bool = True, contrastive: bool = True) -> Forward:
    h_tok = encode_tokens(ex.ids, m)
    h_all = encode_nodes(ex.graphs, m)
    queries = cross_queries(h_tok, m)
    p_hat = {}
    factual_stack = factual_pre = None
    for member, (a, b) in zip(ex.members, ex.graphs.segments):
        stack = cross_attention(EncodedPair(h_tok, h_all[a:b]), m, queries)
        pre = risk_preactivations(stack, m)
        p_hat[member] = risk_estimate(pre)
        if member is None:
            factual_stack, factual_pre = stack, pre
    zero = torch.zeros((), dtype=h_tok.dtype)
    a, b = ex.factual_rows
    l_cl = (
        contrastive_loss(EncodedPair(h_tok, h_all[a:b]), ex.alignment, ex.neighborhoods, m.hyper)
        if contrastive and ex.alignment else zero
    )
    l_en = generation_loss(factual_stack, ex.labels, m) if generation else zero
    # an emptied graph (only possible for one-node sets) scores as certain non-contagion
    others = {v: p_hat.get(v, zero) for v in ex.partition.effects}
    l_path = path_loss(p_hat[None], others, ex.partition.causal, ex.partition.non_causal)
    if not torch.is_tensor(l_path):
        l_path = zero + l_path
    return Forward(l_cl, l_en, l_path, p_hat, factual_stack, factual_pre)


class ModelScorer:
    """Scores instructions with a trained model: P-hat of the referenced graph plus factual node scores."""

    def __init__(self, m: ModelState):
        self.m = m

    def __call__(self, inst: Instruction) -> tuple[float, RiskScores]:
        ex = prepare(inst, self.m)
        with torch.no_grad():
            fw = forward(ex, self.m, generation=False, contrastive=False)
        member = inst.intervened_node if inst.intervened_node in fw.p_hat else None
        p = float(fw.p_hat[member]) if member is not None or inst.intervened_node is None else 0.0
        node_ids = ex.graphs.node_ids[slice(*ex.factual_rows)]
        scores = RiskScores(dict(zip(node_ids, fw.factual_pre.tolist())), float(fw.p_hat[None]))
        return p, scores
