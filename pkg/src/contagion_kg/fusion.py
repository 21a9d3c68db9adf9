"""Desk-scale fusion kernel: token and node encoders, multi-scale contrastive
alignment, cross multi-head attention with a soft prompt, and the generation loss.

Everything runs in float64 on CPU. Gradients come from torch autograd and are
audited against central differences in :mod:`contagion_kg.gradcheck`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F

from .errors import (
    DimensionMismatch,
    EmptyGraph,
    EmptyInput,
    LabelOutOfRange,
    NoPositives,
    VocabMismatch,
)

DTYPE = torch.float64
CHECKPOINT_VERSION = "contagion-kg/1"
UNK, SEP, EOS = "<UNK>", "<SEP>", "<EOS>"
RESERVED = (UNK, SEP, EOS)
ROLE_NONE, ROLE_SOURCE, ROLE_TARGET = 0, 1, 2


@dataclass
class Hyper:
    d: int = 32
    J: int = 8  # cross-attention heads
    l: int = 2  # lower stack depth; H_token is its output
    upper: int = 2
    stack_heads: int = 2  # self-attention heads inside the lower/upper stacks
    gnn_layers: int = 4
    k: int = 2  # subgraph hops for the contrastive loss
    w: int = 3  # context half-window in tokens
    tau: float = 1.0
    C: int = 0  # vocabulary size, filled from the vocabulary
    n_types: int = 1
    n_buckets: int = 64
    ff: int = 0  # feed-forward width, defaults to 2d

    def __post_init__(self):
        if self.ff == 0:
            self.ff = 2 * self.d
        if self.d % self.J or self.d % self.stack_heads:
            raise DimensionMismatch(f"d={self.d} must be divisible by J={self.J} and stack_heads={self.stack_heads}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def param_shapes(h: Hyper) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes, in checkpoint order."""
    d, e = h.d, h.d // h.J
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (h.C, d)}

    def block(prefix):
        for name in ("attn_q", "attn_k", "attn_v", "attn_o"):
            shapes[f"{prefix}.{name}"] = (d, d)
        shapes[f"{prefix}.ff_in"] = (d, h.ff)
        shapes[f"{prefix}.ff_in_b"] = (h.ff,)
        shapes[f"{prefix}.ff_out"] = (h.ff, d)

    for i in range(h.l):
        block(f"lower.{i}")
    shapes["gnn.type_emb"] = (h.n_types, d)
    shapes["gnn.hash_emb"] = (h.n_buckets, d)
    shapes["gnn.role_emb"] = (3, d)
    for i in range(h.gnn_layers):
        for name in ("w_self", "w_in", "w_out"):
            shapes[f"gnn.{i}.{name}"] = (d, d)
        shapes[f"gnn.{i}.b"] = (d,)
    for name in ("q", "k", "v"):
        shapes[f"cross.{name}"] = (h.J, d, e)
    for i in range(h.upper):
        block(f"upper.{i}")
    shapes["lm_head"] = (d, h.C)
    shapes["path.w"] = (h.J,)
    shapes["path.u"] = (d,)
    shapes["path.b"] = (1,)
    return shapes


class ModelState:
    """All trainable tensors plus the vocabularies they are indexed by."""

    def __init__(self, hyper: Hyper, vocab: Sequence[str], entity_types: Sequence[str], params: dict):
        self.hyper = hyper
        self.vocab = list(vocab)
        self.entity_types = list(entity_types)
        self.params = params
        self.token_index = {t: i for i, t in enumerate(self.vocab)}
        self.type_index = {t: i + 1 for i, t in enumerate(self.entity_types)}
        if len(self.vocab) != hyper.C:
            raise VocabMismatch(f"vocabulary has {len(self.vocab)} entries but C={hyper.C}")
        expected = param_shapes(hyper)
        if list(params) != list(expected) or any(tuple(params[k].shape) != s for k, s in expected.items()):
            raise DimensionMismatch("parameter block does not match the hyperparameters")

    @classmethod
    def init(cls, hyper: Hyper, vocab: Sequence[str], entity_types: Sequence[str], seed: int = 0) -> "ModelState":
        vocab = list(vocab)
        for tok in reversed(RESERVED):
            if tok not in vocab:
                vocab.insert(0, tok)
        hyper = Hyper(**{**asdict(hyper), "C": len(vocab), "n_types": len(entity_types) + 1})
        gen = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(hyper.d)
        params = {}
        for name, shape in param_shapes(hyper).items():
            t = torch.rand(shape, generator=gen, dtype=DTYPE) * (2 * bound) - bound
            params[name] = t.requires_grad_(True)
        return cls(hyper, vocab, entity_types, params)

    def parameters(self) -> list[torch.Tensor]:
        return list(self.params.values())

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def copy(self) -> "ModelState":
        return ModelState(
            Hyper(**asdict(self.hyper)),
            self.vocab,
            self.entity_types,
            {k: v.detach().clone().requires_grad_(True) for k, v in self.params.items()},
        )

    def token_ids(self, tokens: Sequence[str]) -> torch.Tensor:
        unk = self.token_index[UNK]
        return torch.tensor([self.token_index.get(t, unk) for t in tokens], dtype=torch.long)

    # -- checkpoints --------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "version": CHECKPOINT_VERSION,
            "hyper": asdict(self.hyper),
            "vocab": self.vocab,
            "entity_types": self.entity_types,
            "param_order": list(self.params),
            "params": {
                k: {"shape": list(v.shape), "data": [float(format(x, ".17g")) for x in v.detach().reshape(-1).tolist()]}
                for k, v in self.params.items()
            },
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelState":
        doc = json.loads(text)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise VocabMismatch(f"unsupported checkpoint version {doc.get('version')!r}")
        hyper = Hyper(**doc["hyper"])
        params = {}
        for k in doc["param_order"]:
            p = doc["params"][k]
            params[k] = torch.tensor(p["data"], dtype=DTYPE).reshape(p["shape"]).requires_grad_(True)
        return cls(hyper, doc["vocab"], doc["entity_types"], params)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelState":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def build_vocab(sequences) -> list[str]:
    seen = set()
    for seq in sequences:
        seen.update(seq)
    return list(RESERVED) + sorted(seen - set(RESERVED))


# ---------------------------------------------------------------------------
# transformer blocks
# ---------------------------------------------------------------------------

def causal_mask(n: int) -> torch.Tensor:
    return torch.ones(n, n, dtype=torch.bool).tril()


def prompt_mask(L: int) -> torch.Tensor:
    """Mask over the 2L fused rows: row r may read row c iff c's token time is not after r's.

    Prompt row i was built from token i's query, so token position i may see
    prompt rows 0..i and token rows 0..i, and nothing from the future.
    """
    t = torch.arange(2 * L) % L
    return t[None, :] <= t[:, None]


def _block(x: torch.Tensor, m: ModelState, prefix: str, mask: torch.Tensor) -> torch.Tensor:
    H = m.hyper.stack_heads
    n, d = x.shape
    q = (x @ m[f"{prefix}.attn_q"]).reshape(n, H, d // H).transpose(0, 1)
    k = (x @ m[f"{prefix}.attn_k"]).reshape(n, H, d // H).transpose(0, 1)
    v = (x @ m[f"{prefix}.attn_v"]).reshape(n, H, d // H).transpose(0, 1)
    out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask).transpose(0, 1).reshape(n, d)
    x = x + out @ m[f"{prefix}.attn_o"]
    return x + F.softplus(x @ m[f"{prefix}.ff_in"] + m[f"{prefix}.ff_in_b"]) @ m[f"{prefix}.ff_out"]


def encode_tokens(token_ids: torch.Tensor, m: ModelState) -> torch.Tensor:
    """H_token: embedding lookup followed by the lower causal self-attention stack (L x d)."""
    if token_ids.numel() == 0:
        raise EmptyInput("empty token sequence")
    x = m["tok_emb"][token_ids]
    mask = causal_mask(len(token_ids))
    for i in range(m.hyper.l):
        x = _block(x, m, f"lower.{i}", mask)
    return x


def upper_forward(fused: torch.Tensor, m: ModelState) -> torch.Tensor:
    """Upper stack over the fused rows, returning vocabulary logits (2L x C)."""
    mask = prompt_mask(fused.shape[0] // 2)
    x = fused
    for i in range(m.hyper.upper):
        x = _block(x, m, f"upper.{i}", mask)
    return x @ m["lm_head"]


# ---------------------------------------------------------------------------
# graph encoder
# ---------------------------------------------------------------------------

def label_bucket(label: str, n_buckets: int) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "big") % n_buckets


@dataclass
class GraphInputs:
    """Dense encoder inputs for one graph or a disjoint union of graphs."""

    node_ids: list
    type_idx: torch.Tensor
    hash_idx: torch.Tensor
    role_idx: torch.Tensor
    mean_in: torch.Tensor  # row i averages over in-neighbours of node i
    mean_out: torch.Tensor
    segments: list = field(default_factory=list)  # (start, stop) row ranges per member graph

    @property
    def size(self) -> int:
        return len(self.node_ids)


def graph_inputs(g, source, target, m: ModelState) -> GraphInputs:
    ids = list(g.nodes)
    if not ids:
        raise EmptyGraph("cannot encode an empty graph")
    pos = {v: i for i, v in enumerate(ids)}
    n = len(ids)
    a_in = torch.zeros(n, n, dtype=DTYPE)
    a_out = torch.zeros(n, n, dtype=DTYPE)
    for v in ids:
        for u in g.predecessors[v]:
            a_in[pos[v], pos[u]] = 1.0
        for u in g.successors[v]:
            a_out[pos[v], pos[u]] = 1.0
    a_in = a_in / a_in.sum(1, keepdim=True).clamp(min=1.0)
    a_out = a_out / a_out.sum(1, keepdim=True).clamp(min=1.0)
    return GraphInputs(
        ids,
        torch.tensor([m.type_index.get(g.nodes[v].entity_type, 0) for v in ids], dtype=torch.long),
        torch.tensor([label_bucket(g.nodes[v].label, m.hyper.n_buckets) for v in ids], dtype=torch.long),
        torch.tensor(
            [ROLE_SOURCE if v == source else ROLE_TARGET if v == target else ROLE_NONE for v in ids],
            dtype=torch.long,
        ),
        a_in,
        a_out,
        [(0, n)],
    )


def batch_graph_inputs(parts: Sequence[GraphInputs]) -> GraphInputs:
    segments, start = [], 0
    for p in parts:
        segments.append((start, start + p.size))
        start += p.size
    return GraphInputs(
        [v for p in parts for v in p.node_ids],
        torch.cat([p.type_idx for p in parts]),
        torch.cat([p.hash_idx for p in parts]),
        torch.cat([p.role_idx for p in parts]),
        torch.block_diag(*[p.mean_in for p in parts]),
        torch.block_diag(*[p.mean_out for p in parts]),
        segments,
    )


def node_features(gi: GraphInputs, m: ModelState) -> torch.Tensor:
    return m["gnn.type_emb"][gi.type_idx] + m["gnn.hash_emb"][gi.hash_idx] + m["gnn.role_emb"][gi.role_idx]


def encode_nodes(gi: GraphInputs, m: ModelState) -> torch.Tensor:
    """H_node: residual message passing with separate in- and out-neighbour means (M x d)."""
    if gi.size == 0:
        raise EmptyGraph("cannot encode an empty graph")
    x = node_features(gi, m)
    for i in range(m.hyper.gnn_layers):
        p = f"gnn.{i}"
        pre = x @ m[f"{p}.w_self"] + gi.mean_in @ (x @ m[f"{p}.w_in"]) + gi.mean_out @ (x @ m[f"{p}.w_out"]) + m[f"{p}.b"]
        x = x + F.softplus(pre)
    return x


# ---------------------------------------------------------------------------
# contrastive alignment
# ---------------------------------------------------------------------------

@dataclass
class EncodedPair:
    h_token: torch.Tensor
    h_node: torch.Tensor

    @property
    def L(self) -> int:
        return self.h_token.shape[0]

    @property
    def M(self) -> int:
        return self.h_node.shape[0]


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a = a / a.norm(dim=1, keepdim=True).clamp(min=1e-12)
    b = b / b.norm(dim=1, keepdim=True).clamp(min=1e-12)
    return a @ b.T


def info_nce(anchors: torch.Tensor, units: torch.Tensor, positives: torch.Tensor, tau: float) -> torch.Tensor:
    """Mean over anchors of -log softmax at the aligned unit; all other units are negatives."""
    logits = cosine_matrix(anchors, units) / tau
    return (torch.logsumexp(logits, dim=1) - logits[torch.arange(len(positives)), positives]).mean()


def contrastive_terms(pair: EncodedPair, alignment, neighborhoods, hyper: Hyper) -> dict[str, torch.Tensor]:
    """The four alignment terms.

    ``alignment`` holds (start, end, node_row) token spans; ``neighborhoods[r]``
    lists the rows inside the k-hop subgraph around node row r.
    """
    if not alignment:
        raise NoPositives("no aligned token/node pairs")
    L = pair.L
    toks, ctxs, pos = [], [], []
    for start, end, row in alignment:
        toks.append(pair.h_token[start:end].mean(0))
        ctxs.append(pair.h_token[max(0, start - hyper.w) : min(L, end + hyper.w)].mean(0))
        pos.append(row)
    toks, ctxs = torch.stack(toks), torch.stack(ctxs)
    pos = torch.tensor(pos, dtype=torch.long)
    subgraphs = torch.stack([pair.h_node[list(rows)].mean(0) for rows in neighborhoods])
    return {
        "token_node": info_nce(toks, pair.h_node, pos, hyper.tau),
        "token_subgraph": info_nce(toks, subgraphs, pos, hyper.tau),
        "context_node": info_nce(ctxs, pair.h_node, pos, hyper.tau),
        "context_subgraph": info_nce(ctxs, subgraphs, pos, hyper.tau),
    }


def contrastive_loss(pair: EncodedPair, alignment, neighborhoods, hyper: Hyper) -> torch.Tensor:
    return sum(contrastive_terms(pair, alignment, neighborhoods, hyper).values())


# ---------------------------------------------------------------------------
# cross attention and generation
# ---------------------------------------------------------------------------

@dataclass
class AttentionStack:
    heads: torch.Tensor  # J x L x M
    prompt: torch.Tensor  # L x d
    fused: torch.Tensor  # 2L x d
    h_node: torch.Tensor | None = None


def cross_queries(h_token: torch.Tensor, m: ModelState) -> torch.Tensor:
    return torch.einsum("ld,jde->jle", h_token, m["cross.q"])


def cross_attention(pair: EncodedPair, m: ModelState, queries: torch.Tensor | None = None) -> AttentionStack:
    h = m.hyper
    if pair.h_token.shape[1] != h.d or pair.h_node.shape[1] != h.d:
        raise DimensionMismatch("token and node widths must both equal d")
    e = h.d // h.J
    q = cross_queries(pair.h_token, m) if queries is None else queries
    k = torch.einsum("md,jde->jme", pair.h_node, m["cross.k"])
    v = torch.einsum("md,jde->jme", pair.h_node, m["cross.v"])
    heads = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(e), dim=-1)
    prompt = (heads @ v).transpose(0, 1).reshape(pair.L, h.d)
    return AttentionStack(heads, prompt, torch.cat([prompt, pair.h_token], dim=0), pair.h_node)


def cross_entropy_rows(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean over rows of -log softmax(logits)[row, label]."""
    logp = torch.log_softmax(logits, dim=1)
    return -logp[torch.arange(len(labels)), labels].mean()


def generation_loss(stack: AttentionStack, labels: torch.Tensor, m: ModelState) -> torch.Tensor:
    L = stack.prompt.shape[0]
    if len(labels) != L:
        raise DimensionMismatch(f"expected {L} labels, got {len(labels)}")
    if len(labels) and (int(labels.max()) >= m.hyper.C or int(labels.min()) < 0):
        raise LabelOutOfRange("label id outside the vocabulary")
    logits = upper_forward(stack.fused, m)
    return cross_entropy_rows(logits[L:], labels)


def token_probabilities(stack: AttentionStack, m: ModelState) -> torch.Tensor:
    """T: row-softmaxed vocabulary distribution for all 2L fused rows."""
    return torch.softmax(upper_forward(stack.fused, m), dim=1)
