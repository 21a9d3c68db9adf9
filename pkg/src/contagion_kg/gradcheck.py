"""Central-difference audit of the autograd gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .errors import NonFiniteLoss
from .fusion import DTYPE, ModelState

LossFn = Callable[[ModelState], torch.Tensor]

# Central differences of a float64 loss of size ~1 carry about 1e-11 absolute
# roundoff at eps=1e-5, so a gradient entry below this floor cannot be resolved
# to 1e-4 relative accuracy. Such entries are left out of the sample; exact
# zeros stay in (an unused parameter must also difference to exactly zero).
RESOLVABLE = 1e-6


@dataclass
class GradcheckReport:
    max_rel_err: float
    n_coords: int
    eps: float
    worst: tuple = ()  # (param name, flat index, analytic, numeric)
    per_param: dict = field(default_factory=dict)
    n_unresolvable: int = 0  # coordinates excluded from sampling, see RESOLVABLE


def _value(loss_fn: LossFn, m: ModelState) -> float:
    with torch.no_grad():
        v = float(loss_fn(m))
    if not math.isfinite(v):
        raise NonFiniteLoss("loss is not finite during finite differencing")
    return v


def finite_difference_report(loss_fn: LossFn, m: ModelState, eps: float = 1e-5, n_coords: int = 200, seed: int = 0) -> GradcheckReport:
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    if any(p.dtype != DTYPE for p in m.parameters()):
        raise TypeError("finite differencing needs float64 parameters")
    loss = loss_fn(m)
    if not torch.isfinite(loss):
        raise NonFiniteLoss("loss is not finite at the audit point")
    names = list(m.params)
    grads = torch.autograd.grad(loss, [m[k] for k in names], allow_unused=True)
    analytic = {k: (torch.zeros_like(m[k]) if g is None else g.detach()) for k, g in zip(names, grads)}

    flat_g = torch.cat([analytic[k].reshape(-1) for k in names]).numpy()
    owner = np.repeat(np.arange(len(names)), [m[k].numel() for k in names])
    offsets = np.concatenate([[0], np.cumsum([m[k].numel() for k in names])])
    live = np.flatnonzero(np.abs(flat_g) >= RESOLVABLE)
    dead = np.flatnonzero(flat_g == 0)
    # stratified: at least half the sample where the gradient is nonzero, the
    # rest where it is exactly zero (a lost gradient shows up there)
    n = max(n_coords, 200)
    n_dead = min(len(dead), n // 2)
    n_live = min(len(live), n - n_dead)
    n_dead = min(len(dead), n - n_live)
    rng = np.random.default_rng(seed)
    picks = np.sort(np.concatenate([
        rng.choice(live, size=n_live, replace=False),
        rng.choice(dead, size=n_dead, replace=False),
    ]).astype(np.int64))
    n = len(picks)

    worst, max_err, per = (), 0.0, {}
    for flat in picks:
        i = int(owner[flat])
        name, idx = names[i], int(flat - offsets[i])
        view = m[name].data.view(-1)  # parameters are created contiguous
        old = view[idx].item()
        view[idx] = old + eps
        up = _value(loss_fn, m)
        view[idx] = old - eps
        down = _value(loss_fn, m)
        view[idx] = old
        numeric = (up - down) / (2 * eps)
        g = analytic[name].reshape(-1)[idx].item()
        err = abs(numeric - g) / max(abs(g), 1e-8)
        per[name] = max(per.get(name, 0.0), err)
        if err >= max_err:
            max_err, worst = err, (name, idx, g, numeric)
    return GradcheckReport(max_err, n, eps, worst, per, int(len(flat_g) - len(live) - len(dead)))


def finite_difference_check(loss_fn: LossFn, m: ModelState, eps: float = 1e-5, n_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between autograd and central differences on a random coordinate sample.

    The error of one coordinate is |numeric - analytic| / max(|analytic|, 1e-8).
    """
    return finite_difference_report(loss_fn, m, eps, n_coords, seed).max_rel_err


# ---------------------------------------------------------------------------
# toy instances for the audits
# ---------------------------------------------------------------------------

def toy_instance(seed: int = 0, n_nodes: int = 4):
    """A tiny instruction (M = n_nodes <= 6, L <= 12 tokens) over a random source-target DAG."""
    import random

    from .forge import AlignmentEntry, Instruction
    from .graph import Edge, FactualGraph, KnowledgeGraph, Node, nodes_on_paths
    from .intervention import build_intervention_set

    if not 2 <= n_nodes <= 6:
        raise ValueError("toy instances have 2..6 nodes")
    rng = random.Random(seed)
    ids = [f"n{i}" for i in range(n_nodes)]
    nodes = {v: Node(f"N{i}", rng.choice(["bank", "fund"])) for i, v in enumerate(ids)}
    edges = {Edge(a, b, "exposed_to") for a, b in zip(ids, ids[1:])}
    for i in range(n_nodes):
        for j in range(i + 2, n_nodes):
            if rng.random() < 0.3:
                edges.add(Edge(ids[i], ids[j], "lends_to"))
    g = KnowledgeGraph(nodes, tuple(edges))
    path = nodes_on_paths(g, ids[0], ids[-1])
    iset = build_intervention_set(FactualGraph(g, ids[0], ids[-1], frozenset(path), frozenset(set(ids) - path)))
    query = " ".join(nodes[v].label for v in ids)
    n_expl = max(1, 11 - n_nodes - 1)
    explanation = " ".join(rng.choice(["risk", "flows", "to"]) for _ in range(n_expl))
    return Instruction(
        id=f"toy-{seed}",
        query=query,
        explanation=explanation,
        group="factual",
        topic="toy",
        graph_set=iset,
        alignment=tuple(AlignmentEntry(i, i + 1, v) for i, v in enumerate(ids)),
        label=iset.factual_label,
    )


def toy_model(seed: int = 0, d: int = 16, J: int = 4):
    from .fusion import Hyper, build_vocab

    inst = toy_instance(seed)
    vocab = build_vocab([inst.sequence()])
    return ModelState.init(Hyper(d=d, J=J, stack_heads=2), vocab, ["bank", "fund"], seed=seed)


def loss_functions(inst) -> dict[str, LossFn]:
    """L_cl, L_en and L_path of one instance as functions of the model state."""
    from .model import forward, prepare

    def make(attr):
        def fn(m: ModelState) -> torch.Tensor:
            return getattr(forward(prepare(inst, m), m), attr)
        return fn

    return {"l_cl": make("l_cl"), "l_en": make("l_en"), "l_path": make("l_path")}
