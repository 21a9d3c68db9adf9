"""Joint training of the contrastive, generation and path losses with plain gradient descent."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from .errors import EmptyDataset, NonFiniteLoss, VocabMismatch
from .evaluation import evaluate_instances
from .forge import Instruction
from .fusion import ModelState, RESERVED
from .model import ModelScorer, forward, prepare
from .pathway import EvalReport

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("step", "l_cl", "l_en", "l_path", "l_joint")


@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.01
    batch_size: int = 1
    seed: int = 0
    loss_weights: tuple = (1.0, 1.0, 1.0)
    eval_every: int = 0  # 0 disables periodic logging of the running loss

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0 or len(self.loss_weights) != 3 or min(self.loss_weights) < 0:
            raise ValueError("learning_rate and loss_weights must be non-negative (three weights)")


@dataclass
class StepRecord:
    step: int
    epoch: int
    l_cl: float
    l_en: float
    l_path: float
    l_joint: float


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)
    final_metrics: EvalReport | None = None

    def epoch_means(self, key: str = "l_joint") -> list[float]:
        out: dict[int, list] = {}
        for r in self.steps:
            out.setdefault(r.epoch, []).append(getattr(r, key))
        return [float(np.mean(v)) for _, v in sorted(out.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in self.steps:
            w.writerow([r.step] + [format(getattr(r, k), ".17g") for k in HISTORY_FIELDS[1:]])
        return buf.getvalue()


def _check_vocab(dataset: Sequence[Instruction], m: ModelState) -> None:
    if any(t not in m.token_index for t in RESERVED):
        raise VocabMismatch("model vocabulary lacks the reserved tokens")
    known = sum(t in m.token_index for inst in dataset[:20] for t in inst.sequence())
    total = sum(len(inst.sequence()) for inst in dataset[:20])
    if total and known / total < 0.5:
        raise VocabMismatch("most dataset tokens are unknown to the model vocabulary")


def train(dataset: Sequence[Instruction], cfg: TrainConfig, init: ModelState, eval_set: Sequence[Instruction] | None = None):
    if not dataset:
        raise EmptyDataset("cannot train on an empty dataset")
    _check_vocab(dataset, init)
    m = init.copy()
    params = m.parameters()
    examples = [prepare(inst, m) for inst in dataset]
    rng = np.random.default_rng(cfg.seed)
    w_cl, w_en, w_path = cfg.loss_weights
    history = TrainHistory()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(examples))
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            comps = np.zeros(3)
            total = 0.0
            for ex in batch:
                fw = forward(ex, m, generation=w_en > 0, contrastive=w_cl > 0)
                joint = w_cl * fw.l_cl + w_en * fw.l_en + w_path * fw.l_path
                total = total + joint / len(batch)
                comps += [float(fw.l_cl.detach()), float(fw.l_en.detach()), float(fw.l_path.detach())]
            step += 1
            comps /= len(batch)
            l_joint = float(w_cl * comps[0] + w_en * comps[1] + w_path * comps[2])
            if not math.isfinite(l_joint):
                raise NonFiniteLoss(f"non-finite joint loss at step {step}", step=step)
            history.steps.append(StepRecord(step, epoch, *map(float, comps), l_joint))
            if cfg.learning_rate > 0 and torch.is_tensor(total) and total.requires_grad:
                grads = torch.autograd.grad(total, params, allow_unused=True)
                with torch.no_grad():
                    for p, g in zip(params, grads):
                        if g is not None:
                            p.sub_(cfg.learning_rate * g)
                if not all(torch.isfinite(p).all() for p in params):
                    raise NonFiniteLoss(f"non-finite parameters after step {step}", step=step)
            if cfg.eval_every and step % cfg.eval_every == 0:
                recent = history.steps[-cfg.eval_every :]
                log.info("step %d epoch %d mean l_joint %.4f", step, epoch, np.mean([r.l_joint for r in recent]))
    if eval_set:
        history.final_metrics = evaluate(m, eval_set)
    return m, history


def evaluate(m: ModelState, dataset: Sequence[Instruction]) -> EvalReport:
    if not dataset:
        raise EmptyDataset("cannot evaluate an empty dataset")
    return evaluate_instances(dataset, ModelScorer(m))
