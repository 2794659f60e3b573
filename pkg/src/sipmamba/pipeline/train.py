"""Two-stage training: frozen-LM alignment, then LoRA fine-tuning at a lower rate."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import autodiff as ad
from ..errors import ContractError
from ..nn import Parameter
from ..optim import AdamW
from .dataset import ArrayDataset
from .losses import loss_total
from .model import VQLAModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr_stage1: float = 1e-5
    lr_stage2: float = 1e-6
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    lambda_l1: float = 1.0
    lambda_giou: float = 1.0
    stage2_train_projector: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainState:
    stage: int = 0
    step: int = 0
    lr: float = 0.0
    trainable: list = field(default_factory=list)
    frozen: list = field(default_factory=list)
    optimizer: AdamW | None = None
    completed: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)


def partition(model: VQLAModel, stage: int, cfg: TrainConfig) -> tuple[dict, dict]:
    """(trainable, frozen) name->parameter maps for a stage."""
    named = dict(model.named_parameters())
    if stage == 1:
        train = model.stage1_parameters()
    elif stage == 2:
        train = {**model.lora_parameters(), **model.head_parameters()}
        if cfg.stage2_train_projector:
            train.update({f"projector.{n}": p for n, p in model.projector.named_parameters()})
    else:
        raise ContractError(f"unknown stage {stage}")
    frozen = {n: p for n, p in named.items() if n not in train}
    return train, frozen


def batch_order(n: int, steps: int, batch_size: int, seed: int, stage: int):
    """Seeded epoch shuffles, concatenated and cut into ``steps`` batches."""
    rng = np.random.default_rng([seed, 1000 + stage])
    need = steps * batch_size
    chunks = []
    while sum(len(c) for c in chunks) < need:
        chunks.append(rng.permutation(n))
    flat = np.concatenate(chunks)[:need] if chunks else np.zeros(0, dtype=np.intp)
    return flat.reshape(steps, batch_size)


def _run_stage(model: VQLAModel, data: ArrayDataset, steps: int, cfg: TrainConfig,
               stage: int, lr: float, state: TrainState) -> TrainState:
    if len(data) == 0 and steps > 0:
        raise ContractError("training data is empty")
    train, frozen = partition(model, stage, cfg)
    for p in frozen.values():
        p.requires_grad = False
        p.grad = None
    for p in train.values():
        p.requires_grad = True
    params: list[Parameter] = list(train.values())
    opt = AdamW(params, lr=lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    state.stage, state.lr, state.optimizer = stage, lr, opt
    state.trainable, state.frozen = sorted(train), sorted(frozen)
    model.train()
    model.reseed_dropout(1000 * cfg.seed + stage)
    for idx in batch_order(len(data), steps, min(cfg.batch_size, max(len(data), 1)), cfg.seed, stage):
        opt.zero_grad()
        pred = model(data.patches[idx], data.questions[idx])
        loss = loss_total(pred.answer_logits, pred.bbox, data.answers[idx], data.boxes[idx],
                          cfg.lambda_l1, cfg.lambda_giou)
        ad.backward(loss)
        opt.step()
        state.step += 1
        state.loss_history.append(float(loss.item()))
        if state.step % 250 == 0:
            log.info("stage %d step %d loss %.4f", stage, state.step, state.loss_history[-1])
    state.completed.append(stage)
    return state


def train_stage1(model: VQLAModel, data: ArrayDataset, steps: int, cfg: TrainConfig | None = None,
                 state: TrainState | None = None) -> TrainState:
    cfg = cfg or TrainConfig()
    state = state or TrainState()
    if 1 in state.completed:
        raise ContractError("stage 1 already completed for this state")
    return _run_stage(model, data, steps, cfg, 1, cfg.lr_stage1, state)


def train_stage2(model: VQLAModel, data: ArrayDataset, steps: int, cfg: TrainConfig | None = None,
                 state: TrainState | None = None) -> TrainState:
    cfg = cfg or TrainConfig()
    if state is None or 1 not in state.completed:
        raise ContractError("stage 2 requires a completed stage 1")
    if 2 in state.completed:
        raise ContractError("stage 2 already completed for this state")
    return _run_stage(model, data, steps, cfg, 2, cfg.lr_stage2, state)
