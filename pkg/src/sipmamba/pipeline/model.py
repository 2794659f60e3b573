"""Toy localized-answering model: encoders, fusion, projector, state-space LM, heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..cbmi import CBMI, CBMIConfig
from ..errors import ContractError, DimensionError
from ..nn import MLP, Embedding, LayerNorm, Linear, Module, Parameter, module_rng
from ..scan_orders import GridShape, ScanMode
from ..ssd import Mamba2Block, SSDConfig
from .lora import LoRALinear

FUSIONS = ("concat", "cross-attention", "cbmi")


@dataclass
class ModelConfig:
    grid: GridShape = field(default_factory=lambda: GridShape(8, 8))
    d_in: int = 8
    d_model: int = 64
    vocab_size: int = 13
    lm_depth: int = 2
    projector: tuple = (64, 64, 64)
    answer_classes: int = 12
    lora_rank: int = 8
    lora_alpha: float = 16.0
    dropout: float = 0.1
    fusion: str = "cbmi"
    scan_mode: ScanMode = ScanMode.SIP
    cbmi_depth: int = 2
    gate: str = "silu"
    n_heads: int = 4
    d_state: int = 16
    expand: int = 2
    ssd_variant: str = "mamba2"
    a_init: tuple = (1.0, 16.0)
    loc_hidden: int = 64

    def __post_init__(self):
        if isinstance(self.grid, (list, tuple)):
            self.grid = GridShape(*self.grid)
        self.scan_mode = ScanMode(self.scan_mode)
        self.projector = tuple(self.projector)
        self.a_init = tuple(self.a_init)
        if self.lora_rank < 1:
            raise ContractError("lora_rank must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if self.fusion not in FUSIONS:
            raise ContractError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if len(self.projector) != 3 or self.projector[0] != self.d_model:
            raise ContractError("projector is a 2-layer MLP: widths (d_model, hidden, d_out)")
        if self.projector[-1] != self.d_model:
            raise ContractError("projector output must match the LM width d_model")

    def ssd(self) -> SSDConfig:
        return SSDConfig(d_model=self.d_model, n_heads=self.n_heads, d_state=self.d_state,
                         expand=self.expand, variant=self.ssd_variant,
                         a_min=self.a_init[0], a_max=self.a_init[1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [self.grid.rows, self.grid.cols]
        d["scan_mode"] = self.scan_mode.value
        d["projector"] = list(self.projector)
        d["a_init"] = list(self.a_init)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Prediction:
    answer_logits: Tensor
    bbox: Tensor


class VisionEncoder(Module):
    """Per-patch linear embedding plus a learned (H, W, d) positional table."""

    def __init__(self, grid: GridShape, d_in: int, d_model: int, rng: np.random.Generator):
        self.grid = grid
        self.patch = Linear(d_in, d_model, rng)
        self.pos = Parameter(rng.normal(0.0, 1.0, size=(grid.rows, grid.cols, d_model)))

    def forward(self, patch_grid: Tensor) -> Tensor:
        H, W = self.grid.rows, self.grid.cols
        if tuple(patch_grid.shape[-3:]) != (H, W, self.patch.d_in):
            raise DimensionError(f"patch grid {patch_grid.shape} does not match ({H}, {W}, {self.patch.d_in})")
        e = self.patch(patch_grid) + self.pos
        return e.reshape(*patch_grid.shape[:-3], H * W, e.shape[-1])


class QuestionEmbedding(Module):
    def __init__(self, vocab_size: int, d_model: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.table = Embedding(vocab_size, d_model, rng, scale=1.0)

    def forward(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ContractError(f"token id outside vocabulary of size {self.vocab_size}")
        return self.table(ids)


class ConcatFusion(Module):
    """Baseline: visual features pass through untouched; text joins only inside the LM."""

    def forward(self, t: Tensor, v: Tensor) -> Tensor:
        return v


class CrossAttentionFusion(Module):
    """Single-head cross-attention, visual queries over question keys/values."""

    def __init__(self, d_model: int, seed: int):
        self.q = Linear(d_model, d_model, module_rng(seed, "xattn.q"))
        self.k = Linear(d_model, d_model, module_rng(seed, "xattn.k"))
        self.v = Linear(d_model, d_model, module_rng(seed, "xattn.v"))
        self.norm = LayerNorm(d_model)
        self.out = Linear(d_model, d_model, module_rng(seed, "xattn.out"))
        self.scale = 1.0 / np.sqrt(d_model)

    def forward(self, t: Tensor, v: Tensor) -> Tensor:
        scores = ad.matmul(self.q(v), ad.swapaxes(self.k(t), -1, -2)) * self.scale
        attended = ad.matmul(ad.softmax(scores, axis=-1), self.v(t))
        return self.out(self.norm(v + attended))


class CBMIFusion(Module):
    def __init__(self, cfg: ModelConfig, seed: int):
        ccfg = CBMIConfig(d_model=cfg.d_model, scan_mode=cfg.scan_mode, depth=cfg.cbmi_depth,
                          gate=cfg.gate, ssd=cfg.ssd())
        self.cbmi = CBMI(ccfg, cfg.grid, seed=seed)

    def forward(self, t: Tensor, v: Tensor) -> Tensor:
        return self.cbmi(t, v).S_output


class ToyLM(Module):
    """Pre-norm residual Mamba2 stack with LoRA adapters on every block's in/out projections."""

    def __init__(self, cfg: ModelConfig, seed: int):
        rng = module_rng(seed, "lm")
        lora_rng = module_rng(seed, "lm.lora")
        self.norms = [LayerNorm(cfg.d_model) for _ in range(cfg.lm_depth)]
        self.blocks = []
        for _ in range(cfg.lm_depth):
            blk = Mamba2Block(cfg.ssd(), rng)
            blk.in_proj = LoRALinear(blk.in_proj, cfg.lora_rank, cfg.lora_alpha, lora_rng)
            blk.out_proj = LoRALinear(blk.out_proj, cfg.lora_rank, cfg.lora_alpha, lora_rng)
            self.blocks.append(blk)
        self.final_norm = LayerNorm(cfg.d_model)

    def forward(self, x: Tensor) -> Tensor:
        for norm, blk in zip(self.norms, self.blocks):
            x = x + blk(norm(x))
        return self.final_norm(x)


class VQLAModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        d = cfg.d_model
        self.vision = VisionEncoder(cfg.grid, cfg.d_in, d, module_rng(seed, "vision"))
        self.question = QuestionEmbedding(cfg.vocab_size, d, module_rng(seed, "question"))
        if cfg.fusion == "cbmi":
            self.fusion = CBMIFusion(cfg, seed)
        elif cfg.fusion == "cross-attention":
            self.fusion = CrossAttentionFusion(d, seed)
        else:
            self.fusion = ConcatFusion()
        self.projector = MLP(list(cfg.projector), module_rng(seed, "projector"))
        self.lm = ToyLM(cfg, seed)
        self.answer_head = Linear(d, cfg.answer_classes, module_rng(seed, "head.answer"))
        h = cfg.loc_hidden
        self.location_head = MLP([d, h, h, h, 4], module_rng(seed, "head.location"))
        self._drop_rng = np.random.default_rng([seed, 7])

    def reseed_dropout(self, seed: int) -> None:
        self._drop_rng = np.random.default_rng([self.seed, 7, seed])

    def _drop(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.cfg.dropout, self._drop_rng, self.training)

    def forward(self, patch_grid, token_ids) -> Prediction:
        patch_grid = ad.as_tensor(patch_grid)
        single = patch_grid.ndim == 3
        if single:
            patch_grid = patch_grid.reshape(1, *patch_grid.shape)
            token_ids = np.asarray(token_ids)[None]
        v = self.vision(patch_grid)
        t = self.question(token_ids)
        fused = self.fusion(t, v)
        p = self._drop(self.projector(fused))
        states = self.lm(ad.concat([p, t], axis=-2))
        pooled = self._drop(states.mean(axis=-2))
        logits = self.answer_head(pooled)
        bbox = ad.sigmoid(self.location_head(pooled))
        if single:
            logits, bbox = logits.reshape(-1), bbox.reshape(-1)
        return Prediction(logits, bbox)

    # parameter groups used by the two training stages

    def lm_base_parameters(self) -> dict[str, Parameter]:
        """Question embedding plus every LM weight except the LoRA factors."""
        out = {f"question.{n}": p for n, p in self.question.named_parameters()}
        out.update({f"lm.{n}": p for n, p in self.lm.named_parameters() if ".lora_" not in n})
        return out

    def lora_parameters(self) -> dict[str, Parameter]:
        return {f"lm.{n}": p for n, p in self.lm.named_parameters() if ".lora_" in n}

    def head_parameters(self) -> dict[str, Parameter]:
        out = {f"answer_head.{n}": p for n, p in self.answer_head.named_parameters()}
        out.update({f"location_head.{n}": p for n, p in self.location_head.named_parameters()})
        return out

    def stage1_parameters(self) -> dict[str, Parameter]:
        """Vision encoder, fusion, projector and heads."""
        frozen = set(self.lm_base_parameters()) | set(self.lora_parameters())
        return {n: p for n, p in self.named_parameters() if n not in frozen}


def encode_image(model: VQLAModel, patch_grid) -> Tensor:
    return model.vision(ad.as_tensor(patch_grid))


def encode_question(model: VQLAModel, token_ids) -> Tensor:
    return model.question(token_ids)


def forward_full(model: VQLAModel, patch_grid, token_ids) -> Prediction:
    return model(patch_grid, token_ids)
