"""
Cross-modal bidirectional fusion of question tokens and scanned patch tokens.

Pipeline for text embeddings ``t`` (b, Lt, d_t) and visual embeddings ``v``
(b, H*W, d_v):

1. ``F_t = l_t(t)``, ``F_v = l_v(v)``.
2. Forward pass: the joint sequence ``[F_t ; F_v in scan order]`` runs
   through a stack of residual Mamba2 blocks; visual positions are read
   back and returned to grid order. The backward pass does the same with
   the reversed scan order and its own parameters.
3. ``S = S_fwd * gate(F_v) + S_bwd * gate(F_v)``.
4. ``S_out = Linear(LayerNorm(S))``.

Text always leads the joint sequence so every visual token is scanned after
the whole question. Only visual positions are emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .nn import LayerNorm, Linear, Module, module_rng
from .scan_orders import GridShape, ScanMode, ScanOrder, build_scan_order
from .ssd import Mamba2Block, SSDConfig

TEXT, VISUAL = 0, 1


@dataclass
class TokenSeq:
    """A joint sequence with a modality tag per position (text block first)."""

    embeddings: Tensor
    modality: np.ndarray
    grid: GridShape | None = None

    def __post_init__(self):
        tags = np.asarray(self.modality)
        if tags.shape != (self.embeddings.shape[-2],):
            raise DimensionError("one modality tag per sequence position required")
        n_vis = int((tags == VISUAL).sum())
        if self.grid is not None and n_vis != self.grid.size:
            raise ContractError(f"{n_vis} visual positions for a {self.grid} grid")
        if np.any(np.diff(tags) < 0):
            raise ContractError("modality blocks must be text then visual")

    @property
    def n_text(self) -> int:
        return int((np.asarray(self.modality) == TEXT).sum())

    @classmethod
    def joint(cls, F_t: Tensor, F_v_scanned: Tensor, grid: GridShape | None) -> "TokenSeq":
        tags = np.concatenate([np.full(F_t.shape[-2], TEXT), np.full(F_v_scanned.shape[-2], VISUAL)])
        return cls(ad.concat([F_t, F_v_scanned], axis=-2), tags, grid)


@dataclass
class CBMIConfig:
    d_model: int = 64
    scan_mode: ScanMode = ScanMode.SIP
    depth: int = 2
    gate: str = "silu"
    d_text: int | None = None
    d_visual: int | None = None
    share_directions: bool = False
    ssd: SSDConfig = field(default_factory=lambda: SSDConfig(d_model=64))

    def __post_init__(self):
        self.scan_mode = ScanMode(self.scan_mode)
        # depth 0 is a degenerate configuration kept for diagnostics
        if self.depth < 0:
            raise ContractError(f"depth must be >= 0, got {self.depth}")
        if self.gate not in GATES:
            raise ContractError(f"unknown gate {self.gate!r}")
        if self.ssd.d_model != self.d_model:
            raise ContractError("ssd.d_model must equal d_model")


GATES = {"silu": ad.silu, "sigmoid": ad.sigmoid}


@dataclass
class FusedFeatures:
    S_output: Tensor
    S_forward: Tensor
    S_backward: Tensor
    S: Tensor


class DirectionalStack(Module):
    """``depth`` pre-norm residual Mamba2 blocks: ``x <- x + block(LN(x))``."""

    def __init__(self, ssd: SSDConfig, depth: int, rng: np.random.Generator):
        self.norms = [LayerNorm(ssd.d_model) for _ in range(depth)]
        self.blocks = [Mamba2Block(ssd, rng) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        for norm, block in zip(self.norms, self.blocks):
            x = x + block(norm(x))
        return x


def _batched(x: Tensor) -> Tensor:
    return x if x.ndim == 3 else x.reshape(1, *x.shape)


class CBMI(Module):
    def __init__(self, cfg: CBMIConfig, grid: GridShape, seed: int = 0, order: ScanOrder | None = None):
        self.cfg = cfg
        self.grid = grid
        self.order = order if order is not None else build_scan_order(grid, cfg.scan_mode)
        if self.order.shape != grid:
            raise ContractError(f"scan order for {self.order.shape} given a {grid} grid")
        d = cfg.d_model
        self.l_t = Linear(cfg.d_text or d, d, module_rng(seed, "cbmi.l_t"))
        self.l_v = Linear(cfg.d_visual or d, d, module_rng(seed, "cbmi.l_v"))
        self.forward_stack = DirectionalStack(cfg.ssd, cfg.depth, module_rng(seed, "cbmi.fwd"))
        if cfg.share_directions:
            self.backward_stack = None
        else:
            self.backward_stack = DirectionalStack(cfg.ssd, cfg.depth, module_rng(seed, "cbmi.bwd"))
        self.out_norm = LayerNorm(d)
        self.out_linear = Linear(d, d, module_rng(seed, "cbmi.out"))

    @property
    def stacks(self) -> tuple[DirectionalStack, DirectionalStack]:
        bwd = self.backward_stack if self.backward_stack is not None else self.forward_stack
        return self.forward_stack, bwd

    def forward(self, t: Tensor, v: Tensor) -> FusedFeatures:
        squeeze = v.ndim == 2
        t, v = _batched(t), _batched(v)
        F_t, F_v = project_inputs(self, t, v)
        S_f = sip_mamba2_forward(self, F_t, F_v, self.order)
        S_b = sip_mamba2_backward(self, F_t, F_v, self.order)
        S = gate_and_merge(S_f, S_b, F_v, self.cfg.gate)
        out = output_proj(self, S)
        if squeeze:
            out, S_f, S_b, S = (x.reshape(*x.shape[1:]) for x in (out, S_f, S_b, S))
        return FusedFeatures(out, S_f, S_b, S)


def project_inputs(cbmi: CBMI, t: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    if t.shape[-2] == 0 or v.shape[-2] == 0:
        raise ContractError("text and visual inputs must be nonempty")
    if t.shape[-1] != cbmi.l_t.d_in:
        raise ContractError(f"text width {t.shape[-1]} != {cbmi.l_t.d_in}")
    if v.shape[-1] != cbmi.l_v.d_in:
        raise ContractError(f"visual width {v.shape[-1]} != {cbmi.l_v.d_in}")
    return cbmi.l_t(t), cbmi.l_v(v)


def _directional_pass(stack: DirectionalStack, F_t: Tensor, F_v: Tensor,
                      routes: list[np.ndarray], grid: GridShape | None) -> Tensor:
    n_t = F_t.shape[-2]
    outs = []
    for perm in routes:
        if perm.size != F_v.shape[-2]:
            raise ContractError(f"scan order of length {perm.size} for {F_v.shape[-2]} visual tokens")
        seq = TokenSeq.joint(F_t, ad.permute(F_v, perm, axis=-2), grid)
        h = stack(seq.embeddings)[:, n_t:, :]
        outs.append(ad.scatter(h, perm, axis=-2))
    if len(outs) == 1:
        return outs[0]
    total = outs[0]
    for o in outs[1:]:
        total = total + o
    return total * (1.0 / len(outs))


def sip_mamba2_forward(cbmi: CBMI, F_t: Tensor, F_v: Tensor, order: ScanOrder) -> Tensor:
    """Forward-direction features for every visual token, in grid order."""
    return _directional_pass(cbmi.stacks[0], F_t, F_v, order.forward_routes, order.shape)


def sip_mamba2_backward(cbmi: CBMI, F_t: Tensor, F_v: Tensor, order: ScanOrder) -> Tensor:
    """Backward-direction features (reversed visual scan), in grid order."""
    return _directional_pass(cbmi.stacks[1], F_t, F_v, order.backward_routes, order.shape)


def gate_and_merge(S_forward: Tensor, S_backward: Tensor, F_v: Tensor, gate: str = "silu") -> Tensor:
    if not (S_forward.shape == S_backward.shape == F_v.shape):
        raise DimensionError(
            f"gate_and_merge shapes differ: {S_forward.shape}, {S_backward.shape}, {F_v.shape}")
    g = GATES[gate](F_v)
    return S_forward * g + S_backward * g


def output_proj(cbmi: CBMI, S: Tensor) -> Tensor:
    return cbmi.out_linear(cbmi.out_norm(S))
