"""Low-rank adapters for frozen linear maps."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError
from ..nn import Linear, Module, Parameter


class LoRALinear(Module):
    """``y = base(x) + (alpha / r) * (x A^T) B^T`` with A (r, d_in), B (d_out, r).

    B starts at zero, so a fresh adapter reproduces ``base`` exactly.
    """

    def __init__(self, base: Linear, rank: int, alpha: float, rng: np.random.Generator):
        if not 1 <= rank <= min(base.d_in, base.d_out):
            raise ContractError(f"LoRA rank {rank} outside [1, {min(base.d_in, base.d_out)}]")
        self.base = base
        self.rank = rank
        self.alpha = float(alpha)
        self.scaling = self.alpha / rank
        bound = 1.0 / np.sqrt(base.d_in)
        self.lora_A = Parameter(rng.uniform(-bound, bound, size=(rank, base.d_in)))
        self.lora_B = Parameter(np.zeros((base.d_out, rank)))

    @property
    def d_in(self) -> int:
        return self.base.d_in

    @property
    def d_out(self) -> int:
        return self.base.d_out

    def forward(self, x: Tensor) -> Tensor:
        return lora_apply(self, x)


def lora_apply(adapter: LoRALinear, x: Tensor) -> Tensor:
    low = ad.matmul(ad.matmul(x, ad.transpose(adapter.lora_A)), ad.transpose(adapter.lora_B))
    return adapter.base(x) + low * adapter.scaling


def lora_merge(adapter: LoRALinear) -> Linear:
    """A plain Linear equal to the adapted map: ``W + (alpha / r) (B A)^T``."""
    base = adapter.base
    merged = Linear.__new__(Linear)
    merged.d_in, merged.d_out = base.d_in, base.d_out
    delta = (adapter.lora_B.data @ adapter.lora_A.data).T * adapter.scaling
    merged.weight = Parameter(base.weight.data + delta, requires_grad=False)
    merged.bias = None if base.bias is None else Parameter(base.bias.data.copy(), requires_grad=False)
    return merged
