"""Low-rank adapters on the generator's attention projections.

The adapted forward is base(x) + (alpha/rank) * B(A(x)) with A seeded
small-normal and B zero, so a freshly attached adapter leaves the model
output bit-identical to the base.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

ATTENTION_PROJECTIONS = ("q_proj", "k_proj", "v_proj", "out_proj")


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        if rank < 1:
            raise ValueError("rank must be >= 1")
        if rank > min(base.in_features, base.out_features):
            raise ValueError(
                f"rank {rank} exceeds matrix dims "
                f"{base.out_features}x{base.in_features}"
            )
        self.base = base
        self.rank = rank
        self.alpha = alpha
        self.scale = alpha / rank
        self.lora_a = nn.Parameter(
            torch.randn(rank, base.in_features, dtype=base.weight.dtype) * 0.02
        )
        self.lora_b = nn.Parameter(
            torch.zeros(base.out_features, rank, dtype=base.weight.dtype)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + F.linear(F.linear(x, self.lora_a), self.lora_b) * self.scale

    def merged_weight(self) -> torch.Tensor:
        return self.base.weight + self.scale * (self.lora_b @ self.lora_a)


def attach_lora(model: nn.Module, rank: int, alpha: float, seed: int) -> nn.Module:
    """Wrap every attention projection with a fresh adapter (A seeded, B=0).

    Base parameters are frozen in place; only adapter parameters remain
    trainable. Returns the same model object.
    """
    if has_lora(model):
        raise ValueError("model already has adapters attached")
    torch.manual_seed(seed)
    for p in model.parameters():
        p.requires_grad_(False)
    targets = [
        m
        for m in model.modules()
        if hasattr(m, "q_proj") and isinstance(m.q_proj, nn.Linear)
    ]
    for module in targets:
        for name in ATTENTION_PROJECTIONS:
            setattr(module, name, LoRALinear(getattr(module, name), rank, alpha))
    return model


def lora_parameters(model: nn.Module):
    for name, p in model.named_parameters():
        if "lora_a" in name or "lora_b" in name:
            yield p


def has_lora(model: nn.Module) -> bool:
    return any(isinstance(m, LoRALinear) for m in model.modules())


def merge_lora(model: nn.Module) -> nn.Module:
    """Fold adapters into the base weights and drop the wrappers (in place)."""
    for module in model.modules():
        for name in ATTENTION_PROJECTIONS:
            child = getattr(module, name, None)
            if isinstance(child, LoRALinear):
                with torch.no_grad():
                    child.base.weight.copy_(child.merged_weight())
                setattr(module, name, child.base)
    return model
