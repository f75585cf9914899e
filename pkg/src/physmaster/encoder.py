"""Physical-representation encoder.

A small patch transformer (the frozen-backbone stand-in) reads the first
frame; a trainable two-layer head maps pooled patch groups to K tokens at
generator width. The backbone has no positional embedding, so a constant
frame yields identical features at every patch; spatial information reaches
the tokens through the pooling grid itself (token index = image region).

The head is the only module trained in the encoder-preference stage; the
backbone trains jointly with the generator during supervised finetuning and
is frozen afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .generator import Attention


@dataclass(frozen=True)
class EncoderConfig:
    height: int = 64
    width: int = 64
    channels: int = 1
    patch: int = 8
    dim: int = 64
    blocks: int = 2
    heads: int = 2
    pool_grid: int = 4
    out_dim: int = 128
    hidden: int = 128

    @property
    def grid_h(self) -> int:
        return self.height // self.patch

    @property
    def grid_w(self) -> int:
        return self.width // self.patch

    @property
    def n_tokens(self) -> int:
        return self.pool_grid * self.pool_grid

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_json(d: dict) -> "EncoderConfig":
        return EncoderConfig(**d)


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PhysEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c = config
        self.patch_embed = nn.Conv2d(c.channels, c.dim, c.patch, stride=c.patch)
        self.backbone = nn.ModuleList(
            EncoderBlock(c.dim, c.heads) for _ in range(c.blocks)
        )
        self.backbone_norm = nn.LayerNorm(c.dim)
        self.head = nn.Sequential(
            nn.Linear(c.dim, c.hidden), nn.GELU(), nn.Linear(c.hidden, c.out_dim)
        )

    def patch_features(self, first_frame: torch.Tensor) -> torch.Tensor:
        """Pre-pooling per-patch features, (B, grid_h, grid_w, dim)."""
        c = self.config
        if first_frame.shape[1:] != (c.height, c.width, c.channels):
            raise ValueError(f"bad frame shape {tuple(first_frame.shape)}")
        x = self.patch_embed(first_frame.permute(0, 3, 1, 2))  # (B, D, gh, gw)
        x = x.flatten(2).transpose(1, 2)  # (B, gh*gw, D)
        for block in self.backbone:
            x = block(x)
        x = self.backbone_norm(x)
        return x.view(-1, c.grid_h, c.grid_w, c.dim)

    def forward(self, first_frame: torch.Tensor) -> torch.Tensor:
        """Physical tokens (B, K, out_dim) from the first frame."""
        c = self.config
        feats = self.patch_features(first_frame)  # (B, gh, gw, D)
        b = feats.shape[0]
        ph, pw = c.grid_h // c.pool_grid, c.grid_w // c.pool_grid
        pooled = feats.view(b, c.pool_grid, ph, c.pool_grid, pw, c.dim).mean(dim=(2, 4))
        return self.head(pooled.view(b, c.n_tokens, c.dim))

    def head_parameters(self):
        return self.head.parameters()

    def backbone_parameters(self):
        for name, p in self.named_parameters():
            if not name.startswith("head."):
                yield p


def build_encoder(config: EncoderConfig, seed: int) -> PhysEncoder:
    torch.manual_seed(seed)
    return PhysEncoder(config)
