"""Conditional flow-matching video generator.

A small transformer over spatiotemporal patch tokens predicts the velocity
field v(z_t, t, conditions). Conditioning enters as extra sequence tokens:
first-frame patch tokens, one category token, and the physical token block,
concatenated in that fixed order after the video tokens. Each condition
group can be dropped per sample (replaced by a learned null embedding),
which is what enables classifier-free guidance at sampling time.

The generator works directly in pixel space: the "latent" video is the
(T, H, W, C) clip itself, z_0 is standard normal noise, z_1 is data, and
z_t = (1 - t) z_0 + t z_1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class GeneratorConfig:
    frames: int = 16
    height: int = 64
    width: int = 64
    channels: int = 1
    dim: int = 128
    blocks: int = 6
    heads: int = 4
    patch_t: int = 2
    patch_hw: int = 8
    phys_tokens: int = 16
    categories: int = 8

    @property
    def grid_t(self) -> int:
        return self.frames // self.patch_t

    @property
    def grid_hw(self) -> int:
        return self.height // self.patch_hw

    @property
    def n_video_tokens(self) -> int:
        return self.grid_t * self.grid_hw * (self.width // self.patch_hw)

    @property
    def n_image_tokens(self) -> int:
        return self.grid_hw * (self.width // self.patch_hw)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_json(d: dict) -> "GeneratorConfig":
        return GeneratorConfig(**d)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of flow time t in [0, 1]; (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0)
        * torch.arange(half, dtype=t.dtype, device=t.device)
        / half
    )
    args = t[:, None] * 1000.0 * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class Attention(nn.Module):
    """Multi-head self-attention with separate q/k/v/out projections.

    Projections are plain Linears so low-rank adapters can wrap them.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        h = self.heads
        q = self.q_proj(x).view(b, n, h, d // h).transpose(1, 2)
        k = self.k_proj(x).view(b, n, h, d // h).transpose(1, 2)
        v = self.v_proj(x).view(b, n, h, d // h).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(1, 2).reshape(b, n, d)
        return self.out_proj(out)


class DiTBlock(nn.Module):
    """Pre-LN transformer block modulated by the time embedding (adaLN-zero)."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(dim, 6 * dim))
        nn.init.zeros_(self.modulation[-1].weight)
        nn.init.zeros_(self.modulation[-1].bias)

    def forward(self, x: torch.Tensor, t_vec: torch.Tensor) -> torch.Tensor:
        mod = self.modulation(t_vec)[:, None, :]  # (B, 1, 6D)
        s1, b1, g1, s2, b2, g2 = mod.chunk(6, dim=-1)
        x = x + g1 * self.attn(self.norm1(x) * (1 + s1) + b1)
        x = x + g2 * self.mlp(self.norm2(x) * (1 + s2) + b2)
        return x


class VelocityNet(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c = config
        self.patch_video = nn.Conv3d(
            c.channels, c.dim,
            kernel_size=(c.patch_t, c.patch_hw, c.patch_hw),
            stride=(c.patch_t, c.patch_hw, c.patch_hw),
        )
        self.patch_image = nn.Conv2d(
            c.channels, c.dim, kernel_size=c.patch_hw, stride=c.patch_hw
        )
        self.category_embed = nn.Embedding(c.categories, c.dim)
        self.pos_video = nn.Parameter(torch.randn(c.n_video_tokens, c.dim) * 0.02)
        self.pos_image = nn.Parameter(torch.randn(c.n_image_tokens, c.dim) * 0.02)
        self.pos_phys = nn.Parameter(torch.randn(c.phys_tokens, c.dim) * 0.02)
        # learned null embeddings, one per condition group (for CFG dropout)
        self.null_image = nn.Parameter(torch.randn(c.dim) * 0.02)
        self.null_category = nn.Parameter(torch.randn(c.dim) * 0.02)
        self.null_phys = nn.Parameter(torch.randn(c.dim) * 0.02)
        self.time_mlp = nn.Sequential(
            nn.Linear(c.dim, c.dim), nn.SiLU(), nn.Linear(c.dim, c.dim)
        )
        self.blocks = nn.ModuleList(DiTBlock(c.dim, c.heads) for _ in range(c.blocks))
        self.final_norm = nn.LayerNorm(c.dim, elementwise_affine=False)
        self.head = nn.Linear(c.dim, c.patch_t * c.patch_hw * c.patch_hw * c.channels)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def _video_tokens(self, z_t: torch.Tensor) -> torch.Tensor:
        x = z_t.permute(0, 4, 1, 2, 3)  # (B, C, T, H, W)
        x = self.patch_video(x)  # (B, D, t, h, w)
        return x.flatten(2).transpose(1, 2) + self.pos_video

    def _unpatchify(self, tokens: torch.Tensor) -> torch.Tensor:
        c = self.config
        b = tokens.shape[0]
        gt, gh, gw = c.grid_t, c.grid_hw, c.width // c.patch_hw
        x = tokens.view(b, gt, gh, gw, c.patch_t, c.patch_hw, c.patch_hw, c.channels)
        x = x.permute(0, 1, 4, 2, 5, 3, 6, 7)  # (B, gt, pt, gh, ph, gw, pw, C)
        return x.reshape(b, c.frames, c.height, c.width, c.channels)

    def forward(
        self,
        z_t: torch.Tensor,  # (B, T, H, W, C)
        t: torch.Tensor,  # (B,) in [0, 1]
        first_frame: torch.Tensor,  # (B, H, W, C)
        category: torch.Tensor,  # (B,) long
        phys: torch.Tensor | None,  # (B, K, D) or None for the zeroed ablation
        drop_image: torch.Tensor | None = None,  # (B,) bool per group
        drop_category: torch.Tensor | None = None,
        drop_phys: torch.Tensor | None = None,
    ) -> torch.Tensor:
        c = self.config
        b = z_t.shape[0]
        if z_t.shape[1:] != (c.frames, c.height, c.width, c.channels):
            raise ValueError(f"bad video shape {tuple(z_t.shape)}")
        if phys is not None and phys.shape[1:] != (c.phys_tokens, c.dim):
            raise ValueError(f"bad phys token shape {tuple(phys.shape)}")

        img = self.patch_image(first_frame.permute(0, 3, 1, 2))
        img = img.flatten(2).transpose(1, 2)  # (B, Ni, D)
        if drop_image is not None:
            img = torch.where(
                drop_image.view(b, 1, 1), self.null_image.to(img.dtype), img
            )
        img = img + self.pos_image

        cat = self.category_embed(category)  # (B, D)
        if drop_category is not None:
            cat = torch.where(
                drop_category.view(b, 1), self.null_category.to(cat.dtype), cat
            )

        if phys is None:
            phys = z_t.new_zeros(b, c.phys_tokens, c.dim)
        if drop_phys is not None:
            phys = torch.where(
                drop_phys.view(b, 1, 1), self.null_phys.to(phys.dtype), phys
            )
        phys = phys + self.pos_phys

        t_vec = self.time_mlp(timestep_embedding(t, c.dim))
        x = torch.cat([self._video_tokens(z_t), img, cat[:, None, :], phys], dim=1)
        for block in self.blocks:
            x = block(x, t_vec)
        x = self.final_norm(x[:, : c.n_video_tokens])
        return self._unpatchify(self.head(x))


def build_generator(config: GeneratorConfig, seed: int) -> VelocityNet:
    torch.manual_seed(seed)
    return VelocityNet(config)


# ---------------------------------------------------------------------------
# ODE sampler with classifier-free guidance
# ---------------------------------------------------------------------------


@torch.no_grad()
def sample(
    model: VelocityNet,
    first_frame: torch.Tensor,
    category: torch.Tensor,
    phys: torch.Tensor | None,
    steps: int,
    cfg_scale: float,
    seed: int,
) -> torch.Tensor:
    """Integrate dz/dt = v from seeded noise at t=0 to t=1 with Euler steps.

    The state is kept as z_0 plus a running velocity sum (z_k = z_0 +
    sum(v_j) / steps), which is the same Euler scheme but avoids compounding
    additions, so a constant field integrates to z_0 + c with one rounding.
    Returns the raw ODE endpoint; clamp to [0, 1] only when rasterizing
    (see `to_frames`). At cfg_scale == 1 the unconditional branch is skipped
    entirely, making guided and conditional-only sampling bit-identical.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    c = model.config
    b = first_frame.shape[0]
    gen = torch.Generator().manual_seed(seed)
    dtype = next(model.parameters()).dtype
    z0 = torch.randn(
        (b, c.frames, c.height, c.width, c.channels), generator=gen, dtype=torch.float32
    ).to(dtype)
    drop_all = torch.ones(b, dtype=torch.bool)
    z = z0
    v_sum = torch.zeros_like(z0)
    for k in range(steps):
        t = torch.full((b,), k / steps, dtype=dtype)
        v_cond = model(z, t, first_frame, category, phys)
        if cfg_scale == 1.0:
            v = v_cond
        else:
            v_uncond = model(
                z, t, first_frame, category, phys,
                drop_image=drop_all, drop_category=drop_all, drop_phys=drop_all,
            )
            v = v_uncond + cfg_scale * (v_cond - v_uncond)
        v_sum = v_sum + v
        z = z0 + v_sum / steps
    return z


def to_frames(z: torch.Tensor) -> "torch.Tensor":
    """Clamp a sampled latent into renderable [0, 1] pixel range."""
    return z.clamp(0.0, 1.0)


class GeneratorSampler:
    """ClipSampler over a generator + encoder pair (conditions in, frames out)."""

    def __init__(
        self,
        generator: VelocityNet,
        encoder,
        sample_steps: int = 16,
        cfg_scale: float = 2.0,
        phys_mode: str = "encoder",  # "encoder" | "zeros"
    ):
        self.generator = generator
        self.encoder = encoder
        self.sample_steps = sample_steps
        self.cfg_scale = cfg_scale
        self.phys_mode = phys_mode

    def _phys(self, first_frame: torch.Tensor) -> torch.Tensor | None:
        if self.phys_mode == "zeros" or self.encoder is None:
            return None
        with torch.no_grad():
            return self.encoder(first_frame)

    def sample_clip(self, condition, seed: int):
        ff = torch.from_numpy(np.ascontiguousarray(condition.first_frame))[None]
        cat = torch.tensor([condition.category_label], dtype=torch.long)
        z = sample(
            self.generator, ff, cat, self._phys(ff),
            self.sample_steps, self.cfg_scale, seed,
        )
        return to_frames(z)[0].to(torch.float32).numpy()

    def sample_clip_batch(self, conditions, seeds):
        """Batched sampling: one ODE integration over the whole batch.

        Per-item noise is drawn from each item's own seed so results do not
        depend on how conditions are grouped into batches.
        """
        ff = torch.from_numpy(np.stack([c.first_frame for c in conditions]))
        cat = torch.tensor([c.category_label for c in conditions], dtype=torch.long)
        c = self.generator.config
        noises = [
            torch.randn(
                (c.frames, c.height, c.width, c.channels),
                generator=torch.Generator().manual_seed(int(s)),
            )
            for s in seeds
        ]
        z0 = torch.stack(noises).to(next(self.generator.parameters()).dtype)
        phys = self._phys(ff)
        steps = self.sample_steps
        b = len(conditions)
        drop_all = torch.ones(b, dtype=torch.bool)
        z = z0
        v_sum = torch.zeros_like(z0)
        with torch.no_grad():
            for k in range(steps):
                t = torch.full((b,), k / steps, dtype=z.dtype)
                v_cond = self.generator(z, t, ff, cat, phys)
                if self.cfg_scale == 1.0:
                    v = v_cond
                else:
                    v_uncond = self.generator(
                        z, t, ff, cat, phys,
                        drop_image=drop_all, drop_category=drop_all, drop_phys=drop_all,
                    )
                    v = v_uncond + self.cfg_scale * (v_cond - v_uncond)
                v_sum = v_sum + v
                z = z0 + v_sum / steps
        frames = to_frames(z).to(torch.float32).numpy()
        return [frames[i] for i in range(b)]
