"""Shared fixtures for the model/training tests: tiny architectures and a
central-difference gradient checker."""

import numpy as np
import torch

from physmaster.encoder import EncoderConfig, build_encoder
from physmaster.generator import GeneratorConfig, build_generator


def tiny_gen_config(**overrides) -> GeneratorConfig:
    base = dict(
        frames=4, height=16, width=16, channels=1,
        dim=16, blocks=2, heads=2, patch_t=2, patch_hw=4,
        phys_tokens=4, categories=4,
    )
    base.update(overrides)
    return GeneratorConfig(**base)


def tiny_enc_config(**overrides) -> EncoderConfig:
    base = dict(
        height=16, width=16, channels=1, patch=4,
        dim=16, blocks=2, heads=2, pool_grid=2, out_dim=16, hidden=16,
    )
    base.update(overrides)
    return EncoderConfig(**base)


def warm_generator(gen, seed=0, std=0.05):
    """Randomize the zero-initialized output path (adaLN gates and head).

    A freshly built generator outputs exactly zero everywhere, which makes
    gradient and identity checks vacuous; warming gives every parameter a
    live gradient path.
    """
    torch.manual_seed(seed)
    torch.nn.init.normal_(gen.head.weight, std=std)
    torch.nn.init.normal_(gen.head.bias, std=std)
    for block in gen.blocks:
        torch.nn.init.normal_(block.modulation[-1].weight, std=std)
        torch.nn.init.normal_(block.modulation[-1].bias, std=std)
    return gen


def tiny_models(seed=0, dtype=torch.float32, warm=False):
    gen = build_generator(tiny_gen_config(), seed).to(dtype)
    enc = build_encoder(tiny_enc_config(), seed + 1).to(dtype)
    if warm:
        warm_generator(gen, seed)
    return gen, enc


def tiny_batch(seed=0, batch=2, dtype=torch.float32, config=None):
    config = config or tiny_gen_config()
    g = torch.Generator().manual_seed(seed)
    frames = torch.rand(
        (batch, config.frames, config.height, config.width, config.channels),
        generator=g,
    ).to(dtype)
    first_frame = frames[:, 0].clone()
    category = torch.randint(0, config.categories, (batch,), generator=g)
    return frames, first_frame, category


def central_difference_check(
    loss_fn, params, n_coords=50, h=1e-5, rel_tol=1e-5, seed=0, atol=1e-9
):
    """Compare autograd gradients against central finite differences.

    `loss_fn` must be a deterministic closure over `params` (all float64).
    Checks `n_coords` random parameter coordinates spread over all tensors.
    Passes when |fd - grad| <= atol + rel_tol * max(|fd|, |grad|): the
    absolute floor covers coordinates whose gradient sits below the f64
    finite-difference noise level (~1e-11 for an O(1) loss at h=1e-5),
    where a purely relative comparison is meaningless. Returns the worst
    floored relative error.
    """
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss.backward()
    grads = [p.grad.clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    worst = 0.0
    for _ in range(n_coords):
        flat_idx = int(rng.integers(sizes.sum()))
        which = int(np.searchsorted(np.cumsum(sizes), flat_idx, side="right"))
        local = flat_idx - (0 if which == 0 else int(np.cumsum(sizes)[which - 1]))
        p = params[which]
        with torch.no_grad():
            original = p.view(-1)[local].item()
            p.view(-1)[local] = original + h
            plus = float(loss_fn())
            p.view(-1)[local] = original - h
            minus = float(loss_fn())
            p.view(-1)[local] = original
        fd = (plus - minus) / (2 * h)
        analytic = float(grads[which].view(-1)[local])
        denom = max(abs(fd), abs(analytic), atol / rel_tol)
        rel = abs(fd - analytic) / denom
        worst = max(worst, rel)
        assert rel < rel_tol, (
            f"coordinate {flat_idx}: autograd {analytic:.10g} vs fd {fd:.10g} "
            f"(rel {rel:.3g})"
        )
    return worst
