"""Flow-matching regression loss and the preference (Flow-DPO) loss.

Conventions: z_0 is standard normal noise, z_1 is the data clip,
z_t = (1 - t) z_0 + t z_1, and the regression target is z_1 - z_0.
Squared norms are means over elements, so the preference temperature beta
is independent of clip geometry.

The preference loss for a (winner, loser) pair sharing one noise draw and
one timestep is

    -log sigmoid( -(beta / 2) * [ (err_w(policy) - err_w(ref))
                                - (err_l(policy) - err_l(ref)) ] )

where err_x(m) is m's velocity-regression error on clip x at time t. With
policy == reference the bracket is exactly zero and the loss is ln 2.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def interpolate(noise: torch.Tensor, data: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """z_t = (1 - t) z_0 + t z_1 with per-sample t."""
    tb = t.view(-1, *([1] * (data.dim() - 1)))
    return (1 - tb) * noise + tb * data


def per_sample_mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).pow(2).flatten(1).mean(dim=1)


def sft_loss(
    generator,
    encoder,
    frames: torch.Tensor,  # (B, T, H, W, C) data clips
    first_frame: torch.Tensor,
    category: torch.Tensor,
    t: torch.Tensor,  # (B,)
    noise: torch.Tensor,  # (B, T, H, W, C)
    drop_image: torch.Tensor | None = None,
    drop_category: torch.Tensor | None = None,
    drop_phys: torch.Tensor | None = None,
    phys_mode: str = "encoder",
) -> torch.Tensor:
    """Velocity-regression MSE; gradients flow into generator and encoder."""
    z_t = interpolate(noise, frames, t)
    phys = encoder(first_frame) if phys_mode == "encoder" else None
    v = generator(
        z_t, t, first_frame, category, phys,
        drop_image=drop_image, drop_category=drop_category, drop_phys=drop_phys,
    )
    return per_sample_mse(v, frames - noise).mean()


def flow_dpo_loss(
    policy_generator,
    policy_encoder,
    ref_generator,
    ref_encoder,
    winner: torch.Tensor,  # (B, T, H, W, C)
    loser: torch.Tensor,
    first_frame: torch.Tensor,
    category: torch.Tensor,
    t: torch.Tensor,  # (B,)
    shared_noise: torch.Tensor,  # (B, T, H, W, C), shared across the pair
    beta: float,
    phys_mode: str = "encoder",
) -> tuple[torch.Tensor, dict]:
    """Preference loss plus diagnostics (per-sample sigmoid argument, errors)."""
    v_w = winner - shared_noise
    v_l = loser - shared_noise
    x_w = interpolate(shared_noise, winner, t)
    x_l = interpolate(shared_noise, loser, t)

    phys_policy = policy_encoder(first_frame) if phys_mode == "encoder" else None
    err_w_policy = per_sample_mse(
        policy_generator(x_w, t, first_frame, category, phys_policy), v_w
    )
    err_l_policy = per_sample_mse(
        policy_generator(x_l, t, first_frame, category, phys_policy), v_l
    )
    with torch.no_grad():
        phys_ref = ref_encoder(first_frame) if phys_mode == "encoder" else None
        err_w_ref = per_sample_mse(
            ref_generator(x_w, t, first_frame, category, phys_ref), v_w
        )
        err_l_ref = per_sample_mse(
            ref_generator(x_l, t, first_frame, category, phys_ref), v_l
        )

    argument = -(beta / 2.0) * (
        (err_w_policy - err_w_ref) - (err_l_policy - err_l_ref)
    )
    loss = -F.logsigmoid(argument).mean()
    stats = {
        "argument": argument.detach(),
        "err_winner_policy": err_w_policy.detach(),
        "err_loser_policy": err_l_policy.detach(),
        "err_winner_ref": err_w_ref,
        "err_loser_ref": err_l_ref,
    }
    return loss, stats
