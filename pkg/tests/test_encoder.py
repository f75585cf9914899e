import numpy as np
import pytest
import torch

from physmaster import sim
from physmaster.encoder import build_encoder
from physmaster.sim import RigidObject, Scene, SimState

from helpers import central_difference_check, tiny_enc_config


def render_frame(y, height=16, width=16):
    scene = Scene(
        objects=(RigidObject("circle", (0.5, y), (0.0, 0.0), 0.2, 0.5, 1.0, 0),),
        gravity=0.0,
    )
    frame, _ = sim.render(SimState.initial(scene), scene, height, width)
    return torch.from_numpy(frame)[None]


def test_identical_frames_give_identical_embeddings():
    enc = build_encoder(tiny_enc_config(), seed=0)
    frame = render_frame(0.7)
    a = enc(frame)
    b = enc(frame.clone())
    assert torch.equal(a, b)


def test_embedding_shape_is_tokens_by_width():
    config = tiny_enc_config()
    enc = build_encoder(config, seed=0)
    out = enc(render_frame(0.6))
    assert out.shape == (1, config.n_tokens, config.out_dim)
    assert torch.isfinite(out).all()


def test_patch_feature_grid_dims():
    config = tiny_enc_config()
    enc = build_encoder(config, seed=0)
    feats = enc.patch_features(render_frame(0.6))
    assert feats.shape == (1, config.height // config.patch, config.width // config.patch, config.dim)


def test_constant_frame_gives_identical_patch_features():
    enc = build_encoder(tiny_enc_config(), seed=0)
    frame = torch.full((1, 16, 16, 1), 0.3)
    feats = enc.patch_features(frame)[0].reshape(-1, enc.config.dim)
    # no positional embedding: patchify + attention are translation invariant
    # on constant input, so every patch feature is the same vector
    assert torch.allclose(feats, feats[0].expand_as(feats), atol=1e-6)


def test_airborne_and_grounded_frames_have_different_features():
    enc = build_encoder(tiny_enc_config(), seed=0)
    airborne = enc.patch_features(render_frame(0.7))
    grounded = enc.patch_features(render_frame(0.2))
    assert not torch.allclose(airborne, grounded)
    # and the physical tokens differ too
    assert not torch.allclose(enc(render_frame(0.7)), enc(render_frame(0.2)))


def test_geometry_mismatch_is_rejected():
    enc = build_encoder(tiny_enc_config(), seed=0)
    with pytest.raises(ValueError):
        enc(torch.zeros(1, 8, 8, 1))


def test_head_and_backbone_parameters_partition_the_module():
    enc = build_encoder(tiny_enc_config(), seed=0)
    head = {id(p) for p in enc.head_parameters()}
    backbone = {id(p) for p in enc.backbone_parameters()}
    everything = {id(p) for p in enc.parameters()}
    assert head | backbone == everything
    assert not (head & backbone)
    assert head  # non-empty


def test_token_sum_gradient_matches_finite_differences():
    enc = build_encoder(tiny_enc_config(), seed=0).double()
    frame = render_frame(0.55).double()

    def probe():
        return enc(frame).sum()

    worst = central_difference_check(
        probe, list(enc.head_parameters()), n_coords=20, h=1e-5, rel_tol=1e-5
    )
    assert worst < 1e-5
