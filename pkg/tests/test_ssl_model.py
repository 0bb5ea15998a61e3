import numpy as np
import pytest
import torch

from fluorotrack.datasets import VideoClip
from fluorotrack.mvae.masking import build_mask_plan
from fluorotrack.mvae.model import MaskedVideoAutoencoder, forward_pretrain


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return MaskedVideoAutoencoder(dim=64, dim_lo=32, encoder_depth=2, decoder_depth=1, num_heads=4)


def test_output_shapes(model):
    frames = torch.rand(2, 5, 64, 64)
    plan = build_mask_plan(5, 16, rng=np.random.default_rng(0))
    recon, weak = model.forward_pretrain(frames, plan)
    assert recon.shape == (2, 5, 64, 64)
    assert weak.shape == (2, 5, 64, 64)


def test_dim_lo_changes_values_not_shapes():
    torch.manual_seed(1)
    small = MaskedVideoAutoencoder(dim=64, dim_lo=16, encoder_depth=1, decoder_depth=1, num_heads=4)
    torch.manual_seed(1)
    wide = MaskedVideoAutoencoder(dim=64, dim_lo=32, encoder_depth=1, decoder_depth=1, num_heads=4)
    frames = torch.rand(1, 2, 32, 32)
    plan = build_mask_plan(2, 4, rng=np.random.default_rng(0))
    with torch.no_grad():
        a, _ = small.forward_pretrain(frames, plan)
        b, _ = wide.forward_pretrain(frames, plan)
    assert a.shape == b.shape
    assert not torch.allclose(a, b)


def test_mask_tokens_are_distinct_parameters(model):
    assert model.mask_token_reco.shape == model.mask_token_weak.shape == (32,)
    assert not torch.equal(model.mask_token_reco, model.mask_token_weak)


def test_visibility_contract(model):
    """Perturbing pixels under masked tokens leaves encoder outputs unchanged."""
    rng = np.random.default_rng(3)
    plan = build_mask_plan(5, 16, rng=rng)
    frames = torch.rand(1, 5, 64, 64)
    perturbed = frames.clone()
    patch = 16
    grid_w = 64 // patch
    for flat in plan.masked_flat:
        f, tok = divmod(int(flat), 16)
        row, col = divmod(tok, grid_w)
        perturbed[0, f, row * patch : (row + 1) * patch, col * patch : (col + 1) * patch] = \
            torch.rand(patch, patch)
    with torch.no_grad():
        a = model.encode_visible(frames, plan)
        b = model.encode_visible(perturbed, plan)
    assert torch.equal(a, b)  # exactly zero difference


def test_geometry_mismatch_rejected(model):
    frames = torch.rand(1, 5, 64, 64)
    wrong_plan = build_mask_plan(5, 64, rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="geometry"):
        model.forward_pretrain(frames, wrong_plan)


def test_clip_wrapper_requires_weak_labels(model):
    clip = VideoClip(frames=np.random.default_rng(0).random((5, 64, 64)).astype(np.float32),
                     pixel_spacing=0.2)
    plan = build_mask_plan(5, 16, rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="weak"):
        forward_pretrain(model, clip, plan)
    clip.weak_labels = np.zeros_like(clip.frames)
    recon, weak = forward_pretrain(model, clip, plan)
    assert recon.shape == (5, 64, 64) and weak.shape == (5, 64, 64)


def test_deterministic_forward(model):
    frames = torch.rand(1, 5, 64, 64)
    plan = build_mask_plan(5, 16, rng=np.random.default_rng(9))
    with torch.no_grad():
        a, aw = model.forward_pretrain(frames, plan)
        b, bw = model.forward_pretrain(frames, plan)
    assert torch.equal(a, b) and torch.equal(aw, bw)
