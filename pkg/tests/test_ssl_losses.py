import numpy as np
import pytest
import torch

from fluorotrack.mvae.losses import loss_pretrain, loss_reco, loss_weak
from fluorotrack.mvae.masking import build_mask_plan


def patch_sq_error(target, pred, frame, token, patch, grid_w):
    row, col = token // grid_w, token % grid_w
    total = 0.0
    for py in range(patch):
        for px in range(patch):
            d = target[frame, row * patch + py, col * patch + px] - \
                pred[frame, row * patch + py, col * patch + px]
            total += d * d
    return total


def loss_reco_oracle(target, pred, plan, patch):
    grid_w = target.shape[2] // patch
    tube = sorted(plan.tube_tokens)
    frame = sorted(plan.frame_tokens)
    first = sum(patch_sq_error(target, pred, f, t, patch, grid_w) for f, t in tube) / len(tube)
    second = 0.0
    if frame:
        second = (len(tube) / len(frame) ** 2) * sum(
            patch_sq_error(target, pred, f, t, patch, grid_w) for f, t in frame
        )
    return first + second


def loss_weak_oracle(target, pred, patch):
    n, h, w = target.shape
    grid_h, grid_w = h // patch, w // patch
    total = 0.0
    for f in range(n):
        for t in range(grid_h * grid_w):
            total += patch_sq_error(target, pred, f, t, patch, grid_w)
    return total / (n * grid_h * grid_w)


@pytest.fixture()
def small_case():
    rng = np.random.default_rng(0)
    target = rng.random((2, 32, 32))
    pred = rng.random((2, 32, 32))
    plan = build_mask_plan(2, 4, tube_ratio=0.75, frame_ratio=0.5, rng=np.random.default_rng(1))
    return target, pred, plan


def test_loss_reco_zero_at_identity(small_case):
    target, _, plan = small_case
    t = torch.from_numpy(target)
    assert float(loss_reco(t, t, plan, patch=16)) == 0.0


def test_loss_weak_zero_at_identity(small_case):
    target, _, _ = small_case
    t = torch.from_numpy(target)
    assert float(loss_weak(t, t, patch=16)) == 0.0


def test_loss_reco_matches_loop_oracle():
    rng = np.random.default_rng(7)
    for trial in range(5):
        frames = int(rng.integers(2, 4))
        target = rng.random((frames, 32, 32))
        pred = rng.random((frames, 32, 32))
        plan = build_mask_plan(frames, 4, tube_ratio=0.6, frame_ratio=0.7,
                               rng=np.random.default_rng(trial))
        got = float(loss_reco(torch.from_numpy(target), torch.from_numpy(pred), plan, patch=16))
        want = loss_reco_oracle(target, pred, plan, 16)
        assert abs(got - want) <= 1e-10 * max(abs(want), 1.0)


def test_loss_weak_matches_loop_oracle():
    rng = np.random.default_rng(8)
    target = rng.random((2, 32, 32))
    pred = rng.random((2, 32, 32))
    got = float(loss_weak(torch.from_numpy(target), torch.from_numpy(pred), patch=16))
    want = loss_weak_oracle(target, pred, 16)
    assert abs(got - want) <= 1e-10 * max(abs(want), 1.0)


def test_loss_weak_constant_offset():
    target = torch.zeros(1, 32, 32, dtype=torch.float64)
    pred = torch.ones(1, 32, 32, dtype=torch.float64)
    assert float(loss_weak(target, pred, patch=16)) == pytest.approx(256.0)


def test_loss_reco_reference_arithmetic():
    # all per-token squared errors equal 1: loss = 1 + |tube|/|frame|
    target = torch.zeros(1, 5, 256, 256, dtype=torch.float64)
    pred = torch.full((1, 5, 256, 256), 1 / 16.0, dtype=torch.float64)
    plan = build_mask_plan(5, 256, rng=np.random.default_rng(5))
    val = float(loss_reco(target, pred, plan, patch=16))
    assert val == pytest.approx(1.0 + 384.0 / 753.0, rel=1e-12)


def test_loss_pretrain_composition(small_case):
    target, pred, plan = small_case
    weak = np.random.default_rng(2).random(target.shape)
    weak_pred = np.random.default_rng(3).random(target.shape)
    args = (torch.from_numpy(target), torch.from_numpy(pred),
            torch.from_numpy(weak), torch.from_numpy(weak_pred))
    total, reco, weak_term = loss_pretrain(*args, plan, alpha=1.0, beta=1.0, patch=16)
    assert float(total) == pytest.approx(float(reco) + float(weak_term), rel=1e-12)
    beta0, _, _ = loss_pretrain(*args, plan, alpha=1.0, beta=0.0, patch=16)
    assert float(beta0) == pytest.approx(float(reco), rel=1e-12)
    alpha0, _, _ = loss_pretrain(args[0], args[1], args[2], args[2], plan,
                                 alpha=0.0, beta=1.0, patch=16)
    assert float(alpha0) == 0.0


def test_nonnegative_and_finite_guard(small_case):
    target, pred, plan = small_case
    assert float(loss_reco(torch.from_numpy(target), torch.from_numpy(pred), plan, patch=16)) >= 0
    bad = torch.from_numpy(pred.copy())
    bad[0, 0, 0] = float("nan")
    with pytest.raises(ValueError, match="non-finite"):
        loss_reco(torch.from_numpy(target), bad, plan, patch=16)
    with pytest.raises(ValueError, match="non-finite"):
        loss_weak(torch.from_numpy(target), bad, patch=16)


def test_negative_weights_rejected(small_case):
    target, pred, plan = small_case
    with pytest.raises(ValueError):
        loss_pretrain(torch.from_numpy(target), torch.from_numpy(pred),
                      torch.from_numpy(target), torch.from_numpy(pred),
                      plan, alpha=-1.0, beta=1.0, patch=16)
