import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluorotrack.mvae.masking import build_mask_plan


def test_reference_counts_five_frames():
    plan = build_mask_plan(5, 256, rng=np.random.default_rng(0))
    assert [plan.masked_count(f) for f in range(5)] == [192, 251, 251, 251, 192]
    assert len(plan.tube_flat) == 384
    assert len(plan.frame_flat) == 753


def test_tube_positions_shared_across_tube_frames():
    plan = build_mask_plan(5, 64, rng=np.random.default_rng(3))
    per_frame = {f: sorted(t for ff, t in plan.tube_tokens if ff == f) for f in plan.tube_frames}
    assert per_frame[0] == per_frame[4] == sorted(plan.tube_positions)


def test_two_frames_all_tube():
    plan = build_mask_plan(2, 16, rng=np.random.default_rng(1))
    assert plan.tube_frames == (0, 1)
    assert plan.freeform_frames == ()
    assert len(plan.frame_flat) == 0


def test_same_seed_same_plan():
    a = build_mask_plan(5, 64, rng=np.random.default_rng(42))
    b = build_mask_plan(5, 64, rng=np.random.default_rng(42))
    assert a == b


def test_random_tube_frame_mode():
    plan = build_mask_plan(6, 32, rng=np.random.default_rng(5), tube_frame_mode="random")
    assert len(plan.tube_frames) == 2
    assert set(plan.tube_frames) | set(plan.freeform_frames) == set(range(6))


@pytest.mark.parametrize("tube,frame", [(0.0, 0.98), (1.0, 0.98), (0.75, 1.2)])
def test_bad_ratios_rejected(tube, frame):
    with pytest.raises(ValueError):
        build_mask_plan(5, 64, tube_ratio=tube, frame_ratio=frame, rng=np.random.default_rng(0))


def test_too_small_inputs_rejected():
    with pytest.raises(ValueError):
        build_mask_plan(1, 64, rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_mask_plan(5, 1, rng=np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(2, 8),
    tokens=st.integers(4, 96),
    tube=st.floats(0.05, 0.95),
    frame=st.floats(0.05, 0.95),
    seed=st.integers(0, 2**31),
)
def test_mask_plan_properties(n, tokens, tube, frame, seed):
    plan = build_mask_plan(n, tokens, tube, frame, np.random.default_rng(seed))
    # disjoint index sets
    assert not (plan.tube_tokens & plan.frame_tokens)
    # exact per-frame counts, round half-up
    for f in range(n):
        ratio = tube if f in plan.tube_frames else frame
        expected = int(np.floor(ratio * tokens + 0.5))
        observed = sum(1 for ff, _ in (plan.tube_tokens | plan.frame_tokens) if ff == f)
        assert observed == expected == plan.masked_count(f)
    # visible/masked partition the token grid
    assert len(plan.visible_flat) + len(plan.masked_flat) == n * tokens
    assert np.intersect1d(plan.visible_flat, plan.masked_flat).size == 0
