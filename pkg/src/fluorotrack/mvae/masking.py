"""Tube + frame masking plans.

Two frames (the clip endpoints by default) share one random spatial mask
at the tube ratio; every other frame gets an independent near-total
random mask at the frame ratio. Masked counts are exact:
round-half-up(ratio * tokens_per_frame) per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class MaskPlan:
    num_frames: int
    tokens_per_frame: int
    tube_ratio: float
    frame_ratio: float
    tube_frames: tuple[int, ...]
    freeform_frames: tuple[int, ...]
    tube_positions: tuple[int, ...]  # spatial mask shared by all tube frames
    tube_tokens: frozenset = field(repr=False)  # {(frame, token)}
    frame_tokens: frozenset = field(repr=False)

    @property
    def total_tokens(self) -> int:
        return self.num_frames * self.tokens_per_frame

    def masked_count(self, frame: int) -> int:
        ratio = self.tube_ratio if frame in self.tube_frames else self.frame_ratio
        return _round_half_up(ratio * self.tokens_per_frame)

    def _flat(self, pairs) -> np.ndarray:
        idx = np.array(sorted(f * self.tokens_per_frame + t for f, t in pairs), dtype=np.int64)
        return idx

    @cached_property
    def tube_flat(self) -> np.ndarray:
        return self._flat(self.tube_tokens)

    @cached_property
    def frame_flat(self) -> np.ndarray:
        return self._flat(self.frame_tokens)

    @cached_property
    def masked_flat(self) -> np.ndarray:
        return np.sort(np.concatenate([self.tube_flat, self.frame_flat]))

    @cached_property
    def visible_flat(self) -> np.ndarray:
        mask = np.ones(self.total_tokens, dtype=bool)
        mask[self.masked_flat] = False
        return np.nonzero(mask)[0]


def build_mask_plan(num_frames: int, tokens_per_frame: int, tube_ratio: float = 0.75,
                    frame_ratio: float = 0.98, rng: np.random.Generator | None = None,
                    tube_frame_mode: str = "endpoints") -> MaskPlan:
    """Draw a masking plan for one clip.

    ``tube_frame_mode``: "endpoints" masks the first and last frames at the
    tube ratio (the interpolation-anchor reading); "random" picks two
    random frames instead.
    """
    if num_frames < 2:
        raise ValueError("need at least 2 frames")
    if tokens_per_frame < 2:
        raise ValueError("need at least 2 tokens per frame")
    for name, ratio in (("tube_ratio", tube_ratio), ("frame_ratio", frame_ratio)):
        if not 0.0 < ratio < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {ratio}")
    rng = rng if rng is not None else np.random.default_rng()

    if tube_frame_mode == "endpoints":
        tube_frames = (0, num_frames - 1)
    elif tube_frame_mode == "random":
        tube_frames = tuple(sorted(int(i) for i in rng.choice(num_frames, size=2, replace=False)))
    else:
        raise ValueError(f"unknown tube_frame_mode {tube_frame_mode!r}")
    freeform_frames = tuple(f for f in range(num_frames) if f not in tube_frames)

    tube_count = _round_half_up(tube_ratio * tokens_per_frame)
    frame_count = _round_half_up(frame_ratio * tokens_per_frame)

    tube_positions = tuple(sorted(int(i) for i in rng.choice(tokens_per_frame, size=tube_count, replace=False)))
    tube_tokens = frozenset((f, t) for f in tube_frames for t in tube_positions)
    frame_tokens = set()
    for f in freeform_frames:
        for t in rng.choice(tokens_per_frame, size=frame_count, replace=False):
            frame_tokens.add((f, int(t)))

    return MaskPlan(
        num_frames=num_frames,
        tokens_per_frame=tokens_per_frame,
        tube_ratio=tube_ratio,
        frame_ratio=frame_ratio,
        tube_frames=tube_frames,
        freeform_frames=freeform_frames,
        tube_positions=tube_positions,
        tube_tokens=tube_tokens,
        frame_tokens=frozenset(frame_tokens),
    )
