"""Sampler interface shared by pair construction and evaluation.

Anything with a ``sample_clip`` method works: the real generator pipeline,
a ground-truth passthrough, or a stub in tests.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .corpus import ConditionBundle


class ClipSampler(Protocol):
    def sample_clip(self, condition: ConditionBundle, seed: int) -> np.ndarray:
        """Return generated frames (T, H, W, C) float32 in [0, 1]."""
        ...
