"""Random-pruning baseline at a matched global density."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .network import GatedNetwork
from .rng import Rng
from .training import TrainConfig, train_pinned


@dataclass(frozen=True)
class RandomMaskSpec:
    density: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")


def random_mask(n_gates: int | GatedNetwork, spec: RandomMaskSpec) -> np.ndarray:
    """Exactly ``floor(density * d)`` ones placed uniformly over all d positions.

    When that count is 0 a single connection is kept and a warning issued.
    """
    d = n_gates.n_gates if isinstance(n_gates, GatedNetwork) else int(n_gates)
    if d < 1:
        raise ValueError("network has no connections")
    k = math.floor(spec.density * d + 1e-9)
    if k < 1:
        warnings.warn(f"density {spec.density} keeps no connection of {d}; forcing 1", RuntimeWarning)
        k = 1
    mask = np.zeros(d)
    mask[Rng(spec.seed).stream("random-mask").choice(d, k)] = 1.0
    return mask


def train_fixed_mask(net: GatedNetwork, mask: np.ndarray, train_set, test_set, cfg: TrainConfig):
    """Train weights and biases with gates pinned to ``mask``; returns the report.

    Uses the same optimiser and batching as :func:`~gumbel_prune.training.fit`.
    Call :func:`~gumbel_prune.training.train_pinned` to also get the network.
    """
    return train_pinned(net, mask, train_set, test_set, cfg)[1]
