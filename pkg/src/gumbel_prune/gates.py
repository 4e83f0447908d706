"""Binary Gumbel-Softmax gates with a straight-through hard sample.

Retention probabilities are stored as unconstrained logits ``phi`` with
``p = sigmoid(phi)``.  For one gate the relaxed sample is

    soft = exp((log p + xi) / tau) / (exp((log p + xi) / tau) + exp((log(1 - p) + xi') / tau))

which simplifies to ``sigmoid((phi + xi - xi') / tau)``; that is the form
evaluated here.  The forward value used by the network is the hard sample
``1[soft > 0.5]`` while gradients are taken through ``soft``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .rng import Rng


def gumbel_noise(rng: Rng, size=None):
    """Standard Gumbel noise ``-log(-log(u))`` with ``u = rng.uniform()`` in (0, 1)."""
    return -np.log(-np.log(rng.uniform(size)))


def soft_gate(phi, tau: float, xi, xi_prime):
    """Relaxed gate value in (0, 1)."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return expit((np.asarray(phi) + xi - xi_prime) / tau)


def soft_gate_grad(soft, tau: float):
    """d soft / d phi for the relaxed gate."""
    return soft * (1.0 - soft) / tau


def hard_gate_st(soft):
    """Forward value of the straight-through gate.

    Returns ``1.0`` where ``soft > 0.5`` and ``0.0`` elsewhere (ties go to 0).
    The backward rule is the identity on ``soft``: whatever gradient reaches the
    hard value is passed unchanged to the soft value, see
    :func:`hard_gate_st_backward`.
    """
    return (np.asarray(soft) > 0.5).astype(np.float64)


def hard_gate_st_backward(grad_hard):
    return grad_hard


@dataclass
class GateParams:
    logits: np.ndarray
    tau: float

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @property
    def probs(self) -> np.ndarray:
        return expit(self.logits)

    def __len__(self) -> int:
        return self.logits.size


@dataclass
class GateSample:
    """One realised gate vector and the noise that produced it."""

    hard: np.ndarray
    soft: np.ndarray
    xi: np.ndarray
    xi_prime: np.ndarray
    tau: float

    def __len__(self) -> int:
        return self.hard.size

    @classmethod
    def constant(cls, mask: np.ndarray, tau: float = 1.0) -> "GateSample":
        """Pinned gates: hard values equal ``mask``; soft path carries no gradient.

        Soft values are set to 0.5 where the mask is 1 and to a value just
        below 0.5 elsewhere so ``hard == 1[soft > 0.5]`` still holds.  The
        recorded noise is zero; these samples are not meant for replay.
        """
        mask = np.asarray(mask, dtype=np.float64).ravel()
        soft = np.where(mask > 0, np.nextafter(0.5, 1.0), 0.5)
        zeros = np.zeros_like(mask)
        return cls(hard=mask.copy(), soft=soft, xi=zeros, xi_prime=zeros.copy(), tau=tau)

    def replay(self, logits: np.ndarray) -> "GateSample":
        """Recompute the sample for new logits with the same noise."""
        soft = soft_gate(logits, self.tau, self.xi, self.xi_prime)
        return GateSample(hard_gate_st(soft), soft, self.xi, self.xi_prime, self.tau)


def sample_gates(params: GateParams, rng: Rng) -> GateSample:
    """Draw fresh (xi, xi') per gate and return the paired hard/soft vectors."""
    d = len(params)
    xi = gumbel_noise(rng, d)
    xi_prime = gumbel_noise(rng, d)
    soft = soft_gate(params.logits, params.tau, xi, xi_prime)
    return GateSample(hard_gate_st(soft), soft, xi, xi_prime, params.tau)
