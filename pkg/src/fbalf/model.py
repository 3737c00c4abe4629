"""Bias-aware latent factor prediction, element loss and SGD increments.

The gradient helpers return *learning-rate scaled* increments, so every
parameter update in the package reads ``x = x - grad``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

SEQUENTIAL = "sequential"
PARALLEL_ROUND = "parallel_round"


@dataclass(frozen=True)
class HyperParams:
    """Training knobs shared by the federated trainer and the oracle.

    ``rounds`` is the number of global rounds; ``t_hf`` is the last round on
    which synthetic ratings use the user mean; ``t_local`` is the number of
    local passes a client makes per round.
    """

    factors: int = 20
    eta: float = 0.002
    lam: float = 0.06
    rho: int = 1
    rounds: int = 300
    t_hf: int = 10
    t_local: int = 10
    seed: int = 0
    bias_enabled: bool = True
    filling_enabled: bool = True
    schedule: str = SEQUENTIAL
    clamp_predictions: bool = True
    init_scale: float = 0.05
    patience: int | None = None

    def __post_init__(self):
        if self.factors < 1:
            raise ValueError("factors must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.rounds < 1 or self.t_local < 1:
            raise ValueError("rounds and t_local must be >= 1")
        if self.t_hf < 0:
            raise ValueError("t_hf must be >= 0")
        if self.schedule not in (SEQUENTIAL, PARALLEL_ROUND):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")

    @property
    def effective_rho(self) -> int:
        return self.rho if self.filling_enabled else 0

    def to_dict(self) -> dict:
        return asdict(self)


def predict(c_u, a_u: float, s_i, b_i: float, bias_enabled: bool = True) -> float:
    """``a_u + b_i + c_u . s_i``, or just the inner product without biases."""
    c_u = np.asarray(c_u, dtype=np.float64)
    s_i = np.asarray(s_i, dtype=np.float64)
    if c_u.shape != s_i.shape:
        raise ValueError(f"factor length mismatch: {c_u.shape} vs {s_i.shape}")
    dot = float(np.dot(c_u, s_i))
    if not bias_enabled:
        return dot
    return a_u + b_i + dot


def residual(target: float, prediction: float) -> float:
    return target - prediction


def element_loss(target: float, c_u, a_u: float, s_i, b_i: float, lam: float) -> float:
    """Squared error on one (user, item) cell plus its L2 penalty."""
    c_u = np.asarray(c_u, dtype=np.float64)
    s_i = np.asarray(s_i, dtype=np.float64)
    delta = residual(target, predict(c_u, a_u, s_i, b_i))
    penalty = a_u * a_u + b_i * b_i + float(np.dot(c_u, c_u)) + float(np.dot(s_i, s_i))
    return 0.5 * delta * delta + 0.5 * lam * penalty


def user_side_gradients(delta: float, c_u, a_u: float, s_i, lam: float, eta: float):
    """Scaled increments for ``(c_u, a_u)`` on one element.

    Returns ``(-eta*delta*s_i + eta*lam*c_u, -eta*delta + eta*lam*a_u)``.
    """
    step = eta * delta
    shrink = eta * lam
    return shrink * c_u - step * s_i, shrink * a_u - step


def item_side_gradients(delta: float, s_i, b_i: float, c_u, lam: float, eta: float):
    """Scaled increments for ``(s_i, b_i)``; mirror of :func:`user_side_gradients`."""
    step = eta * delta
    shrink = eta * lam
    return shrink * s_i - step * c_u, shrink * b_i - step


def clamp(value, r_min: float, r_max: float):
    if np.ndim(value):
        return np.clip(value, r_min, r_max)
    return min(max(value, r_min), r_max)
