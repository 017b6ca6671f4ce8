"""Two-state, two-action family with tunable difficulty.

Action ``u1`` keeps ``x1`` with probability ``p = (4 gamma - 1) / (3 gamma)`` and
otherwise moves to the absorbing state ``x2``; action ``u2`` stays put. Rewards
are ``r = [[1, 0], [tau, 0]]`` with ``tau = 1 - (1 - gamma)^lambda``. Larger
``lambda`` gives easier instances: ``max ||nu||_inf`` grows like
``(1 - gamma)^(lambda - 1.5)``. ``lambda = 0`` is the worst-case instance.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .mdp import TabularMDP


def _check(gamma: float, lam: float) -> None:
    if not 0.25 < gamma < 1.0:
        raise ValidationError(f"gamma must lie in (1/4, 1), got {gamma}")
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")


def example1_params(gamma: float, lam: float) -> tuple[float, float]:
    """``(p, tau)`` for the given discount and difficulty."""
    _check(gamma, lam)
    return (4 * gamma - 1) / (3 * gamma), 1 - (1 - gamma) ** lam


def example1_mdp(gamma: float, lam: float) -> TabularMDP:
    p, tau = example1_params(gamma, lam)
    transitions = np.array(
        [
            [[p, 1 - p], [0.0, 1.0]],
            [[1.0, 0.0], [0.0, 1.0]],
        ]
    )
    rewards = np.array([[1.0, 0.0], [tau, 0.0]])
    return TabularMDP(transitions, rewards, gamma, reward_noise=0.0)


def example1_qstar(gamma: float, lam: float) -> np.ndarray:
    _, tau = example1_params(gamma, lam)
    top = (3 + tau) / (4 * (1 - gamma))
    bottom = tau / (1 - gamma)
    return np.array([[top, gamma * top], [bottom, gamma * bottom]])


def paper_budget(gamma: float) -> int:
    """``N = ceil((32 * 16 / 9) / (1 - gamma)^3)``."""
    return int(np.ceil((32 * 16 / 9) / (1 - gamma) ** 3))
