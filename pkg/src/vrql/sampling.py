"""Generative-model sampling and the empirical Bellman operators built from it.

Each draw returns one sampled next state for every state-action pair together
with one noisy reward table. Transitions and rewards come from two independent
generator substreams spawned from a single seed, so reward noise is
structurally independent of the transition outcomes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, ValidationError
from .mdp import TabularMDP, check_q

# cap on the size of the boolean comparison tensor built per block of draws
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class TransitionSample:
    next_state: np.ndarray  # (X, U) ints
    reward: np.ndarray  # (X, U) floats

    def indicator_kernel(self, num_states: int) -> np.ndarray:
        """The 0/1 kernel ``Z[u, x, x'] = 1{next_state[x, u] == x'}``."""
        X, U = self.next_state.shape
        Z = np.zeros((U, X, num_states))
        xs, us = np.meshgrid(np.arange(X), np.arange(U), indexing="ij")
        Z[us, xs, self.next_state] = 1.0
        return Z


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed for the stream identified by ``(seed, *key)``."""
    ss = np.random.SeedSequence([int(seed), *map(int, key)])
    return int(ss.generate_state(1, np.uint64)[0])


class SeededSampler:
    """Reproducible source of i.i.d. draws ``(Z_k, R_k)`` from an MDP.

    ``draws`` counts every draw handed out. When ``budget`` is set, asking
    for more than the remaining budget raises :class:`BudgetError`.
    """

    def __init__(self, mdp: TabularMDP, seed: int, budget: int | None = None):
        self.mdp = mdp
        self.seed = int(seed)
        self.budget = budget
        self.draws = 0
        trans_ss, reward_ss = np.random.SeedSequence(self.seed).spawn(2)
        self._trans_rng = np.random.Generator(np.random.PCG64(trans_ss))
        self._reward_rng = np.random.Generator(np.random.PCG64(reward_ss))
        cdf = np.cumsum(mdp.kernel, axis=2)
        cdf[:, :, -1] = 1.0
        self._cdf = cdf

    @property
    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.draws

    def _reserve(self, n: int) -> None:
        if n < 0:
            raise ValidationError("number of draws must be nonnegative")
        if self.budget is not None and self.draws + n > self.budget:
            raise BudgetError(
                f"requested {n} draws but only {self.budget - self.draws} of {self.budget} remain"
            )
        self.draws += n

    def block_size(self) -> int:
        """Draws per block that keep temporary arrays small."""
        X, U = self.mdp.shape
        return max(1, _BLOCK_ELEMENTS // (X * U * X))

    def draw_block(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``n`` draws as arrays of shape ``(n, X, U)``: next states and rewards.

        The stream is identical to ``n`` successive calls of :meth:`draw`.
        """
        self._reserve(n)
        X, U = self.mdp.shape
        next_state = np.empty((n, X, U), dtype=np.int64)
        step = self.block_size()
        for start in range(0, n, step):
            stop = min(n, start + step)
            u = self._trans_rng.random((stop - start, X, U))
            next_state[start:stop] = (self._cdf <= u[..., None]).sum(axis=3)
        rewards = np.broadcast_to(self.mdp.rewards, (n, X, U)).copy()
        if self.mdp.reward_noise > 0:
            rewards += self.mdp.reward_noise * self._reward_rng.standard_normal((n, X, U))
        return next_state, rewards

    def draw(self) -> TransitionSample:
        next_state, rewards = self.draw_block(1)
        return TransitionSample(next_state[0], rewards[0])

    def blocks(self, n: int):
        """Yield ``n`` draws in memory-bounded blocks."""
        step = self.block_size()
        for start in range(0, n, step):
            yield self.draw_block(min(step, n - start))


def draw_sample(sampler: SeededSampler) -> TransitionSample:
    return sampler.draw()


def empirical_bellman(sample: TransitionSample, mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    """``R(x, u) + gamma * max_u' Q(next_state[x, u], u')``."""
    q = check_q(mdp, q)
    return sample.reward + mdp.gamma * q.max(axis=1)[sample.next_state]


def monte_carlo_bellman(sampler: SeededSampler, q: np.ndarray, n: int) -> np.ndarray:
    """Average of ``n`` fresh single-sample Bellman operators applied to ``q``."""
    if n < 1:
        raise ValidationError("Monte Carlo batch size must be at least 1")
    mdp = sampler.mdp
    v = check_q(mdp, q).max(axis=1)
    total = np.zeros(mdp.shape)
    for next_state, rewards in sampler.blocks(n):
        total += (rewards + mdp.gamma * v[next_state]).sum(axis=0)
    return total / n


def apply_sampled_policy_transition(sample: TransitionSample, pi, q: np.ndarray) -> np.ndarray:
    """``(Z^pi Q)(x, u) = Q(x', pi(x'))`` with ``x'`` the sampled next state."""
    q = np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (q.shape[0],):
        raise ValidationError("policy length does not match Q-table")
    nxt = sample.next_state
    return q[nxt, pi[nxt]]
