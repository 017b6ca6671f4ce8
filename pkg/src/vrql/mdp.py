"""Finite discounted MDPs: Bellman operators, policy transition operators, resolvents.

Q-functions are plain ``(num_states, num_actions)`` float arrays and policies are
integer arrays of length ``num_states``. Whenever a Q-table is flattened, the
state-action pair ``(x, u)`` maps to index ``x * num_actions + u``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DimensionError, ValidationError

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """A discounted MDP ``(P, r, gamma)`` observed with Gaussian reward noise.

    ``transitions[u, x, x']`` is the probability of moving to ``x'`` when action
    ``u`` is taken in state ``x``; ``rewards[x, u]`` is the mean reward and
    ``reward_noise`` the standard deviation of each observed reward.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    reward_noise: float = 0.0
    kernel: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ValidationError(f"transitions must have shape (U, X, X), got {P.shape}")
        n_actions, n_states, _ = P.shape
        if n_states < 1 or n_actions < 1:
            raise ValidationError("need at least one state and one action")
        if r.shape != (n_states, n_actions):
            raise ValidationError(f"rewards must have shape ({n_states}, {n_actions}), got {r.shape}")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(r))):
            raise ValidationError("transitions and rewards must be finite")
        if np.any(P < 0):
            raise ValidationError(f"negative transition probability {P.min():.3e}")
        sums = P.sum(axis=2)
        worst = float(np.max(np.abs(sums - 1.0)))
        if worst > ROW_SUM_TOL:
            raise ValidationError(f"transition rows must sum to 1 (worst deviation {worst:.3e})")
        if not 0.0 < float(self.gamma) < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not float(self.reward_noise) >= 0.0:
            raise ValidationError(f"reward_noise must be nonnegative, got {self.reward_noise}")
        # rows already normalised to within a few ulps are left alone so that
        # save/load round trips are bit-exact
        off = np.abs(sums - 1.0) > 8 * np.finfo(float).eps
        P = np.where(off[:, :, None], P / sums[:, :, None], P)
        object.__setattr__(self, "transitions", _frozen(P))
        object.__setattr__(self, "rewards", _frozen(r))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "reward_noise", float(self.reward_noise))
        # (x, u, x') layout, the one every operator below wants
        object.__setattr__(self, "kernel", _frozen(self.transitions.transpose(1, 0, 2)))

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_states, self.num_actions)

    @property
    def dim(self) -> int:
        """Number of state-action pairs ``D = |X| * |U|``."""
        return self.num_states * self.num_actions

    def replace(self, **changes) -> "TabularMDP":
        fields = dict(
            transitions=self.transitions,
            rewards=self.rewards,
            gamma=self.gamma,
            reward_noise=self.reward_noise,
        )
        fields.update(changes)
        return TabularMDP(**fields)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "reward_noise": self.reward_noise,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMDP":
        missing = {"num_states", "num_actions", "gamma", "transitions", "rewards"} - set(data)
        if missing:
            raise ValidationError(f"MDP document is missing fields: {sorted(missing)}")
        mdp = cls(
            transitions=np.asarray(data["transitions"], dtype=float),
            rewards=np.asarray(data["rewards"], dtype=float),
            gamma=data["gamma"],
            reward_noise=data.get("reward_noise", 0.0),
        )
        if mdp.shape != (int(data["num_states"]), int(data["num_actions"])):
            raise ValidationError(
                f"declared size ({data['num_states']}, {data['num_actions']}) "
                f"does not match arrays {mdp.shape}"
            )
        return mdp


def load_mdp(path: str | Path) -> TabularMDP:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return TabularMDP.from_dict(data)


def save_mdp(mdp: TabularMDP, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp.to_dict(), fh, indent=2)
        fh.write("\n")


def random_mdp(
    num_states: int,
    num_actions: int,
    gamma: float,
    reward_noise: float = 0.0,
    seed: int | None = None,
    concentration: float = 1.0,
) -> TabularMDP:
    """Dirichlet kernels and uniform [0, 1] rewards; used by tests and demos."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(num_states, concentration), size=(num_actions, num_states))
    r = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    return TabularMDP(P, r, gamma, reward_noise)


def check_q(mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != mdp.shape:
        raise DimensionError(f"Q-table shape {q.shape} does not match MDP shape {mdp.shape}")
    return q


def check_policy(mdp: TabularMDP, pi) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (mdp.num_states,):
        raise DimensionError(f"policy must have length {mdp.num_states}, got shape {pi.shape}")
    if not np.issubdtype(pi.dtype, np.integer):
        if not np.all(pi == np.round(pi)):
            raise ValidationError("policy entries must be integers")
        pi = pi.astype(np.int64)
    if np.any(pi < 0) or np.any(pi >= mdp.num_actions):
        raise ValidationError(f"policy entries must lie in [0, {mdp.num_actions})")
    return pi.astype(np.int64)


def bellman_optimality(mdp: TabularMDP, q: np.ndarray) -> np.ndarray:
    """``T(Q)(x, u) = r(x, u) + gamma * sum_x' P_u(x'|x) max_u' Q(x', u')``."""
    q = check_q(mdp, q)
    return mdp.rewards + mdp.gamma * (mdp.kernel @ q.max(axis=1))


def policy_values(q: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """``Q(x, pi(x))`` for every state."""
    return q[np.arange(q.shape[0]), pi]


def apply_policy_transition(mdp: TabularMDP, pi, q: np.ndarray) -> np.ndarray:
    """``(P^pi Q)(x, u) = sum_x' P_u(x'|x) Q(x', pi(x'))``."""
    q = check_q(mdp, q)
    pi = check_policy(mdp, pi)
    return mdp.kernel @ policy_values(q, pi)


def policy_transition_matrix(mdp: TabularMDP, pi) -> np.ndarray:
    """Dense ``D x D`` matrix of ``P^pi`` acting on flattened Q-tables."""
    pi = check_policy(mdp, pi)
    X, U = mdp.shape
    M = np.zeros((X * U, X * U))
    M[:, np.arange(X) * U + pi] = mdp.kernel.reshape(X * U, X)
    return M


def resolvent_matrix(mdp: TabularMDP, pi) -> np.ndarray:
    """``(I - gamma P^pi)^{-1}`` as a dense ``D x D`` matrix."""
    A = np.eye(mdp.dim) - mdp.gamma * policy_transition_matrix(mdp, pi)
    return np.linalg.solve(A, np.eye(mdp.dim))


def resolvent_apply(mdp: TabularMDP, pi, m: np.ndarray) -> np.ndarray:
    """Solve ``(I - gamma P^pi) u = m`` for the Q-table ``u``."""
    m = check_q(mdp, m)
    A = np.eye(mdp.dim) - mdp.gamma * policy_transition_matrix(mdp, pi)
    return np.linalg.solve(A, m.ravel()).reshape(mdp.shape)


def greedy_policy(q: np.ndarray, tie_tol: float = 0.0) -> np.ndarray:
    """Greedy policy; ties (within ``tie_tol``) go to the smallest action index."""
    q = np.asarray(q, dtype=float)
    if tie_tol < 0:
        raise ValidationError("tie_tol must be nonnegative")
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tol, axis=1).astype(np.int64)


def linf_distance(q1: np.ndarray, q2: np.ndarray) -> float:
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    if q1.shape != q2.shape:
        raise DimensionError(f"shape mismatch {q1.shape} vs {q2.shape}")
    return float(np.max(np.abs(q1 - q2)))


def span_seminorm(q: np.ndarray) -> float:
    q = np.asarray(q, dtype=float)
    return float(q.max() - q.min())


def evaluate_policy(mdp: TabularMDP, pi) -> np.ndarray:
    """Q-function of a fixed policy: ``(I - gamma P^pi)^{-1} r``."""
    return resolvent_apply(mdp, pi, mdp.rewards)


def solve_optimal_q(mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Optimal Q-function by policy iteration with exact policy evaluation.

    An action is only switched when it improves on the incumbent by more than
    a round-off margin, so near-ties cannot make the iteration cycle. Value
    iteration polishes the result until the Bellman residual is below ``tol``.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    X = mdp.num_states
    rows = np.arange(X)
    pi = greedy_policy(mdp.rewards)
    seen = set()
    q = None
    for _ in range(max_iter):
        q = evaluate_policy(mdp, pi)
        key = pi.tobytes()
        assert key not in seen, "policy iteration revisited a policy"
        seen.add(key)
        target = mdp.rewards + mdp.gamma * (mdp.kernel @ q.max(axis=1))
        margin = 1e-12 * max(1.0, float(np.abs(q).max()))
        candidate = greedy_policy(q)
        improves = q[rows, candidate] > q[rows, pi] + margin
        if not improves.any():
            break
        pi = np.where(improves, candidate, pi)
    else:
        raise ConvergenceError("policy iteration did not stabilise", linf_distance(q, target))

    residual = linf_distance(q, bellman_optimality(mdp, q))
    for _ in range(max_iter):
        if residual <= tol:
            return q
        q = bellman_optimality(mdp, q)
        residual = linf_distance(q, bellman_optimality(mdp, q))
    raise ConvergenceError("optimal Q-function did not reach tolerance", residual)
