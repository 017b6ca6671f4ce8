"""Instance-dependent complexity of estimating the optimal Q-function.

For an optimal policy ``pi`` with resolvent ``U = (I - gamma P^pi)^{-1}`` the
noise of one empirical Bellman operator at ``Q*``, pushed through ``U``, has
elementwise variance

    nu^2 = gamma^2 * rho^2 + sigma^2,
    rho^2(z) = sum_z' U(z, z')^2 phi^2(z'),    sigma^2(z) = sigma_r^2 sum_z' U(z, z')^2,

where ``phi^2(z)`` is the variance of ``Q*(x', pi(x'))`` under ``x' ~ P(.|z)``.
Everything here is computed in closed form from dense resolvents.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import EnumerationOverflow, ValidationError
from .mdp import (
    TabularMDP,
    apply_policy_transition,
    check_policy,
    check_q,
    greedy_policy,
    policy_values,
    resolvent_matrix,
    solve_optimal_q,
    span_seminorm,
)

log = logging.getLogger(__name__)

OPT_TOL = 1e-9
POLICY_CAP = 4096


def phi_squared(mdp: TabularMDP, pi, qstar: np.ndarray) -> np.ndarray:
    """Next-state variance of ``Q*(x', pi(x'))`` for every state-action pair."""
    qstar = check_q(mdp, qstar)
    pi = check_policy(mdp, pi)
    v = policy_values(qstar, pi)
    mean = mdp.kernel @ v
    return np.einsum("xuy,xuy->xu", mdp.kernel, (v[None, None, :] - mean[:, :, None]) ** 2)


def _resolvent_sq(mdp: TabularMDP, pi) -> np.ndarray:
    return resolvent_matrix(mdp, pi) ** 2


def rho_matrix(mdp: TabularMDP, pi, qstar: np.ndarray | None = None) -> np.ndarray:
    """Transition-noise standard deviation ``rho`` as a Q-table."""
    if qstar is None:
        qstar = solve_optimal_q(mdp)
    phi2 = phi_squared(mdp, pi, qstar).ravel()
    rho2 = _resolvent_sq(mdp, pi) @ phi2
    return np.sqrt(np.maximum(rho2, 0.0)).reshape(mdp.shape)


def sigma_matrix(mdp: TabularMDP, pi) -> np.ndarray:
    """Reward-noise standard deviation ``sigma`` as a Q-table."""
    sigma2 = mdp.reward_noise**2 * _resolvent_sq(mdp, pi).sum(axis=1)
    return np.sqrt(sigma2).reshape(mdp.shape)


def nu_matrix(mdp: TabularMDP, pi, qstar: np.ndarray | None = None) -> np.ndarray:
    rho = rho_matrix(mdp, pi, qstar)
    sigma = sigma_matrix(mdp, pi)
    return np.sqrt(mdp.gamma**2 * rho**2 + sigma**2)


def optimal_actions(qstar: np.ndarray, opt_tol: float = OPT_TOL) -> list[np.ndarray]:
    """Per state, the actions within ``opt_tol`` of the best one."""
    qstar = np.asarray(qstar, dtype=float)
    best = qstar.max(axis=1, keepdims=True)
    return [np.flatnonzero(row) for row in qstar >= best - opt_tol]


def optimal_policy_set(
    mdp: TabularMDP,
    opt_tol: float = OPT_TOL,
    cap: int = POLICY_CAP,
    qstar: np.ndarray | None = None,
) -> list[np.ndarray]:
    """All optimal deterministic policies, in lexicographic order.

    Raises :class:`EnumerationOverflow` rather than truncating when the set is
    larger than ``cap``.
    """
    if opt_tol < 0:
        raise ValidationError("opt_tol must be nonnegative")
    if qstar is None:
        qstar = solve_optimal_q(mdp)
    per_state = optimal_actions(qstar, opt_tol)
    size = math.prod(len(a) for a in per_state)
    if size > cap:
        raise EnumerationOverflow(size, cap)
    return [np.array(p, dtype=np.int64) for p in itertools.product(*per_state)]


def _argmax_policy(policies, score):
    best, best_pi = -math.inf, None
    for pi in policies:
        s = score(pi)
        # strict comparison keeps the lexicographically smallest maximiser
        if s > best:
            best, best_pi = s, pi
    return best, best_pi


def max_nu_over_optimal(
    mdp: TabularMDP,
    opt_tol: float = OPT_TOL,
    cap: int = POLICY_CAP,
    qstar: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """``max_{pi in Pi*} ||nu(pi)||_inf`` and a maximising policy."""
    if qstar is None:
        qstar = solve_optimal_q(mdp)
    policies = optimal_policy_set(mdp, opt_tol, cap, qstar)
    return _argmax_policy(policies, lambda pi: float(nu_matrix(mdp, pi, qstar).max()))


def action_gaps(qstar: np.ndarray) -> np.ndarray:
    """``max_u' Q*(x, u') - Q*(x, u)`` for every pair."""
    qstar = np.asarray(qstar, dtype=float)
    return qstar.max(axis=1, keepdims=True) - qstar


def optimality_gap(
    mdp: TabularMDP, opt_tol: float = OPT_TOL, qstar: np.ndarray | None = None
) -> float:
    """``min over non-optimal pi of ||Q* - (r + gamma P^pi Q*)||_inf``.

    Since ``Q* - r - gamma P^pi Q* = gamma P^{pi} g`` with ``g(x) >= 0`` the action
    gap of ``pi`` at ``x``, the minimum is attained by deviating from an optimal
    policy at a single state ``x0``:

        gamma * min_{x0, u suboptimal} gap(x0, u) * max_z P(x0 | z).

    Returns ``inf`` when every policy is optimal.
    """
    if qstar is None:
        qstar = solve_optimal_q(mdp)
    gaps = action_gaps(qstar)
    suboptimal = gaps > opt_tol
    if not suboptimal.any():
        log.warning("every action is optimal in every state; optimality gap is infinite")
        return math.inf
    reach = mdp.kernel.reshape(mdp.dim, mdp.num_states).max(axis=0)
    per_pair = np.where(suboptimal, gaps * reach[:, None], np.inf)
    return float(mdp.gamma * per_pair.min())


def bellman_gap_of_policy(mdp: TabularMDP, pi, qstar: np.ndarray) -> float:
    """``||Q* - (r + gamma P^pi Q*)||_inf`` evaluated directly."""
    target = mdp.rewards + mdp.gamma * apply_policy_transition(mdp, pi, qstar)
    return float(np.abs(qstar - target).max())


def min_sample_size(
    mdp: TabularMDP,
    opt_tol: float = OPT_TOL,
    cap: int = POLICY_CAP,
    qstar: np.ndarray | None = None,
) -> float:
    """Smallest sample size at which the lower-bound construction is valid.

    ``max{2 gamma^2 / (1-gamma)^2, 2 span(Q*)^2 / ((1-gamma)^2 ||rho^2(pi*)||_inf)}``
    with ``pi*`` the maximiser of ``||nu||_inf``. Returns ``inf`` when ``rho``
    vanishes (deterministic transitions).
    """
    if qstar is None:
        qstar = solve_optimal_q(mdp)
    g = mdp.gamma
    _, pi_star = max_nu_over_optimal(mdp, opt_tol, cap, qstar)
    rho_sq_max = float((rho_matrix(mdp, pi_star, qstar) ** 2).max())
    first = 2 * g**2 / (1 - g) ** 2
    if rho_sq_max <= 0.0:
        log.warning("rho vanishes identically; minimum sample size is infinite")
        return math.inf
    second = 2 * span_seminorm(qstar) ** 2 / ((1 - g) ** 2 * rho_sq_max)
    return max(first, second)


def lipschitz_check(
    mdp: TabularMDP,
    num_probes: int = 100,
    radius: float = 1.0,
    seed: int = 0,
    qstar: np.ndarray | None = None,
) -> float:
    """Empirical lower estimate of the Lipschitz constant ``L`` in

    ``||(P^pi - P^{pi*})(theta - Q*)||_inf <= L ||theta - Q*||_inf^2``

    with ``pi`` greedy for ``theta``, from random probes in an ``ell_inf`` ball.
    """
    if num_probes < 1:
        raise ValidationError("num_probes must be at least 1")
    if qstar is None:
        qstar = solve_optimal_q(mdp)
    rng = np.random.default_rng(seed)
    pi_star = greedy_policy(qstar)
    best = 0.0
    for _ in range(num_probes):
        delta = rng.uniform(-1.0, 1.0, size=mdp.shape)
        delta *= radius * rng.uniform() / np.abs(delta).max()
        size = float(np.abs(delta).max())
        if size == 0.0:
            continue
        theta = qstar + delta
        pi = greedy_policy(theta)
        diff = apply_policy_transition(mdp, pi, delta) - apply_policy_transition(mdp, pi_star, delta)
        best = max(best, float(np.abs(diff).max()) / size**2)
    return best


@dataclass(frozen=True)
class SampleSizeCheck:
    setting: str
    lhs: float  # n / ln(n)^2
    rhs: float
    unique_optimum: bool

    @property
    def satisfied(self) -> bool:
        ok = self.lhs >= self.rhs
        return ok and self.unique_optimum if self.setting == "UNQ" else ok


def sample_size_condition(
    mdp: TabularMDP,
    n: int,
    delta: float,
    beta: float,
    setting: str = "UNQ",
    c2: float = 1.0,
    lipschitz: float | None = None,
    qstar: np.ndarray | None = None,
) -> SampleSizeCheck:
    """Budget condition under which VR-QL attains the instance-dependent rate.

    ``UNQ`` (unique optimal policy) needs
    ``n / ln(n)^2 >= c2 ln(D/delta) B^2 / (1-gamma)^3 * max{1, 1 / (gap^2 (1-gamma)^beta)}``;
    ``LIP`` (Lipschitz greedy policies, constant ``lipschitz``) needs
    ``n / ln(n)^2 >= c2 ln(D/delta) B^2 / (1-gamma)^(3+beta) * min{L^2 / (1-gamma)^2, 1 / gap^2}``,
    where ``B = 1 + ||r||_inf + sigma_r sqrt(1-gamma)``. Neither ``c2`` nor
    ``beta`` has a prescribed value; both are left to the caller.
    """
    if setting not in ("UNQ", "LIP"):
        raise ValidationError("setting must be 'UNQ' or 'LIP'")
    if n < 2 or beta <= 0 or c2 <= 0 or not 0 < delta < 1:
        raise ValidationError("need n >= 2, beta > 0, c2 > 0 and delta in (0, 1)")
    if qstar is None:
        qstar = solve_optimal_q(mdp)
    g = mdp.gamma
    gap = optimality_gap(mdp, qstar=qstar)
    inv_gap_sq = 0.0 if math.isinf(gap) else 1.0 / gap**2
    scale = 1 + float(np.abs(mdp.rewards).max()) + mdp.reward_noise * math.sqrt(1 - g)
    base = c2 * math.log(mdp.dim / delta) * scale**2
    if setting == "UNQ":
        rhs = base / (1 - g) ** 3 * max(1.0, inv_gap_sq / (1 - g) ** beta)
    else:
        if lipschitz is None:
            lipschitz = lipschitz_check(mdp, qstar=qstar)
        rhs = base / (1 - g) ** (3 + beta) * min(lipschitz**2 / (1 - g) ** 2, inv_gap_sq)
    unique = math.prod(len(a) for a in optimal_actions(qstar)) == 1
    return SampleSizeCheck(setting, n / math.log(n) ** 2, rhs, unique)


@dataclass
class ComplexityReport:
    nu: np.ndarray
    rho: np.ndarray
    sigma_term: np.ndarray
    phi_sq: np.ndarray
    max_nu_inf: float
    argmax_policy: np.ndarray
    gap: float
    n_zero: float
    qstar: np.ndarray

    def to_dict(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else None

        return {
            "nu": self.nu.tolist(),
            "rho": self.rho.tolist(),
            "sigma": self.sigma_term.tolist(),
            "phi_sq": self.phi_sq.tolist(),
            "max_nu_inf": self.max_nu_inf,
            "argmax_policy": self.argmax_policy.tolist(),
            "gap": num(self.gap),
            "gap_infinite": not math.isfinite(self.gap),
            "n_zero": num(self.n_zero),
            "n_zero_infinite": not math.isfinite(self.n_zero),
            "qstar": self.qstar.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "action", "nu", "rho", "sigma", "phi_sq"])
        X, U = self.nu.shape
        for x in range(X):
            for u in range(U):
                w.writerow(
                    [x, u]
                    + [repr(float(a[x, u])) for a in (self.nu, self.rho, self.sigma_term, self.phi_sq)]
                )
        return buf.getvalue()


def complexity_report(
    mdp: TabularMDP, opt_tol: float = OPT_TOL, cap: int = POLICY_CAP
) -> ComplexityReport:
    qstar = solve_optimal_q(mdp)
    max_nu, pi = max_nu_over_optimal(mdp, opt_tol, cap, qstar)
    return ComplexityReport(
        nu=nu_matrix(mdp, pi, qstar),
        rho=rho_matrix(mdp, pi, qstar),
        sigma_term=sigma_matrix(mdp, pi),
        phi_sq=phi_squared(mdp, pi, qstar),
        max_nu_inf=max_nu,
        argmax_policy=pi,
        gap=optimality_gap(mdp, opt_tol, qstar),
        n_zero=min_sample_size(mdp, opt_tol, cap, qstar),
        qstar=qstar,
    )
