"""Hardest local alternatives and exact Hellinger distances.

Two perturbations of an instance are built, each tuned to a sample size ``n``:

* a transition perturbation that tilts ``P(.|z)`` along the centred optimal
  values, weighted by one row of the resolvent, and
* a reward perturbation that shifts ``r`` along one resolvent row.

Both stay within Hellinger distance ``1/(2 sqrt(n))`` of the original while
moving ``Q*`` by a constant multiple of ``max ||gamma rho||_inf / sqrt(n)``
(respectively ``max ||sigma||_inf / sqrt(n)``). The functions here build the
alternatives and check those properties numerically.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .complexity import (
    OPT_TOL,
    POLICY_CAP,
    max_nu_over_optimal,
    optimal_policy_set,
    rho_matrix,
    sigma_matrix,
)
from .errors import DegenerateInstanceError, PreconditionError, ValidationError
from .mdp import TabularMDP, policy_values, resolvent_matrix, solve_optimal_q, span_seminorm

log = logging.getLogger(__name__)

KERNEL_TOL = 1e-12
NONNEG_TOL = 1e-12
TRANSITION_CONSTANT = 0.25
REWARD_CONSTANT = 1 / math.sqrt(2)
DEFAULT_MINIMAX_CONSTANT = 1 / 8
# the reward gap inequality is attained with equality whenever the maximising
# policy stays optimal, so the comparison needs room for solver round-off
GAP_RTOL = 1e-9


# ---------------------------------------------------------------- Hellinger


@dataclass(frozen=True)
class HellingerBreakdown:
    """Squared Hellinger distances per pair and for the whole observation."""

    transition_sq: np.ndarray  # (X, U)
    reward_sq: np.ndarray  # (X, U)
    total_sq: float
    singular: bool  # noiseless rewards that differ somewhere

    @property
    def distance(self) -> float:
        return math.sqrt(self.total_sq)


def _transition_hellinger_sq(ka: np.ndarray, kb: np.ndarray) -> np.ndarray:
    # 0.5 * sum (sqrt a - sqrt b)^2 is 1 - sum sqrt(ab) without the cancellation
    return 0.5 * ((np.sqrt(ka) - np.sqrt(kb)) ** 2).sum(axis=-1)


def hellinger_breakdown(a: TabularMDP, b: TabularMDP) -> HellingerBreakdown:
    if a.shape != b.shape:
        raise ValidationError(f"instances differ in size: {a.shape} vs {b.shape}")
    if a.reward_noise != b.reward_noise:
        raise ValidationError("instances must share the reward noise level")
    trans = _transition_hellinger_sq(a.kernel, b.kernel)
    dr = a.rewards - b.rewards
    singular = False
    if a.reward_noise > 0:
        rew = -np.expm1(-(dr**2) / (8 * a.reward_noise**2))
    else:
        rew = (dr != 0).astype(float)
        singular = bool(rew.any())
        if singular:
            log.warning("noiseless rewards differ; observations are mutually singular")
    per_pair = np.stack([trans, rew]).ravel()
    # 1 - prod(1 - h^2), accurate when every h^2 is tiny
    with np.errstate(divide="ignore"):
        total = float(-np.expm1(np.log1p(-np.minimum(per_pair, 1.0)).sum()))
    return HellingerBreakdown(trans, rew, min(max(total, 0.0), 1.0), singular)


def hellinger_mdp(a: TabularMDP, b: TabularMDP) -> float:
    """Hellinger distance between single draws from the two generative models."""
    return hellinger_breakdown(a, b).distance


# ---------------------------------------------------------------- helpers


def required_sample_size(
    mdp: TabularMDP, qstar: np.ndarray, opt_tol: float = OPT_TOL, cap: int = POLICY_CAP
) -> float:
    """Smallest ``n`` for which the transition perturbation is a valid kernel.

    Same quantity as :func:`vrql.complexity.min_sample_size` except that a
    vanishing ``rho`` only drops the term that depends on it.
    """
    g = mdp.gamma
    first = 2 * g**2 / (1 - g) ** 2
    _, pi = max_nu_over_optimal(mdp, opt_tol, cap, qstar)
    rho_sq = float((rho_matrix(mdp, pi, qstar) ** 2).max())
    if rho_sq <= 0.0:
        return first
    return max(first, 2 * span_seminorm(qstar) ** 2 / ((1 - g) ** 2 * rho_sq))


def _check_n(n) -> int:
    if int(n) != n or n < 1:
        raise ValidationError(f"sample size must be a positive integer, got {n}")
    return int(n)


def _argmax_over_policies(mdp, qstar, table_fn, opt_tol, cap):
    """Policy with the largest entry of ``table_fn(pi)`` (first wins on ties)."""
    best, best_pi, best_table = -math.inf, None, None
    for pi in optimal_policy_set(mdp, opt_tol, cap, qstar):
        table = table_fn(pi)
        if table.max() > best:
            best, best_pi, best_table = float(table.max()), pi, table
    return best_pi, best_table


# ---------------------------------------------------------------- perturbations


@dataclass
class PerturbationReport:
    kind: str  # "transitions" or "rewards"
    alt_mdp: TabularMDP
    hellinger: float
    hellinger_bound: float  # chi-square (transitions) or Gaussian KL (rewards) upper bound
    opnorm_gap: float
    frobenius_gap: float
    q_gap_scaled: float
    target_functional: float
    constant: float
    n: int
    pair: int  # flattened index of the pair where the functional peaks
    policy: np.ndarray = field(repr=False)

    @property
    def hellinger_ok(self) -> bool:
        return self.hellinger <= 1 / (2 * math.sqrt(self.n))

    @property
    def gap_ok(self) -> bool:
        target = self.constant * self.target_functional
        return self.q_gap_scaled >= target * (1 - GAP_RTOL)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "pair": self.pair,
            "policy": self.policy.tolist(),
            "hellinger": self.hellinger,
            "hellinger_bound": self.hellinger_bound,
            "opnorm_gap": self.opnorm_gap,
            "frobenius_gap": self.frobenius_gap,
            "q_gap_scaled": self.q_gap_scaled,
            "target_functional": self.target_functional,
            "constant": self.constant,
            "hellinger_ok": self.hellinger_ok,
            "gap_ok": self.gap_ok,
        }


@dataclass
class _TransitionConstruction:
    kernel: np.ndarray  # raw perturbed (X, U, X'), possibly invalid
    delta: np.ndarray  # kernel - P
    policy: np.ndarray
    pair: int
    rho_peak: float
    resolvent: np.ndarray
    qstar: np.ndarray


def _build_transition_perturbation(mdp, n, qstar, opt_tol, cap) -> _TransitionConstruction:
    pi, rho = _argmax_over_policies(
        mdp, qstar, lambda p: rho_matrix(mdp, p, qstar), opt_tol, cap
    )
    rho_peak = float(rho.max())
    if rho_peak <= 0.0:
        raise DegenerateInstanceError("rho vanishes identically; no transition perturbation exists")
    pair = int(np.argmax(rho))
    U = resolvent_matrix(mdp, pi)
    weight = U[pair].reshape(mdp.shape)
    v = policy_values(qstar, pi)
    centred = v[None, None, :] - (mdp.kernel @ v)[:, :, None]
    scale = 1.0 / (rho_peak * math.sqrt(2 * n))
    delta = scale * mdp.kernel * weight[:, :, None] * centred
    return _TransitionConstruction(mdp.kernel + delta, delta, pi, pair, rho_peak, U, qstar)


def _kernel_mdp(mdp: TabularMDP, kernel: np.ndarray) -> TabularMDP:
    return mdp.replace(transitions=np.clip(kernel, 0.0, None).transpose(1, 0, 2))


def _chi_square_half(mdp: TabularMDP, delta: np.ndarray) -> float:
    P = mdp.kernel
    mask = P > 0
    return 0.5 * float((delta[mask] ** 2 / P[mask]).sum())


def perturb_transitions(
    mdp: TabularMDP,
    n: int,
    enforce_min_n: bool = True,
    opt_tol: float = OPT_TOL,
    cap: int = POLICY_CAP,
) -> PerturbationReport:
    """Alternative instance with a perturbed kernel, tuned to ``n`` samples."""
    n = _check_n(n)
    qstar = solve_optimal_q(mdp)
    c = _build_transition_perturbation(mdp, n, qstar, opt_tol, cap)
    n_min = required_sample_size(mdp, qstar, opt_tol, cap)
    if enforce_min_n and n < n_min:
        raise PreconditionError(f"n={n} is below the minimum sample size {n_min:.6g}")
    if c.kernel.min() < -NONNEG_TOL:
        raise PreconditionError(
            f"perturbed kernel has negative entry {c.kernel.min():.3e}; n={n} is too small"
        )
    alt = _kernel_mdp(mdp, c.kernel)
    q_alt = solve_optimal_q(alt)
    dP = np.abs(c.delta).sum(axis=2)
    return PerturbationReport(
        kind="transitions",
        alt_mdp=alt,
        hellinger=hellinger_mdp(mdp, alt),
        hellinger_bound=math.sqrt(_chi_square_half(mdp, c.delta)),
        opnorm_gap=float(dP.max()),
        frobenius_gap=float(np.sqrt((c.delta**2).sum())),
        q_gap_scaled=math.sqrt(n) * float(np.abs(q_alt - qstar).max()),
        target_functional=mdp.gamma * c.rho_peak,
        constant=TRANSITION_CONSTANT,
        n=n,
        pair=c.pair,
        policy=c.policy,
    )


def perturb_rewards(
    mdp: TabularMDP, n: int, opt_tol: float = OPT_TOL, cap: int = POLICY_CAP
) -> PerturbationReport:
    """Alternative instance with shifted mean rewards, tuned to ``n`` samples."""
    n = _check_n(n)
    if mdp.reward_noise <= 0:
        raise DegenerateInstanceError("reward noise is zero; no reward perturbation exists")
    qstar = solve_optimal_q(mdp)
    pi, sigma = _argmax_over_policies(
        mdp, qstar, lambda p: sigma_matrix(mdp, p), opt_tol, cap
    )
    pair = int(np.argmax(sigma))
    sigma_peak = float(sigma.max())
    U = resolvent_matrix(mdp, pi)
    shift = U[pair].reshape(mdp.shape) * mdp.reward_noise**2 / (sigma_peak * math.sqrt(2 * n))
    alt = mdp.replace(rewards=mdp.rewards + shift)
    q_alt = solve_optimal_q(alt)
    return PerturbationReport(
        kind="rewards",
        alt_mdp=alt,
        hellinger=hellinger_mdp(mdp, alt),
        hellinger_bound=math.sqrt(float((shift**2).sum()) / (2 * mdp.reward_noise**2)),
        opnorm_gap=0.0,
        frobenius_gap=0.0,
        q_gap_scaled=math.sqrt(n) * float(np.abs(q_alt - qstar).max()),
        target_functional=sigma_peak,
        constant=REWARD_CONSTANT,
        n=n,
        pair=pair,
        policy=pi,
    )


# ---------------------------------------------------------------- verification


@dataclass(frozen=True)
class Clause:
    name: str
    measured: float
    threshold: float
    relation: str  # "<=" or ">="
    passed: bool


def _clause(
    name: str, measured: float, relation: str, threshold: float, rtol: float = 0.0
) -> Clause:
    slack = rtol * abs(threshold)
    if relation == "<=":
        ok = measured <= threshold + slack
    else:
        ok = measured >= threshold - slack
    return Clause(name, float(measured), float(threshold), relation, bool(ok))


def _skipped(name: str, relation: str, threshold: float) -> Clause:
    return Clause(name, math.nan, float(threshold), relation, False)


@dataclass
class VerificationReport:
    n: int
    min_sample_size: float
    clauses: list[Clause]
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def clause(self, name: str) -> Clause:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        def clean(c: Clause) -> dict:
            d = asdict(c)
            if not math.isfinite(d["measured"]):
                d["measured"] = None
            return d

        return {
            "n": self.n,
            "min_sample_size": self.min_sample_size,
            "passed": self.passed,
            "clauses": [clean(c) for c in self.clauses],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "measured", "threshold", "pass"])
        for c in self.clauses:
            w.writerow([c.name, repr(c.measured), repr(c.threshold), str(c.passed).lower()])
        return buf.getvalue()

    def merged(self, other: "VerificationReport") -> "VerificationReport":
        return VerificationReport(
            self.n, self.min_sample_size, self.clauses + other.clauses, self.notes + other.notes
        )


def verify_lemma3(
    mdp: TabularMDP,
    n: int,
    enforce: bool = True,
    opt_tol: float = OPT_TOL,
    cap: int = POLICY_CAP,
) -> VerificationReport:
    """Check the three structural properties of the transition perturbation.

    (a) the perturbed kernel is a valid transition kernel;
    (b) Hellinger distance at most ``1/(2 sqrt n)``, and the perturbation of
        ``P^pi`` has squared Frobenius norm and ell_inf operator norm at most
        ``1/sqrt(2n)``;
    (c) ``(I - gamma P^pi)^{-1} (Pbar^pi - P^pi) Q*`` is entrywise nonnegative.

    With ``enforce=False`` sample sizes below the minimum are allowed and the
    clauses are reported rather than asserted.
    """
    n = _check_n(n)
    qstar = solve_optimal_q(mdp)
    n_min = required_sample_size(mdp, qstar, opt_tol, cap)
    if enforce and n < n_min:
        raise PreconditionError(f"n={n} is below the minimum sample size {n_min:.6g}")
    c = _build_transition_perturbation(mdp, n, qstar, opt_tol, cap)
    limit = 1 / math.sqrt(2 * n)
    row_err = float(np.abs(c.kernel.sum(axis=2) - 1.0).max())
    clauses = [
        _clause("a_rows_sum_to_one", row_err, "<=", KERNEL_TOL),
        _clause("a_entries_nonnegative", float(c.kernel.min()), ">=", -NONNEG_TOL),
    ]
    notes = []
    if not all(cl.passed for cl in clauses):
        notes.append("perturbed kernel is invalid; remaining clauses not evaluated")
        clauses += [
            _skipped("b_hellinger", "<=", 1 / (2 * math.sqrt(n))),
            _skipped("b_frobenius_gap", "<=", limit),
            _skipped("b_opnorm_gap", "<=", limit),
        ]
    else:
        alt = _kernel_mdp(mdp, c.kernel)
        clauses += [
            _clause("b_hellinger", hellinger_mdp(mdp, alt), "<=", 1 / (2 * math.sqrt(n))),
            _clause("b_frobenius_gap", float(np.sqrt((c.delta**2).sum())), "<=", limit),
            _clause("b_opnorm_gap", float(np.abs(c.delta).sum(axis=2).max()), "<=", limit),
        ]
    shift = c.delta @ policy_values(qstar, c.policy)
    product = c.resolvent @ shift.ravel()
    clauses.append(_clause("c_resolvent_product_nonnegative", float(product.min()), ">=", -NONNEG_TOL))
    if n < n_min:
        notes.append(f"n={n} is below the minimum sample size {n_min:.6g}")
    return VerificationReport(n, n_min, clauses, notes)


def verify_separation(
    mdp: TabularMDP, n: int, enforce: bool = True, opt_tol: float = OPT_TOL, cap: int = POLICY_CAP
) -> VerificationReport:
    """Hellinger budget and ``Q*`` separation of each applicable alternative.

    The transition alternative is skipped when ``rho`` vanishes and the reward
    alternative when rewards are noiseless; the skip is recorded in ``notes``.
    """
    n = _check_n(n)
    qstar = solve_optimal_q(mdp)
    n_min = required_sample_size(mdp, qstar, opt_tol, cap)
    clauses, notes = [], []
    half = 1 / (2 * math.sqrt(n))
    try:
        t = perturb_transitions(mdp, n, enforce, opt_tol, cap)
    except DegenerateInstanceError as exc:
        notes.append(f"transitions: {exc}")
    else:
        clauses += [
            _clause("transitions_hellinger", t.hellinger, "<=", half),
            _clause(
                "transitions_q_gap", t.q_gap_scaled, ">=", t.constant * t.target_functional, GAP_RTOL
            ),
        ]
    try:
        r = perturb_rewards(mdp, n, opt_tol, cap)
    except DegenerateInstanceError as exc:
        notes.append(f"rewards: {exc}")
    else:
        clauses += [
            _clause("rewards_hellinger", r.hellinger, "<=", half),
            _clause(
                "rewards_q_gap", r.q_gap_scaled, ">=", r.constant * r.target_functional, GAP_RTOL
            ),
        ]
    return VerificationReport(n, n_min, clauses, notes)


def local_minimax_bound(
    mdp: TabularMDP,
    n: int,
    c: float = DEFAULT_MINIMAX_CONSTANT,
    opt_tol: float = OPT_TOL,
    cap: int = POLICY_CAP,
) -> float:
    """``c * max_{pi optimal} ||nu(pi)||_inf``, the sqrt(n)-scaled local risk floor.

    ``c`` is a plotting convention rather than a certified constant.
    """
    n = _check_n(n)
    if c <= 0:
        raise ValidationError("c must be positive")
    qstar = solve_optimal_q(mdp)
    n_min = required_sample_size(mdp, qstar, opt_tol, cap)
    if n < n_min:
        raise PreconditionError(f"n={n} is below the minimum sample size {n_min:.6g}")
    nu, _ = max_nu_over_optimal(mdp, opt_tol, cap, qstar)
    return c * nu
