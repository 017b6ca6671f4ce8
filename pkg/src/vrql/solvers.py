"""Standard and variance-reduced Q-learning in the generative model.

Variance-reduced Q-learning (VR-QL) runs ``M`` epochs. Epoch ``m`` averages
``N_m`` fresh empirical Bellman operators at the anchor ``Qbar_m`` and then takes
``K`` re-centred steps

    theta <- (1 - a_k) theta + a_k (T_k(theta) - T_k(Qbar_m) + Tbar(Qbar_m)),
    a_k = 1 / (1 + (1 - gamma) k),

whose output becomes the next anchor. Draws are consumed sequentially from one
sampler, so the sample partition across epochs is implicit in the draw count.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BudgetError, ConvergenceError, PreconditionError, ScheduleError, ValidationError
from .mdp import TabularMDP, bellman_optimality, check_q, linf_distance
from .sampling import SeededSampler, TransitionSample, empirical_bellman, monte_carlo_bellman

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepSize:
    """``rescaled``: ``1 / (1 + (1 - gamma) k)``; ``poly``: ``k^-omega``."""

    kind: str = "rescaled"
    omega: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rescaled", "poly"):
            raise ValidationError(f"unknown stepsize rule {self.kind!r}")
        if self.kind == "poly" and not 0.0 < self.omega <= 1.0:
            raise ValidationError("polynomial stepsize exponent must lie in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "StepSize":
        """``"rescaled"`` or ``"poly:<omega>"``."""
        if text == "rescaled":
            return cls("rescaled")
        if text.startswith("poly:"):
            try:
                return cls("poly", float(text[5:]))
            except ValueError:
                pass
        raise ValidationError(f"stepsize must be 'rescaled' or 'poly:<omega>', got {text!r}")

    def values(self, start: int, count: int, gamma: float) -> np.ndarray:
        k = np.arange(start, start + count, dtype=float)
        if self.kind == "rescaled":
            return 1.0 / (1.0 + (1.0 - gamma) * k)
        return k ** (-self.omega)

    def __str__(self):
        return "rescaled" if self.kind == "rescaled" else f"poly:{self.omega:g}"


@dataclass
class RunRecord:
    """Trace of one run; errors are only tracked when ``Q*`` was supplied."""

    seed: int
    budget: int | None
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    epochs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    samples_used: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    epoch_outputs: list = field(default_factory=list)
    samples_consumed: int = 0

    def extend(self, epoch: int, errors: np.ndarray, samples_used: np.ndarray) -> None:
        self.errors = np.concatenate([self.errors, errors])
        self.epochs = np.concatenate([self.epochs, np.full(len(errors), epoch, dtype=np.int64)])
        self.samples_used = np.concatenate([self.samples_used, samples_used])

    @property
    def final_error(self) -> float | None:
        return float(self.errors[-1]) if len(self.errors) else None

    def trace_rows(self, every: int = 1):
        """``(epoch, iter, samples_used, err_linf)`` tuples; the last iteration
        of each epoch is always kept."""
        n = len(self.errors)
        keep = np.zeros(n, dtype=bool)
        keep[::every] = True
        if n:
            keep[np.flatnonzero(np.diff(self.epochs))] = True
            keep[-1] = True
        for i in np.flatnonzero(keep):
            yield int(self.epochs[i]), int(i + 1), int(self.samples_used[i]), float(self.errors[i])

    def to_csv(self, every: int = 1) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "iter", "samples_used", "err_linf"])
        for epoch, it, used, err in self.trace_rows(every):
            w.writerow([epoch, it, used, repr(err)])
        return buf.getvalue()


def _track(qstar, mdp):
    if qstar is None:
        return np.zeros(mdp.shape), False
    return check_q(mdp, qstar), True


def _require(sampler: SeededSampler, n: int) -> None:
    if sampler.remaining is not None and sampler.remaining < n:
        raise BudgetError(f"need {n} draws but only {sampler.remaining} remain in the budget")


def standard_q_learning(
    sampler: SeededSampler,
    n: int,
    q0: np.ndarray | None = None,
    stepsize: StepSize = StepSize(),
    qstar: np.ndarray | None = None,
) -> tuple[np.ndarray, RunRecord]:
    """``n`` synchronous Q-learning steps ``Q <- (1 - a_k) Q + a_k T_k(Q)``."""
    if n < 1:
        raise ValidationError("number of steps must be at least 1")
    mdp = sampler.mdp
    _require(sampler, n)
    theta = np.zeros(mdp.shape) if q0 is None else check_q(mdp, q0).copy()
    target, track = _track(qstar, mdp)
    record = RunRecord(seed=sampler.seed, budget=sampler.budget)
    errors = np.zeros(n if track else 0)
    buf = np.zeros(sampler.block_size())
    done = 0
    for next_state, rewards in sampler.blocks(n):
        m = len(next_state)
        alphas = stepsize.values(done + 1, m, mdp.gamma)
        out = errors[done : done + m] if track else buf
        _kernels.q_learning_steps(theta, next_state, rewards, alphas, mdp.gamma, target, out, track)
        done += m
    if track:
        record.extend(1, errors, sampler.draws - n + np.arange(1, n + 1))
    record.epoch_outputs.append(theta.copy())
    record.samples_consumed = n
    return theta, record


def vr_update(
    theta: np.ndarray,
    alpha: float,
    qbar: np.ndarray,
    tbar_qbar: np.ndarray,
    sample: TransitionSample,
    mdp: TabularMDP,
) -> np.ndarray:
    """One re-centred step; both empirical operators use the same ``sample``."""
    if not 0.0 < alpha <= 1.0:
        raise ValidationError("stepsize must lie in (0, 1]")
    recentred = empirical_bellman(sample, mdp, theta) - empirical_bellman(sample, mdp, qbar) + tbar_qbar
    return (1.0 - alpha) * theta + alpha * recentred


def _run_epoch(qbar, k_steps, n_m, sampler, qstar):
    mdp = sampler.mdp
    qbar = check_q(mdp, qbar)
    if k_steps < 0 or n_m < 1:
        raise ValidationError("need k_steps >= 0 and n_m >= 1")
    _require(sampler, n_m + k_steps)
    start = sampler.draws
    tbar = monte_carlo_bellman(sampler, qbar, n_m)
    theta = qbar.copy()
    target, track = _track(qstar, mdp)
    errors = np.zeros(k_steps if track else 0)
    buf = np.zeros(sampler.block_size())
    alphas_all = StepSize().values(1, k_steps, mdp.gamma)
    done = 0
    for next_state, rewards in sampler.blocks(k_steps):
        m = len(next_state)
        out = errors[done : done + m] if track else buf
        _kernels.vr_steps(
            theta, qbar, tbar, next_state, rewards, alphas_all[done : done + m], mdp.gamma, target, out, track
        )
        done += m
    used = start + n_m + np.arange(1, k_steps + 1)
    return theta, errors, used


def run_epoch(
    qbar: np.ndarray,
    k_steps: int,
    n_m: int,
    sampler: SeededSampler,
    mdp: TabularMDP | None = None,
    qstar: np.ndarray | None = None,
) -> np.ndarray:
    """One epoch from anchor ``qbar``; consumes exactly ``n_m + k_steps`` draws."""
    if mdp is not None and mdp is not sampler.mdp:
        raise ValidationError("sampler was built for a different MDP")
    theta, _, _ = _run_epoch(qbar, k_steps, n_m, sampler, qstar)
    return theta


@dataclass(frozen=True)
class EpochSchedule:
    num_epochs: int
    epoch_length: int
    recenter_sizes: tuple[int, ...]
    delta: float
    c1: float
    c1_requested: float
    budget: int
    gamma: float
    dim: int
    base: float = 4.0

    @property
    def rescaled(self) -> bool:
        return self.c1 != self.c1_requested

    @property
    def total_samples(self) -> int:
        return self.num_epochs * self.epoch_length + sum(self.recenter_sizes)

    def to_dict(self) -> dict:
        return {
            "num_epochs": self.num_epochs,
            "epoch_length": self.epoch_length,
            "recenter_sizes": list(self.recenter_sizes),
            "total_samples": self.total_samples,
            "budget": self.budget,
            "delta": self.delta,
            "c1": self.c1,
            "c1_requested": self.c1_requested,
            "c1_rescaled": self.rescaled,
            "gamma": self.gamma,
            "dim": self.dim,
            "base": self.base,
        }


def _epoch_ratio(n: int, gamma: float, delta: float, d: int) -> float:
    if n < 2:
        return 0.0
    inner = (16.0 * d / delta) * math.log(n)
    if inner <= 1.0:
        return 0.0
    return n * (1.0 - gamma) ** 2 / (8.0 * math.log(inner))


def _min_feasible_n(gamma, delta, d) -> int:
    hi = 2
    while _epoch_ratio(hi, gamma, delta, d) < 1.0:
        hi *= 2
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _epoch_ratio(mid, gamma, delta, d) >= 1.0:
            hi = mid
        else:
            lo = mid
    return hi


def _recenter_sizes(c1, num_epochs, gamma, delta, d, base):
    log_term = math.log(16.0 * num_epochs * d / delta, base)
    return tuple(
        int(math.ceil(c1 * base**m / (1.0 - gamma) ** 2 * log_term)) for m in range(1, num_epochs + 1)
    )


def make_schedule(
    n: int, gamma: float, delta: float, d: int, c1: float = 1.0, base: float = 4.0
) -> EpochSchedule:
    """Epoch parameters for a budget of ``n`` draws.

    ``M = max(1, floor(log_b(n (1-gamma)^2 / (8 ln((16 d / delta) ln n)))))``,
    ``K = floor(n / (2M))`` and ``N_m = ceil(c1 b^m / (1-gamma)^2 log_b(16 M d / delta))``.
    When the re-centring sizes overrun the budget, ``c1`` is scaled down by the
    smallest factor that makes ``M K + sum N_m <= n``. Passing ``c1=inf`` picks
    the largest constant that fits, so re-centring uses the whole remaining budget.
    """
    if not 0.0 < gamma < 1.0:
        raise ValidationError("gamma must lie in (0, 1)")
    if not 0.0 < delta < 1.0:
        raise ValidationError("delta must lie in (0, 1)")
    if d < 1 or c1 <= 0 or base <= 1:
        raise ValidationError("need d >= 1, c1 > 0 and base > 1")
    ratio = _epoch_ratio(n, gamma, delta, d)
    if ratio < 1.0:
        raise ScheduleError(f"budget n={n} is too small for a single epoch", _min_feasible_n(gamma, delta, d))
    num_epochs = max(1, int(math.floor(math.log(ratio, base))))
    epoch_length = n // (2 * num_epochs)

    def fits(c):
        return num_epochs * epoch_length + sum(_recenter_sizes(c, num_epochs, gamma, delta, d, base)) <= n

    c_eff = c1
    if not math.isfinite(c1) or not fits(c1):
        lo, hi = 0.0, c1 if math.isfinite(c1) else float(n)
        if not fits(1e-300):
            raise ScheduleError(f"budget n={n} cannot hold {num_epochs} epochs", _min_feasible_n(gamma, delta, d))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if fits(mid):
                lo = mid
            else:
                hi = mid
        c_eff = lo
        log.info("re-centring constant c1 scaled from %g to %g to respect n=%d", c1, c_eff, n)
    return EpochSchedule(
        num_epochs=num_epochs,
        epoch_length=epoch_length,
        recenter_sizes=_recenter_sizes(c_eff, num_epochs, gamma, delta, d, base),
        delta=delta,
        c1=c_eff,
        c1_requested=c1,
        budget=n,
        gamma=gamma,
        dim=d,
        base=base,
    )


def vr_q_learning(
    sampler: SeededSampler,
    schedule: EpochSchedule,
    q0: np.ndarray | None = None,
    mdp: TabularMDP | None = None,
    qstar: np.ndarray | None = None,
    check_init: bool = False,
    record: RunRecord | None = None,
) -> tuple[np.ndarray, RunRecord]:
    """Run all epochs of ``schedule`` and return the last anchor with its trace.

    With ``check_init`` the initial point must satisfy
    ``||q0 - Q*||_inf <= ||r||_inf / sqrt(1 - gamma)``.
    """
    if mdp is not None and mdp is not sampler.mdp:
        raise ValidationError("sampler was built for a different MDP")
    mdp = sampler.mdp
    if abs(schedule.gamma - mdp.gamma) > 1e-15:
        raise ValidationError("schedule was built for a different discount factor")
    qbar = np.zeros(mdp.shape) if q0 is None else check_q(mdp, q0).copy()
    if check_init and qstar is not None:
        radius = np.abs(mdp.rewards).max() / math.sqrt(1.0 - mdp.gamma)
        if linf_distance(qbar, qstar) > radius:
            raise PreconditionError(
                f"initial point is {linf_distance(qbar, qstar):.3g} from Q*, more than {radius:.3g}"
            )
    _require(sampler, schedule.total_samples)
    if record is None:
        record = RunRecord(seed=sampler.seed, budget=sampler.budget)
    first_epoch = len(record.epoch_outputs)
    start = sampler.draws
    for m, n_m in enumerate(schedule.recenter_sizes, start=1):
        qbar, errors, used = _run_epoch(qbar, schedule.epoch_length, n_m, sampler, qstar)
        if qstar is not None:
            record.extend(first_epoch + m, errors, used)
        record.epoch_outputs.append(qbar.copy())
    record.samples_consumed += sampler.draws - start
    return qbar, record


def vr_q_learning_with_budget(
    sampler: SeededSampler,
    n: int,
    delta: float = 0.1,
    c1: float = 1.0,
    base: float = 4.0,
    warm_start: float = 0.0,
    q0: np.ndarray | None = None,
    qstar: np.ndarray | None = None,
) -> tuple[np.ndarray, RunRecord, list[EpochSchedule]]:
    """VR-QL on a total budget of ``n`` draws, optionally spending a fraction
    ``warm_start`` on a preliminary VR-QL run that produces the initial point."""
    if not 0.0 <= warm_start < 1.0:
        raise ValidationError("warm_start fraction must lie in [0, 1)")
    mdp = sampler.mdp
    schedules = []
    record = RunRecord(seed=sampler.seed, budget=sampler.budget)
    q = q0
    main_budget = n
    if warm_start > 0:
        warm_budget = int(math.floor(warm_start * n))
        warm = make_schedule(warm_budget, mdp.gamma, delta, mdp.dim, c1, base)
        q, record = vr_q_learning(sampler, warm, q, qstar=qstar, record=record)
        schedules.append(warm)
        main_budget = n - warm_budget
    main = make_schedule(main_budget, mdp.gamma, delta, mdp.dim, c1, base)
    q, record = vr_q_learning(sampler, main, q, qstar=qstar, record=record)
    schedules.append(main)
    return q, record, schedules


def shifted_fixed_point(
    mdp: TabularMDP,
    qbar: np.ndarray,
    tbar_qbar: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Fixed point of ``J(Q) = T(Q) - T(Qbar) + Tbar(Qbar)`` by successive approximation."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    shift = check_q(mdp, tbar_qbar) - bellman_optimality(mdp, qbar)
    q = check_q(mdp, qbar).copy()
    for _ in range(max_iter):
        nxt = bellman_optimality(mdp, q) + shift
        residual = linf_distance(nxt, q)
        q = nxt
        if residual <= tol * (1.0 - mdp.gamma):
            # leaves q within tol of the fixed point and ||J(q) - q|| <= tol
            return q
    raise ConvergenceError("shifted Bellman iteration did not converge", residual)
