"""Scaling experiments on the two-state family and log-log slope fitting."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ScheduleError, ValidationError
from .example import example1_mdp, example1_qstar, paper_budget
from .sampling import SeededSampler, derive_seed
from .solvers import RunRecord, make_schedule, vr_q_learning_with_budget

log = logging.getLogger(__name__)

ROW_FIELDS = ["gamma", "n", "trial", "err_linf", "log_complexity", "log_err"]


@dataclass
class ExperimentConfig:
    """Settings for a sweep over discount factors.

    ``budget_rule`` is either ``"paper"`` (``N = ceil((32*16/9) / (1-gamma)^3)``)
    or one budget per grid point. ``c1=None`` sizes the re-centring batches to
    use the whole budget.
    """

    lam: float = 0.5
    gamma_grid: list[float] = field(default_factory=lambda: [0.80, 0.85, 0.90, 0.95, 0.97])
    trials: int = 100
    budget_rule: str | list[int] = "paper"
    delta: float = 0.1
    seed: int = 0
    c1: float | None = None
    base: float = 4.0
    warm_start: float = 0.0
    workers: int = 1
    trace_gamma: float | None = None
    rows_csv: str | None = None
    plot_svg: str | None = None
    trace_csv: str | None = None

    def __post_init__(self):
        self.gamma_grid = [float(g) for g in self.gamma_grid]
        if not self.gamma_grid:
            raise ValidationError("gamma_grid must not be empty")
        if any(b <= a for a, b in zip(self.gamma_grid, self.gamma_grid[1:])):
            raise ValidationError("gamma_grid must be strictly increasing")
        if not all(0.5 < g < 1.0 for g in self.gamma_grid):
            raise ValidationError("every gamma must lie in (1/2, 1)")
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValidationError("trials must be a positive integer")
        if isinstance(self.budget_rule, str):
            if self.budget_rule != "paper":
                raise ValidationError(f"unknown budget rule {self.budget_rule!r}")
        else:
            self.budget_rule = [int(b) for b in self.budget_rule]
            if len(self.budget_rule) != len(self.gamma_grid):
                raise ValidationError("budget list must have one entry per gamma")
        if self.c1 is not None and self.c1 <= 0:
            raise ValidationError("c1 must be positive")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")

    def budgets(self) -> list[int]:
        if self.budget_rule == "paper":
            return [paper_budget(g) for g in self.gamma_grid]
        return list(self.budget_rule)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: not valid JSON ({exc})") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class ExperimentRow:
    gamma: float
    n: int
    trial: int
    err_linf: float

    @property
    def log_complexity(self) -> float:
        return math.log(1.0 / (1.0 - self.gamma))

    @property
    def flagged(self) -> bool:
        """Zero error has no logarithm; such rows are kept but not fitted."""
        return self.err_linf <= 0.0

    @property
    def log_err(self) -> float:
        return math.log(self.err_linf) if not self.flagged else math.nan


@dataclass
class ScalingResult:
    rows: list[ExperimentRow]
    infeasible: list[tuple[float, int, str]]  # (gamma, n, reason)


def _c1_value(c1: float | None) -> float:
    return math.inf if c1 is None else c1


def _trial_error(task) -> float:
    gamma, lam, n, seed, delta, c1, base, warm = task
    mdp = example1_mdp(gamma, lam)
    sampler = SeededSampler(mdp, seed, budget=n)
    q, _, _ = vr_q_learning_with_budget(
        sampler, n, delta=delta, c1=c1, base=base, warm_start=warm
    )
    return float(np.abs(q - example1_qstar(gamma, lam)).max())


def _check_feasible(config: ExperimentConfig, gamma: float, n: int) -> str | None:
    d = example1_mdp(gamma, config.lam).dim
    c1 = _c1_value(config.c1)
    try:
        if config.warm_start > 0:
            warm = int(math.floor(config.warm_start * n))
            make_schedule(warm, gamma, config.delta, d, c1, config.base)
            n -= warm
        make_schedule(n, gamma, config.delta, d, c1, config.base)
    except ScheduleError as exc:
        return str(exc)
    return None


def scaling_experiment(config: ExperimentConfig) -> ScalingResult:
    """Final VR-QL error for every grid point and trial, started from zero.

    Trial ``t`` at grid index ``i`` draws from the stream ``derive_seed(seed, i, t)``,
    so results do not depend on ``workers``.
    """
    tasks, keys, infeasible = [], [], []
    c1 = _c1_value(config.c1)
    for gi, (gamma, n) in enumerate(zip(config.gamma_grid, config.budgets())):
        reason = _check_feasible(config, gamma, n)
        if reason is not None:
            log.warning("skipping gamma=%g: %s", gamma, reason)
            infeasible.append((gamma, n, reason))
            continue
        for t in range(config.trials):
            seed = derive_seed(config.seed, gi, t)
            tasks.append((gamma, config.lam, n, seed, config.delta, c1, config.base, config.warm_start))
            keys.append((gamma, n, t))
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            errors = list(pool.map(_trial_error, tasks, chunksize=max(1, len(tasks) // (4 * config.workers))))
    else:
        errors = [_trial_error(t) for t in tasks]
    rows = [ExperimentRow(g, n, t, e) for (g, n, t), e in zip(keys, errors)]
    zeros = sum(r.flagged for r in rows)
    if zeros:
        log.warning("%d runs ended with zero error; they are excluded from slope fits", zeros)
    return ScalingResult(rows, infeasible)


def epoch_trace_experiment(
    config: ExperimentConfig, gamma: float | None = None, trial: int = 0
) -> RunRecord:
    """Per-iteration error trace of a single run; one plateau per epoch."""
    if gamma is None:
        gamma = config.trace_gamma if config.trace_gamma is not None else config.gamma_grid[0]
    if gamma in config.gamma_grid:
        gi = config.gamma_grid.index(gamma)
        n = config.budgets()[gi]
    else:
        gi, n = len(config.gamma_grid), paper_budget(gamma)
    mdp = example1_mdp(gamma, config.lam)
    sampler = SeededSampler(mdp, derive_seed(config.seed, gi, trial), budget=n)
    _, record, _ = vr_q_learning_with_budget(
        sampler,
        n,
        delta=config.delta,
        c1=_c1_value(config.c1),
        base=config.base,
        warm_start=config.warm_start,
        qstar=example1_qstar(gamma, config.lam),
    )
    return record


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float

    def __iter__(self):
        return iter((self.slope, self.intercept, self.stderr))


def mean_log_errors(rows) -> tuple[np.ndarray, np.ndarray]:
    """Per-gamma ``(log_complexity, mean log_err)`` over unflagged rows."""
    groups: dict[float, list[float]] = {}
    for r in rows:
        if not r.flagged:
            groups.setdefault(r.gamma, []).append(r.log_err)
    gammas = sorted(groups)
    x = np.array([math.log(1.0 / (1.0 - g)) for g in gammas])
    y = np.array([np.mean(groups[g]) for g in gammas])
    return x, y


def fit_loglog_slope(rows) -> SlopeFit:
    """OLS of mean log error on log discount complexity."""
    x, y = mean_log_errors(rows)
    if len(x) < 2 or np.ptp(x) == 0:
        raise ValidationError("need at least two distinct gamma values to fit a slope")
    fit = stats.linregress(x, y)
    stderr = 0.0 if len(x) == 2 else float(fit.stderr)
    return SlopeFit(float(fit.slope), float(fit.intercept), stderr)


def rows_to_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            log_err = "" if r.flagged else repr(r.log_err)
            w.writerow([repr(r.gamma), r.n, r.trial, repr(r.err_linf), repr(r.log_complexity), log_err])


def rows_from_csv(path: str | Path) -> list[ExperimentRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(ROW_FIELDS[:4]) <= set(reader.fieldnames):
            raise ValidationError(f"{path}: expected columns {','.join(ROW_FIELDS)}")
        try:
            return [
                ExperimentRow(float(d["gamma"]), int(d["n"]), int(d["trial"]), float(d["err_linf"]))
                for d in reader
            ]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed row ({exc})") from exc
