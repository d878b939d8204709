"""Projected stochastic gradient descent drivers.

Three optimizers share the same estimation layer:

  bsgd    fixed level, fixed batch size, prescribed step rule
  mlsgd   fixed multilevel batch, prescribed step rule
  bmlsgd  budgeted multilevel loop: per-iteration error targets, optimal
          sample allocation, level growth driven by the regressed bias,
          adaptive step sizes, and a CPU-time/memory ledger with explicit
          stopping reasons

The budgeted loop is written as a flat iteration with explicit state, so
its depth never touches the call stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .mesh import (
    GridLevel,
    NodalField,
    norm_l2,
    project_admissible,
    prolongate_to,
)
from .mlmc import (
    LevelStats,
    MultilevelBatch,
    M_MIN,
    batch_estimation,
    multilevel_estimation,
    sampling_error,
)
from .problem import Hyperparams, ProblemSetup
from .rates import fit_loglinear
from .records import IterationRecord

__all__ = [
    "StepRule",
    "GrowthRates",
    "BudgetLedger",
    "Hyperparams",
    "STOP_COMPLETED",
    "STOP_TIME_FLOOR",
    "STOP_INFEASIBLE_TIME",
    "STOP_INFEASIBLE_MEMORY",
    "TIME_FLOOR_FRACTION",
    "LAUNCH_HEADROOM",
    "memory_footprint",
    "gradient_step",
    "adaptive_step_size",
    "optimal_batch",
    "optimal_batch_raw",
    "predicted_batch_cost",
    "not_feasible",
    "bsgd",
    "mlsgd",
    "bmlsgd",
]

STOP_COMPLETED = "completed"
STOP_TIME_FLOOR = "time-floor"
STOP_INFEASIBLE_TIME = "infeasible-time"
STOP_INFEASIBLE_MEMORY = "infeasible-memory"

# Stop once less than this fraction of the time budget remains.
TIME_FLOOR_FRACTION = 0.05
# Launch gate headroom: per-level mean costs predict the next batch's cost,
# and the prediction can err; a batch is only launched when its predicted
# cost fits into this fraction of the remaining time (on top of the floor
# reserve), so realized totals stay within the budget.
LAUNCH_HEADROOM = 0.8

RecordCallback = Callable[[IterationRecord], None]

_NAN = float("nan")


@dataclass(frozen=True)
class StepRule:
    """Step-size schedule: constant, polynomial decay, or adaptive.

    ``decay`` uses t0 * (k+1)^(-p) and requires p in (1/2, 1] so the usual
    summability conditions hold; ``constant`` and ``adaptive`` take t0 as
    the (first) step.
    """

    KINDS = ("constant", "decay", "adaptive")

    kind: str
    t0: float
    p: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"step kind must be one of {self.KINDS}, got {self.kind!r}")
        if not self.t0 > 0.0:
            raise ValueError(f"t0 must be > 0, got {self.t0}")
        if self.kind == "decay" and not 0.5 < self.p <= 1.0:
            raise ValueError(f"decay exponent must lie in (1/2, 1], got {self.p}")

    def step(self, k: int) -> float:
        if self.kind == "decay":
            return self.t0 * (k + 1) ** (-self.p)
        return self.t0


@dataclass(frozen=True)
class GrowthRates:
    """Across-level scalings used to extrapolate a freshly appended level.

    ``beta``: per-level variance decays like 2^(-beta); ``gamma``: per-sample
    cost grows like 2^(gamma).
    """

    beta: float = 2.0
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and math.isfinite(self.gamma)):
            raise ValueError(f"growth rates must be finite, got {self}")


@dataclass
class BudgetLedger:
    """CPU-time and memory budget with per-iteration charges.

    ``T_k`` is the remaining time budget (initial budget minus all charges);
    ``Mem_k`` is the memory budget minus the footprint of the most recent
    iteration (memory is released between iterations, so only the latest
    footprint counts against the budget).
    """

    T0: float
    Mem0: float
    T_k: float = field(init=False)
    Mem_k: float = field(init=False)
    history: list[tuple[float, float]] = field(default_factory=list, init=False)

    def __post_init__(self) -> None:
        if not self.T0 > 0.0:
            raise ValueError(f"time budget must be > 0, got {self.T0}")
        if not self.Mem0 > 0.0:
            raise ValueError(f"memory budget must be > 0, got {self.Mem0}")
        self.T_k = self.T0
        self.Mem_k = self.Mem0

    def charge(self, cpu_cost: float, mem_footprint: float) -> None:
        self.history.append((cpu_cost, mem_footprint))
        self.T_k -= cpu_cost
        self.Mem_k = self.Mem0 - mem_footprint

    @property
    def total_charged(self) -> float:
        return sum(ct for ct, _ in self.history)


def memory_footprint(finest: GridLevel) -> float:
    """Bytes-equivalent footprint of one iteration at the given finest level.

    Three persistent nodal fields at the finest grid (iterate, previous
    gradient, adjoint estimate) plus one field per hierarchy level for the
    solver scratch space, eight units per node.
    """
    e0 = finest.exponent - finest.ell
    node_count = lambda ell: (2 ** (e0 + ell) + 1) ** 2
    overhead = sum(node_count(ell) for ell in range(finest.ell + 1))
    return 8.0 * (3 * node_count(finest.ell) + overhead)


def gradient_step(
    z: NodalField, q_hat: NodalField, t: float, hp: Hyperparams
) -> tuple[NodalField, NodalField]:
    """One projected descent step; returns (next iterate, gradient used)."""
    if z.level != q_hat.level:
        raise ValueError(f"iterate on {z.level} but adjoint estimate on {q_hat.level}")
    if t < 0.0:
        raise ValueError(f"step size must be >= 0, got {t}")
    g = z * hp.lam - q_hat
    z_next = project_admissible(z - g * t, hp.box)
    return z_next, g


def adaptive_step_size(
    g_k: NodalField, g_prev: NodalField, t_prev: float, err_sam: float
) -> tuple[float, bool]:
    """Step size from the estimated curvature and sampling noise.

    Returns (t_k, fallback).  The curvature proxy is
    c = ||g_k - g_prev|| / (t_prev ||g_prev||) and the step is
    (||g_k||^2 - err_sam) / (c ||g_k||^2).  When the noise dominates the
    squared gradient norm, or the curvature proxy is degenerate, the
    previous step is reused and the fallback flag is set.
    """
    if not t_prev > 0.0:
        raise ValueError(f"previous step must be > 0, got {t_prev}")
    if g_k.level != g_prev.level:
        raise ValueError("gradients live on different levels")
    ng_prev = norm_l2(g_prev)
    ng2 = norm_l2(g_k) ** 2
    if ng_prev == 0.0 or ng2 == 0.0:
        return t_prev, True
    c_lip = norm_l2(g_k - g_prev) / (t_prev * ng_prev)
    numerator = ng2 - err_sam
    if c_lip == 0.0 or not numerator > 0.0:
        return t_prev, True
    return numerator / (c_lip * ng2), False


def _extrapolate(values: list[float], level_count: int, factor: float) -> list[float]:
    out = list(values)
    while len(out) <= level_count:
        out.append(out[-1] * factor)
    return out[: level_count + 1]


def _level_variances(stats: Sequence[LevelStats]) -> list[float]:
    return [s.variance_p() for s in stats]


def _level_costs(stats: Sequence[LevelStats]) -> list[float]:
    return [s.mean_cost for s in stats]


def optimal_batch_raw(
    stats: Sequence[LevelStats],
    eps: float,
    theta: float,
    level_count: int,
    growth: GrowthRates,
) -> list[float]:
    """Pre-ceiling optimal sample counts for a squared sampling-error target.

    The counts minimize total predicted cost subject to
    sum_ell v_ell / M_ell = theta * eps^2 with v_ell = s2_ell / (M_ell - 1);
    levels beyond the available statistics get rate-extrapolated variance
    and cost inputs.
    """
    if not eps > 0.0:
        raise ValueError(f"error target must be > 0, got {eps}")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if level_count + 1 < len(stats):
        raise ValueError(
            f"level count {level_count} below the {len(stats)} levels with statistics"
        )
    v = _extrapolate(_level_variances(stats), level_count, 2.0 ** -growth.beta)
    c = _extrapolate(_level_costs(stats), level_count, 2.0 ** growth.gamma)
    if any(not cost > 0.0 for cost in c):
        raise ValueError("per-sample costs must be positive")
    weighted = sum(math.sqrt(ve * ce) for ve, ce in zip(v, c))
    scale = weighted / (theta * eps * eps)
    return [scale * math.sqrt(ve / ce) for ve, ce in zip(v, c)]


def optimal_batch(
    stats: Sequence[LevelStats],
    eps: float,
    theta: float,
    level_count: int,
    growth: GrowthRates,
) -> MultilevelBatch:
    """Ceil of the raw allocation, floored at the minimum count per level."""
    raw = optimal_batch_raw(stats, eps, theta, level_count, growth)
    return MultilevelBatch(tuple(max(M_MIN, math.ceil(r)) for r in raw))


def predicted_batch_cost(
    batch: MultilevelBatch, stats: Sequence[LevelStats], growth: GrowthRates
) -> float:
    """Predicted CPU cost of a batch from per-level mean sample costs."""
    c = _extrapolate(_level_costs(stats), batch.finest, 2.0 ** growth.gamma)
    return sum(M * ce for M, ce in zip(batch.counts, c))


def _feasibility_reason(
    batch: MultilevelBatch,
    stats: Sequence[LevelStats],
    time_available: float,
    mem_available: float,
    finest: GridLevel,
    growth: GrowthRates,
) -> Optional[str]:
    if predicted_batch_cost(batch, stats, growth) > time_available:
        return STOP_INFEASIBLE_TIME
    if memory_footprint(finest) > mem_available:
        return STOP_INFEASIBLE_MEMORY
    return None


def not_feasible(
    batch: MultilevelBatch,
    stats: Sequence[LevelStats],
    ledger: BudgetLedger,
    finest: GridLevel,
    growth: GrowthRates,
) -> bool:
    """True iff the batch's predicted cost or memory exceeds what remains.

    Both guards are strict: a batch costing exactly the remaining budget is
    feasible.
    """
    return (
        _feasibility_reason(batch, stats, ledger.T_k, ledger.Mem_k, finest, growth)
        is not None
    )


def _emit(
    records: list[IterationRecord],
    on_record: Optional[RecordCallback],
    rec: IterationRecord,
) -> None:
    records.append(rec)
    if on_record is not None:
        on_record(rec)


def _per_level_columns(stats: Sequence[LevelStats]):
    return (
        tuple(s.M for s in stats),
        tuple(s.norm_mean_p for s in stats),
        tuple(s.s2_p for s in stats),
        tuple(s.mean_cost for s in stats),
    )


def bsgd(
    setup: ProblemSetup,
    z0: NodalField,
    step_rule: StepRule,
    M: int,
    ell: int,
    K: int,
    root_seed: int,
    on_record: Optional[RecordCallback] = None,
) -> tuple[NodalField, list[IterationRecord]]:
    """Batched SGD at a fixed level: K steps of plain MC estimation."""
    if K < 0:
        raise ValueError(f"iteration count must be >= 0, got {K}")
    if z0.level != setup.level(ell):
        raise ValueError(f"iterate on {z0.level}, expected {setup.level(ell)}")
    hp = setup.hp
    z = z0
    records: list[IterationRecord] = []
    cumulative = 0.0
    g_prev: Optional[NodalField] = None
    t_prev = step_rule.t0
    for k in range(K):
        mean_q, J, stats = batch_estimation(setup, z, M, ell, k, root_seed)
        err_sam = sampling_error([stats]) if M >= 2 else _NAN
        g = z * hp.lam - mean_q
        if step_rule.kind == "adaptive" and g_prev is not None:
            noise = 0.0 if math.isnan(err_sam) else err_sam
            t, _ = adaptive_step_size(g, g_prev, t_prev, noise)
        else:
            t = step_rule.step(k)
        z, _ = gradient_step(z, mean_q, t, hp)
        cumulative += stats.mean_cost * stats.M
        level_M, level_norm_p, level_s2, level_cost = _per_level_columns([stats])
        _emit(records, on_record, IterationRecord(
            k=k,
            J_hat=J,
            grad_norm=norm_l2(g),
            t_k=t,
            eps_k=_NAN,
            err_sam=err_sam,
            err_num=_NAN,
            alpha_hat=_NAN,
            cumulative_cost=cumulative,
            remaining_T=_NAN,
            remaining_Mem=_NAN,
            level_M=level_M,
            level_norm_p=level_norm_p,
            level_s2=level_s2,
            level_cost=level_cost,
        ))
        g_prev, t_prev = g, t
    if records:
        records[-1].stop_reason = STOP_COMPLETED
    return z, records


def mlsgd(
    setup: ProblemSetup,
    z0: NodalField,
    step_rule: StepRule,
    batch: MultilevelBatch,
    K: int,
    root_seed: int,
    on_record: Optional[RecordCallback] = None,
) -> tuple[NodalField, list[IterationRecord]]:
    """Multilevel SGD with a fixed batch: K steps of telescoped estimation."""
    if K < 0:
        raise ValueError(f"iteration count must be >= 0, got {K}")
    finest = setup.level(batch.finest)
    if z0.level != finest:
        raise ValueError(f"iterate on {z0.level}, expected finest {finest}")
    hp = setup.hp
    z = z0
    records: list[IterationRecord] = []
    cumulative = 0.0
    g_prev: Optional[NodalField] = None
    t_prev = step_rule.t0
    for k in range(K):
        est = multilevel_estimation(setup, z, batch, k, root_seed)
        g = est.g_hat
        if step_rule.kind == "adaptive" and g_prev is not None:
            t, _ = adaptive_step_size(g, g_prev, t_prev, est.err_sam)
        else:
            t = step_rule.step(k)
        z, _ = gradient_step(z, est.q_hat, t, hp)
        cumulative += est.total_cost
        level_M, level_norm_p, level_s2, level_cost = _per_level_columns(est.per_level)
        _emit(records, on_record, IterationRecord(
            k=k,
            J_hat=est.J_hat,
            grad_norm=norm_l2(g),
            t_k=t,
            eps_k=_NAN,
            err_sam=est.err_sam,
            err_num=est.err_num,
            alpha_hat=est.alpha_hat,
            cumulative_cost=cumulative,
            remaining_T=_NAN,
            remaining_Mem=_NAN,
            level_M=level_M,
            level_norm_p=level_norm_p,
            level_s2=level_s2,
            level_cost=level_cost,
        ))
        g_prev, t_prev = g, t
    if records:
        records[-1].stop_reason = STOP_COMPLETED
    return z, records


def _refit_growth(stats: Sequence[LevelStats], fallback: GrowthRates) -> GrowthRates:
    """Refit the variance/cost scalings from live statistics when possible."""
    beta = fallback.beta
    gamma = fallback.gamma
    pairs = [s for s in stats if s.ell >= 1 and s.M >= 2 and s.s2_p > 0.0]
    if len(pairs) >= 2:
        try:
            beta = fit_loglinear(
                [2.0 ** -s.ell for s in pairs],
                [s.variance_p() for s in pairs],
                sign=+1,
            ).exponent
        except ValueError:
            pass
    if len(stats) >= 2:
        try:
            gamma = fit_loglinear(
                [2.0 ** -s.ell for s in stats],
                [s.mean_cost for s in stats],
                sign=-1,
            ).exponent
        except ValueError:
            pass
    try:
        return GrowthRates(beta=beta, gamma=gamma)
    except ValueError:
        return fallback


def bmlsgd(
    setup: ProblemSetup,
    z0: NodalField,
    batch0: MultilevelBatch,
    t0: float,
    ledger: BudgetLedger,
    growth: GrowthRates,
    root_seed: int,
    on_record: Optional[RecordCallback] = None,
) -> tuple[NodalField, list[IterationRecord]]:
    """Budgeted multilevel SGD: the full adaptive loop.

    Starts with one estimation on the initial batch and a plain step of
    size t0, then repeats: stop when the remaining time drops below the
    floor; grow the finest level when the certified bias exceeds its share
    of the squared error target; allocate samples optimally for the target;
    stop before launching any batch whose prediction does not fit the
    remaining budgets; estimate, take an adaptive step, charge the ledger,
    and contract the error target to eta times the measured gradient norm.

    The initial batch must be affordable within the budgets; it is charged
    unconditionally.
    """
    if batch0.finest < 2:
        raise ValueError(
            "the initial batch needs at least three levels so the bias decay "
            f"can be regressed, got {batch0.finest + 1}"
        )
    if not t0 > 0.0:
        raise ValueError(f"initial step must be > 0, got {t0}")
    hp = setup.hp
    L = batch0.finest
    finest = setup.level(L)
    if z0.level != finest:
        raise ValueError(f"iterate on {z0.level}, expected finest {finest}")

    records: list[IterationRecord] = []
    z = z0

    est = multilevel_estimation(setup, z, batch0, 0, root_seed)
    g = est.g_hat
    grad_norm = norm_l2(g)
    z, _ = gradient_step(z, est.q_hat, t0, hp)
    ledger.charge(est.total_cost, memory_footprint(finest))
    cumulative = est.total_cost
    level_M, level_norm_p, level_s2, level_cost = _per_level_columns(est.per_level)
    _emit(records, on_record, IterationRecord(
        k=0,
        J_hat=est.J_hat,
        grad_norm=grad_norm,
        t_k=t0,
        eps_k=_NAN,
        err_sam=est.err_sam,
        err_num=est.err_num,
        alpha_hat=est.alpha_hat,
        cumulative_cost=cumulative,
        remaining_T=ledger.T_k,
        remaining_Mem=ledger.Mem_k,
        level_M=level_M,
        level_norm_p=level_norm_p,
        level_s2=level_s2,
        level_cost=level_cost,
    ))

    eps = hp.eta * grad_norm
    g_prev = g
    t_prev = t0
    stats = est.per_level
    err_num_prev = est.err_num
    growth_cur = _refit_growth(stats, growth)

    k = 1
    while True:
        if ledger.T_k < TIME_FLOOR_FRACTION * ledger.T0:
            reason = STOP_TIME_FLOOR
            break
        if err_num_prev >= (1.0 - hp.theta) * eps * eps:
            L += 1
            finest = setup.level(L)
        batch = optimal_batch(stats, eps, hp.theta, L, growth_cur)
        time_available = min(
            ledger.T_k - TIME_FLOOR_FRACTION * ledger.T0,
            LAUNCH_HEADROOM * ledger.T_k,
        )
        reason = _feasibility_reason(
            batch, stats, time_available, ledger.Mem_k, finest, growth_cur
        )
        if reason is not None:
            break
        if L > z.level.ell:
            z = prolongate_to(z, finest)
            g_prev = prolongate_to(g_prev, finest)
        est = multilevel_estimation(setup, z, batch, k, root_seed)
        g = est.g_hat
        grad_norm = norm_l2(g)
        t, _ = adaptive_step_size(g, g_prev, t_prev, est.err_sam)
        z, _ = gradient_step(z, est.q_hat, t, hp)
        ledger.charge(est.total_cost, memory_footprint(finest))
        cumulative += est.total_cost
        level_M, level_norm_p, level_s2, level_cost = _per_level_columns(est.per_level)
        _emit(records, on_record, IterationRecord(
            k=k,
            J_hat=est.J_hat,
            grad_norm=grad_norm,
            t_k=t,
            eps_k=eps,
            err_sam=est.err_sam,
            err_num=est.err_num,
            alpha_hat=est.alpha_hat,
            cumulative_cost=cumulative,
            remaining_T=ledger.T_k,
            remaining_Mem=ledger.Mem_k,
            level_M=level_M,
            level_norm_p=level_norm_p,
            level_s2=level_s2,
            level_cost=level_cost,
        ))
        eps = hp.eta * grad_norm
        g_prev, t_prev = g, t
        stats = est.per_level
        err_num_prev = est.err_num
        growth_cur = _refit_growth(stats, growth_cur)
        k += 1

    records[-1].stop_reason = reason
    return z, records
