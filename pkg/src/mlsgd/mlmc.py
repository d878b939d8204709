"""Monte Carlo and multilevel Monte Carlo estimation of the adjoint and objective.

A *single-level batch* draws M coefficient fields on one grid, solves the
state and adjoint problems for each, and averages.  A *level pair* solves
the same realization on two consecutive grids and averages the differences
(adjoint difference p, state difference v, objective increment Y).  The
multilevel estimator telescopes the pairs:

    q_hat = sum_ell prolongate(mean p_ell)        (adjoint estimate)
    J_hat = sum_ell mean(Y_ell) + 0.5*lam*||z||^2 (objective estimate)

All reductions run in sample-index order regardless of how the worker pool
schedules the solves, so results are bitwise independent of the worker
count.  Second-order sums use the streaming (Welford) update.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

from . import pde
from .mesh import NodalField, norm_l2, prolongate_to, restrict, zeros
from .problem import ProblemSetup, regularization
from .randfield import mix_seed
from .rates import fit_loglinear

M_MIN = 3

NO_DECAY = float("inf")


class EstimationError(RuntimeError):
    """A sample solve failed; identifies the batch position and seed."""

    def __init__(self, message: str, k: int, ell: int, m: int, seed: int):
        super().__init__(message)
        self.k = k
        self.ell = ell
        self.m = m
        self.seed = seed


@dataclass
class LevelStats:
    """Per-level batch statistics.

    ``mean_p``/``s2_p`` are the running mean field and the second-order sum
    sum_m ||p_m - mean||^2 of the adjoint (difference) samples; ``mean_v``/
    ``s2_v`` are the same for the state (difference) samples.  ``sum_Y`` is
    the plain sum of the per-sample objective increments and ``mean_cost``
    the average per-sample cost in the setup's cost mode.
    """

    ell: int
    M: int
    mean_p: NodalField
    s2_p: float
    sum_Y: float
    mean_cost: float
    norm_mean_p: float
    mean_v: NodalField
    s2_v: float
    norm_mean_v: float

    def variance_p(self) -> float:
        """Unbiased per-sample variance s2_p / (M - 1)."""
        if self.M < 2:
            raise ValueError(f"variance needs M >= 2, got M={self.M}")
        return self.s2_p / (self.M - 1)


@dataclass(frozen=True)
class MultilevelBatch:
    """Sample counts per level, index 0 = coarsest."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.counts) < 1:
            raise ValueError("batch needs at least one level")
        for ell, M in enumerate(self.counts):
            if int(M) != M or M < M_MIN:
                raise ValueError(
                    f"level {ell}: sample count must be an integer >= {M_MIN}, got {M}"
                )
        object.__setattr__(self, "counts", tuple(int(M) for M in self.counts))

    @property
    def finest(self) -> int:
        return len(self.counts) - 1


@dataclass
class GradientEstimate:
    """Output of one (multilevel) estimation at a fixed control iterate."""

    q_hat: NodalField
    g_hat: NodalField
    J_hat: float
    err_sam: float
    err_num: float
    alpha_hat: float
    total_cost: float
    per_level: list[LevelStats]


class _Welford:
    """Streaming mean field + second-order sum in the grid inner product."""

    def __init__(self, level):
        self.n = 0
        self.mean = zeros(level)
        self.m2 = 0.0

    def add(self, x: NodalField) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta * (1.0 / self.n)
        from .mesh import inner_l2  # local import keeps module top minimal

        self.m2 += inner_l2(delta, x - self.mean)

    def second_order_sum(self) -> float:
        return max(self.m2, 0.0)


def _pool_map(workers: int, fn: Callable[[int], object], n: int) -> Iterator[object]:
    """Map fn over range(n), yielding results in index order."""
    if workers <= 1 or n <= 1:
        for m in range(n):
            yield fn(m)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, range(n))


def _misfit_objective(u: NodalField, d: NodalField) -> float:
    from .mesh import inner_l2

    mis = u - d
    return 0.5 * inner_l2(mis, mis)


def batch_estimation(
    setup: ProblemSetup,
    z: NodalField,
    M: int,
    ell: int,
    k: int,
    root_seed: int,
) -> tuple[NodalField, float, LevelStats]:
    """Plain Monte Carlo estimate of the adjoint and objective on one level.

    Returns (mean adjoint field, objective estimate including the control
    penalty, per-level statistics).
    """
    if M < 1:
        raise ValueError(f"batch size must be >= 1, got {M}")
    level = setup.level(ell)
    if z.level != level:
        raise ValueError(f"control lives on {z.level}, expected {level}")
    setup.prepare_levels([ell])
    d = setup.target_field(ell)
    tol = setup.solver_tol

    def one_sample(m: int):
        seed = mix_seed(root_seed, k, ell, m)
        timed = setup.cost_mode == "seconds"
        t_start = time.perf_counter() if timed else 0.0
        try:
            y = setup.sampler.realization(ell, k, m, root_seed)
            op = pde.assemble(y)
            u, rep_u = pde.solve_state(op, z, tol=tol)
            q, rep_q = pde.solve_adjoint(op, u, d, tol=tol)
        except pde.SolverError as exc:
            raise EstimationError(
                f"sample m={m} on level {ell} (iteration {k}, seed {seed}) "
                f"failed: {exc}",
                k=k, ell=ell, m=m, seed=seed,
            ) from exc
        if timed:
            cost = time.perf_counter() - t_start
        else:
            cost = float(rep_u.work_units + rep_q.work_units)
        return q, u, _misfit_objective(u, d), cost

    acc_q = _Welford(level)
    acc_u = _Welford(level)
    sum_Y = 0.0
    total_cost = 0.0
    for q, u, Q, cost in _pool_map(setup.workers, one_sample, M):
        acc_q.add(q)
        acc_u.add(u)
        sum_Y += Q
        total_cost += cost

    stats = LevelStats(
        ell=ell,
        M=M,
        mean_p=acc_q.mean,
        s2_p=acc_q.second_order_sum(),
        sum_Y=sum_Y,
        mean_cost=total_cost / M,
        norm_mean_p=norm_l2(acc_q.mean),
        mean_v=acc_u.mean,
        s2_v=acc_u.second_order_sum(),
        norm_mean_v=norm_l2(acc_u.mean),
    )
    J_mc = sum_Y / M + regularization(setup.hp, z)
    return acc_q.mean, J_mc, stats


def level_pair_estimation(
    setup: ProblemSetup,
    z_fine_control: NodalField,
    M: int,
    ell: int,
    k: int,
    root_seed: int,
) -> tuple[NodalField, float, LevelStats]:
    """Monte Carlo estimate of the level-(ell, ell-1) correction terms.

    The control is restricted to both grids; each sample solves state and
    adjoint on both with the *same* coefficient realization and averages
    p = q_fine - prolongate(q_coarse), v analogously for the states, and
    the objective increment Y = Q_fine - Q_coarse.
    """
    if ell < 1:
        raise ValueError(f"level pairs need ell >= 1, got {ell}")
    if M < 1:
        raise ValueError(f"batch size must be >= 1, got {M}")
    fine = setup.level(ell)
    coarse = setup.level(ell - 1)
    if z_fine_control.level.ell < ell:
        raise ValueError(
            f"control lives on level {z_fine_control.level.ell}, "
            f"cannot be restricted down to level {ell}"
        )
    z_f = restrict(z_fine_control, fine)
    z_c = restrict(z_fine_control, coarse)
    setup.prepare_levels([ell - 1, ell])
    d_f = setup.target_field(ell)
    d_c = setup.target_field(ell - 1)
    tol = setup.solver_tol

    def one_sample(m: int):
        seed = mix_seed(root_seed, k, ell, m)
        timed = setup.cost_mode == "seconds"
        t_start = time.perf_counter() if timed else 0.0
        try:
            y_f, y_c = setup.sampler.realization_pair(ell, k, m, root_seed)
            op_f = pde.assemble(y_f)
            op_c = pde.assemble(y_c)
            u_f, rep_uf = pde.solve_state(op_f, z_f, tol=tol)
            q_f, rep_qf = pde.solve_adjoint(op_f, u_f, d_f, tol=tol)
            u_c, rep_uc = pde.solve_state(op_c, z_c, tol=tol)
            q_c, rep_qc = pde.solve_adjoint(op_c, u_c, d_c, tol=tol)
        except pde.SolverError as exc:
            raise EstimationError(
                f"sample m={m} on level pair ({ell - 1}, {ell}) "
                f"(iteration {k}, seed {seed}) failed: {exc}",
                k=k, ell=ell, m=m, seed=seed,
            ) from exc
        p = q_f - prolongate_to(q_c, fine)
        v = u_f - prolongate_to(u_c, fine)
        Y = _misfit_objective(u_f, d_f) - _misfit_objective(u_c, d_c)
        if timed:
            cost = time.perf_counter() - t_start
        else:
            cost = float(
                rep_uf.work_units + rep_qf.work_units
                + rep_uc.work_units + rep_qc.work_units
            )
        return p, v, Y, cost

    acc_p = _Welford(fine)
    acc_v = _Welford(fine)
    sum_Y = 0.0
    total_cost = 0.0
    for p, v, Y, cost in _pool_map(setup.workers, one_sample, M):
        acc_p.add(p)
        acc_v.add(v)
        sum_Y += Y
        total_cost += cost

    stats = LevelStats(
        ell=ell,
        M=M,
        mean_p=acc_p.mean,
        s2_p=acc_p.second_order_sum(),
        sum_Y=sum_Y,
        mean_cost=total_cost / M,
        norm_mean_p=norm_l2(acc_p.mean),
        mean_v=acc_v.mean,
        s2_v=acc_v.second_order_sum(),
        norm_mean_v=norm_l2(acc_v.mean),
    )
    return acc_p.mean, sum_Y / M, stats


def multilevel_estimation(
    setup: ProblemSetup,
    z: NodalField,
    batch: MultilevelBatch,
    k: int,
    root_seed: int,
) -> GradientEstimate:
    """Telescoped estimate of adjoint, gradient, and objective at iterate z."""
    L = batch.finest
    finest = setup.level(L)
    if z.level != finest:
        raise ValueError(f"control lives on {z.level}, expected finest {finest}")

    per_level: list[LevelStats] = []
    z0 = restrict(z, setup.level(0))
    _, _, stats0 = batch_estimation(setup, z0, batch.counts[0], 0, k, root_seed)
    per_level.append(stats0)
    for ell in range(1, L + 1):
        _, _, stats = level_pair_estimation(
            setup, z, batch.counts[ell], ell, k, root_seed
        )
        per_level.append(stats)

    q_hat = zeros(finest)
    for stats in per_level:
        q_hat = q_hat + prolongate_to(stats.mean_p, finest)
    J_hat = sum(s.sum_Y / s.M for s in per_level) + regularization(setup.hp, z)
    g_hat = z * setup.hp.lam - q_hat

    err_sam = sampling_error(per_level)
    if L >= 2:
        alpha_hat, err_num = numerical_error(per_level)
    elif L == 1:
        # A single coupled level leaves the bias unregressable; report the
        # no-decay sentinel so callers treat it as uncertified.
        alpha_hat, err_num = float("nan"), NO_DECAY
    else:
        # Degenerate telescope: no coupled levels exist, so there is no
        # bias diagnostic at all.
        alpha_hat, err_num = float("nan"), float("nan")
    total_cost = sum(s.mean_cost * s.M for s in per_level)
    return GradientEstimate(
        q_hat=q_hat,
        g_hat=g_hat,
        J_hat=J_hat,
        err_sam=err_sam,
        err_num=err_num,
        alpha_hat=alpha_hat,
        total_cost=total_cost,
        per_level=per_level,
    )


def sampling_error(stats: Sequence[LevelStats]) -> float:
    """Estimated squared sampling error sum_ell s2_ell / (M_ell (M_ell - 1))."""
    out = 0.0
    for s in stats:
        if s.M < 2:
            raise ValueError(
                f"sampling error needs M >= 2 on every level, got M={s.M} "
                f"on level {s.ell}"
            )
        out += s.s2_p / (s.M * (s.M - 1))
    return out


def numerical_error(stats: Sequence[LevelStats]) -> tuple[float, float]:
    """Regressed decay exponent and extrapolated squared discretization error.

    Fits ||mean p_ell|| ~ 2^(-alpha*ell) over the pair levels ell = 1..L and
    extrapolates the remaining bias of the finest level.  Without observed
    decay (alpha <= 0, or degenerate data) the error cannot be certified and
    the +inf sentinel is returned.
    """
    pairs = [s for s in stats if s.ell >= 1]
    if len(pairs) < 2:
        raise ValueError(
            f"bias regression needs at least two pair levels, got {len(pairs)}"
        )
    L = max(s.ell for s in pairs)
    norms = [s.norm_mean_p for s in pairs]
    if any(not (n > 0.0) for n in norms) or not all(map(math.isfinite, norms)):
        return float("nan"), NO_DECAY
    fit = fit_loglinear([2.0 ** -s.ell for s in pairs], norms, sign=+1)
    alpha = fit.exponent
    if alpha <= 0.0:
        return alpha, NO_DECAY
    gain = 2.0 ** alpha - 1.0
    err = max(
        (s.norm_mean_p / (gain * 2.0 ** (alpha * (L - s.ell)))) ** 2 for s in pairs
    )
    return alpha, err
