"""Log-linear regression utilities for convergence-rate diagnostics.

Everything here fits straight lines in log2-log2 space.  The ``sign``
argument fixes the reporting convention: pass -1 when y decays in x (so
that decay rates come out positive), +1 when y grows with the regressor
convention (norms and variances against the mesh width).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class RateFit:
    """Result of a log2-log2 least-squares fit."""

    exponent: float
    intercept: float
    residual: float
    n_points: int


def fit_loglinear(xs: Sequence[float], ys: Sequence[float], sign: int) -> RateFit:
    """Ordinary least squares of log2(y) against sign*log2(x).

    The exponent is the fitted slope under that sign convention; for data
    following y = c * x**(-a) with sign=-1 it equals a (positive for decay).
    """
    if sign not in (-1, +1):
        raise ValueError(f"sign must be -1 or +1, got {sign}")
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} xs vs {len(ys)} ys")
    if len(xs) < 2:
        raise ValueError(f"need at least two points, got {len(xs)}")
    if any(not (x > 0.0) for x in xs) or any(not (y > 0.0) for y in ys):
        raise ValueError("all xs and ys must be strictly positive")
    lx = [sign * math.log2(x) for x in xs]
    ly = [math.log2(y) for y in ys]
    n = len(lx)
    mx = sum(lx) / n
    my = sum(ly) / n
    sxx = sum((a - mx) ** 2 for a in lx)
    if sxx == 0.0:
        raise ValueError("degenerate regressor: all xs equal")
    sxy = sum((a - mx) * (b - my) for a, b in zip(lx, ly))
    slope = sxy / sxx
    intercept = my - slope * mx
    residual = sum((b - (intercept + slope * a)) ** 2 for a, b in zip(lx, ly))
    return RateFit(exponent=slope, intercept=intercept, residual=residual, n_points=n)


def estimate_delta(trajectory, burn_in_cost: float) -> RateFit:
    """Resource-convergence rate: gradient norm against cumulative cost.

    Regresses log2 ||g_k|| on log2(cumulative consumed cost), excluding
    records whose cumulative cost is below ``burn_in_cost`` (early iterations
    are dominated by the initial configuration, not the asymptotic decay).
    The exponent is positive when the gradient norm decays with spend.
    """
    xs = []
    ys = []
    for rec in trajectory:
        if rec.cumulative_cost < burn_in_cost:
            continue
        xs.append(rec.cumulative_cost)
        ys.append(rec.grad_norm)
    if len(xs) < 2:
        raise ValueError(
            f"delta regression needs at least two records past the burn-in, "
            f"got {len(xs)}"
        )
    return fit_loglinear(xs, ys, sign=-1)
