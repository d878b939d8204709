"""Log-normal diffusion solves on one grid level.

The operator discretizes -div(exp(y) grad u) = f on the unit square with
homogeneous Dirichlet data by a 5-point flux stencil: edge conductances are
exp of the averaged nodal log-coefficient, rows stay scaled by h^2 (fluxes
are not divided by h^2, right-hand sides are multiplied by it), and boundary
rows are identity.  Systems are solved by conjugate gradients preconditioned
with one geometric multigrid V(1,1) cycle (damped Jacobi smoothing,
full-weighting residual restriction, bilinear prolongation, exact solve on
the 3x3 grid).

Every solve reports ``work_units``: each whole-grid array operation (operator
application, smoothing update, residual, transfer, inner product, vector
update) adds that grid's node count, a machine-independent cost measure that
scales like the true arithmetic work.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .mesh import GridLevel, NodalField, inner_l2

DEFAULT_TOL = 1e-8
MAX_ITERATIONS = 500
JACOBI_DAMPING = 0.8


class SolverError(RuntimeError):
    """Raised when CG fails to reach tolerance; carries the residual history."""

    def __init__(self, message: str, residual_history: list[float]):
        super().__init__(message)
        self.residual_history = residual_history


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    work_units: int
    converged: bool = True


class _StencilLevel:
    """Edge conductances, stencil diagonal and scratch buffers for one grid."""

    __slots__ = ("n", "nodes", "a_h", "a_v", "diag", "b", "u", "r", "tmp")

    def __init__(self, log_values: np.ndarray):
        n = log_values.shape[0] - 1
        self.n = n
        self.nodes = (n + 1) * (n + 1)
        y = log_values
        self.a_h = np.exp(0.5 * (y[:, :-1] + y[:, 1:]))  # (n+1, n)
        self.a_v = np.exp(0.5 * (y[:-1, :] + y[1:, :]))  # (n, n+1)
        diag = np.ones((n + 1, n + 1))
        diag[1:n, 1:n] = (
            self.a_h[1:n, 0 : n - 1]
            + self.a_h[1:n, 1:n]
            + self.a_v[0 : n - 1, 1:n]
            + self.a_v[1:n, 1:n]
        )
        self.diag = diag
        self.b = np.zeros((n + 1, n + 1))
        self.u = np.zeros((n + 1, n + 1))
        self.r = np.zeros((n + 1, n + 1))
        self.tmp = np.zeros((n + 1, n + 1))

    def apply(self, u: np.ndarray, out: np.ndarray) -> np.ndarray:
        """out = A u: flux differences on interior rows, identity on boundary."""
        n = self.n
        out[0, :] = u[0, :]
        out[-1, :] = u[-1, :]
        out[:, 0] = u[:, 0]
        out[:, -1] = u[:, -1]
        c = u[1:n, 1:n]
        out[1:n, 1:n] = (
            self.a_h[1:n, 0 : n - 1] * (c - u[1:n, 0 : n - 1])
            + self.a_h[1:n, 1:n] * (c - u[1:n, 2 : n + 1])
            + self.a_v[0 : n - 1, 1:n] * (c - u[0 : n - 1, 1:n])
            + self.a_v[1:n, 1:n] * (c - u[2 : n + 1, 1:n])
        )
        return out


class DiffusionOperator:
    """Assembled stencil at one level, retaining the log-field so the
    multigrid hierarchy can be derived (coarse operators are re-assembled
    from injected log-coefficients, shared read-only within a solve)."""

    def __init__(self, level: GridLevel, log_field: NodalField, finest: _StencilLevel):
        self.level = level
        self.log_field = log_field
        self._finest = finest
        self._mg: Optional[_Multigrid] = None

    @property
    def a_h(self) -> np.ndarray:
        return self._finest.a_h

    @property
    def a_v(self) -> np.ndarray:
        return self._finest.a_v

    @property
    def diag(self) -> np.ndarray:
        return self._finest.diag

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = np.empty_like(np.asarray(u, dtype=np.float64))
        return self._finest.apply(np.asarray(u, dtype=np.float64), out)

    def _hierarchy(self) -> "_Multigrid":
        if self._mg is None:
            self._mg = _Multigrid(self.log_field, self._finest)
        return self._mg


def assemble(y: NodalField) -> DiffusionOperator:
    """Build the operator for log-coefficient field y."""
    return DiffusionOperator(y.level, y, _StencilLevel(y.values))


class _Multigrid:
    """Geometric V(1,1) hierarchy down to the 3x3 grid.

    Coarse stencils come from injection of the fine log-coefficients; the
    residual restriction is full weighting scaled for the h^2-row scaling
    (the exact transpose of bilinear prolongation), which keeps coarse
    corrections consistent across levels.
    """

    def __init__(self, y: NodalField, finest: _StencilLevel):
        stacks = [finest]
        values = y.values
        n = y.level.n
        while n > 2:
            values = values[::2, ::2]
            n //= 2
            stacks.append(_StencilLevel(values))
        stacks.reverse()  # index 0 = coarsest (n = 2)
        self.levels = stacks
        self.work = 0

    # -- multigrid components -------------------------------------------

    def _jacobi(self, lv: _StencilLevel, u: np.ndarray, b: np.ndarray) -> None:
        lv.apply(u, lv.tmp)
        np.subtract(b, lv.tmp, out=lv.tmp)
        lv.tmp /= lv.diag
        lv.tmp *= JACOBI_DAMPING
        u += lv.tmp
        self.work += 2 * lv.nodes  # apply + update

    def _residual(self, lv: _StencilLevel, u: np.ndarray, b: np.ndarray) -> None:
        lv.apply(u, lv.r)
        np.subtract(b, lv.r, out=lv.r)
        self.work += 2 * lv.nodes

    @staticmethod
    def _restrict_full(r: np.ndarray, out: np.ndarray) -> None:
        """out = P^T r (full weighting x4), zero coarse boundary."""
        out[...] = 0.0
        cc = r[2:-2:2, 2:-2:2]
        out[1:-1, 1:-1] = (
            cc
            + 0.5
            * (
                r[1:-3:2, 2:-2:2]
                + r[3:-1:2, 2:-2:2]
                + r[2:-2:2, 1:-3:2]
                + r[2:-2:2, 3:-1:2]
            )
            + 0.25
            * (
                r[1:-3:2, 1:-3:2]
                + r[1:-3:2, 3:-1:2]
                + r[3:-1:2, 1:-3:2]
                + r[3:-1:2, 3:-1:2]
            )
        )

    @staticmethod
    def _prolong_add(e: np.ndarray, u: np.ndarray) -> None:
        """u += bilinear interpolation of coarse correction e."""
        nc = e.shape[0] - 1
        u[0::2, 0::2] += e
        u[1::2, 0::2] += 0.5 * (e[:nc, :] + e[1:, :])
        u[0::2, 1::2] += 0.5 * (e[:, :nc] + e[:, 1:])
        u[1::2, 1::2] += 0.25 * (e[:nc, :nc] + e[1:, :nc] + e[:nc, 1:] + e[1:, 1:])

    def _vcycle(self, j: int, b: np.ndarray, u: np.ndarray) -> None:
        """One V(1,1) cycle on level j of the stack; u updated in place."""
        lv = self.levels[j]
        if j == 0:
            # exact solve of the single interior unknown on the 3x3 grid
            u[1, 1] = b[1, 1] / lv.diag[1, 1]
            self.work += lv.nodes
            return
        self._jacobi(lv, u, b)
        self._residual(lv, u, b)
        coarse = self.levels[j - 1]
        self._restrict_full(lv.r, coarse.b)
        self.work += coarse.nodes
        coarse.u[...] = 0.0
        self._vcycle(j - 1, coarse.b, coarse.u)
        self._prolong_add(coarse.u, u)
        self.work += lv.nodes
        self._jacobi(lv, u, b)

    def precondition(self, r: np.ndarray, z: np.ndarray) -> None:
        """z = one V(1,1) cycle applied to r from a zero initial guess."""
        z[...] = 0.0
        self._vcycle(len(self.levels) - 1, r, z)


def solve(
    A: Union[DiffusionOperator, NodalField],
    rhs: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iterations: int = MAX_ITERATIONS,
) -> tuple[NodalField, SolveReport]:
    """Solve A u = rhs by multigrid-preconditioned conjugate gradients.

    Stops when the relative preconditioned residual sqrt(<r,z>/<r0,z0>)
    drops to ``tol``; raises SolverError (with the residual history) if that
    has not happened after ``max_iterations`` iterations.  A zero right-hand
    side returns the zero solution in zero iterations.
    """
    op = A if isinstance(A, DiffusionOperator) else assemble(A)
    mg = op._hierarchy()
    top = mg.levels[-1]
    level = op.level
    b = np.asarray(rhs, dtype=np.float64)
    if b.shape != level.shape:
        raise ValueError(f"rhs shape {b.shape} does not match level {level.shape}")

    mg.work = 0
    x = np.zeros_like(b)
    x[0, :], x[-1, :], x[:, 0], x[:, -1] = b[0, :], b[-1, :], b[:, 0], b[:, -1]
    if not np.any(b):
        return NodalField(level, x), SolveReport(0, 0.0, 0)

    r = np.empty_like(b)
    top.apply(x, r)
    np.subtract(b, r, out=r)
    mg.work += 2 * top.nodes
    z = np.empty_like(b)
    mg.precondition(r, z)
    rz = float(np.vdot(r, z))
    mg.work += top.nodes
    rz0 = rz
    if rz0 <= 0.0:
        return NodalField(level, x), SolveReport(0, 0.0, mg.work)
    p = z.copy()
    Ap = np.empty_like(b)
    history: list[float] = []
    for it in range(1, max_iterations + 1):
        top.apply(p, Ap)
        pAp = float(np.vdot(p, Ap))
        mg.work += 2 * top.nodes
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        mg.work += 2 * top.nodes
        mg.precondition(r, z)
        rz_next = float(np.vdot(r, z))
        mg.work += top.nodes
        rel = float(np.sqrt(max(rz_next, 0.0) / rz0))
        history.append(rel)
        if rel <= tol:
            return NodalField(level, x), SolveReport(it, rel, mg.work)
        beta = rz_next / rz
        p *= beta
        p += z
        mg.work += top.nodes
        rz = rz_next
    raise SolverError(
        f"CG did not reach tol={tol:g} in {max_iterations} iterations "
        f"(last relative residual {history[-1]:.3e})",
        history,
    )


def mass_rhs(f: NodalField) -> np.ndarray:
    """Right-hand side h^2 w_i f_i for the h^2-scaled rows (boundary zeroed).

    The trapezoidal weights w match the lumped inner product, which is what
    makes the discrete adjoint gradient exact.
    """
    h = f.level.h
    out = (h * h) * f.values.copy()
    out[0, :] = 0.0
    out[-1, :] = 0.0
    out[:, 0] = 0.0
    out[:, -1] = 0.0
    return out


def _as_operator(y: Union[NodalField, DiffusionOperator]) -> DiffusionOperator:
    return y if isinstance(y, DiffusionOperator) else assemble(y)


def solve_state(
    y: Union[NodalField, DiffusionOperator],
    z: NodalField,
    tol: float = DEFAULT_TOL,
) -> tuple[NodalField, SolveReport]:
    """State solve: A(y) u = M z with the control as source term."""
    op = _as_operator(y)
    if z.level != op.level:
        raise ValueError("control and coefficient field live on different levels")
    return solve(op, mass_rhs(z), tol=tol)


def solve_adjoint(
    y: Union[NodalField, DiffusionOperator],
    u: NodalField,
    d: NodalField,
    tol: float = DEFAULT_TOL,
) -> tuple[NodalField, SolveReport]:
    """Adjoint solve: A(y) q = M (d - u); the operator is its own adjoint."""
    op = _as_operator(y)
    if u.level != op.level or d.level != op.level:
        raise ValueError("state/target level does not match the operator level")
    return solve(op, mass_rhs(d - u), tol=tol)


def sample_objective(u: NodalField, d: NodalField, z: NodalField, lam: float) -> float:
    """Per-sample objective 0.5 ||u - d||^2 + (lam/2) ||z||^2."""
    mis = u - d
    return 0.5 * inner_l2(mis, mis) + 0.5 * lam * inner_l2(z, z)
