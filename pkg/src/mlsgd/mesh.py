"""Nested uniform grids on the unit square and the operations that couple them.

The computational domain is D = (0, 1)^2, discretized by uniform tensor grids
with mesh width h = 2^-e.  A hierarchy is a list of such grids with the width
halved from one level to the next, so every coarse node coincides with a fine
node.  Scalar unknowns live on nodes (``NodalField``); the discrete L2 inner
product uses mass-lumped trapezoidal weights, which makes nodal clamping an
exact metric projection onto box constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Largest exponent such that (2^e + 1)^2 node indices stay below 2^31.
MAX_EXPONENT = 15


@dataclass(frozen=True)
class GridLevel:
    """One uniform grid in a nested hierarchy.

    Attributes:
        ell: position in the hierarchy (0 = coarsest member).
        exponent: e such that the mesh width is h = 2^-e.
    """

    ell: int
    exponent: int

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError(f"level index must be >= 0, got {self.ell}")
        if self.exponent < 1:
            raise ValueError(f"grid exponent must be >= 1, got {self.exponent}")
        if self.exponent > MAX_EXPONENT:
            raise ValueError(
                f"grid exponent {self.exponent} exceeds {MAX_EXPONENT}; "
                f"node indices would overflow 32-bit range"
            )

    @property
    def h(self) -> float:
        return 2.0 ** (-self.exponent)

    @property
    def n(self) -> int:
        """Cells per side (n = 1/h)."""
        return 2**self.exponent

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n + 1, self.n + 1)

    @property
    def node_count(self) -> int:
        return (self.n + 1) ** 2

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodal coordinate arrays (x1, x2), each of shape ``self.shape``."""
        x = np.linspace(0.0, 1.0, self.n + 1)
        return np.meshgrid(x, x, indexing="ij")

    def finer(self) -> "GridLevel":
        """The next grid in the hierarchy (mesh width halved)."""
        return GridLevel(self.ell + 1, self.exponent + 1)


def build_hierarchy(e0: int, L: int) -> list[GridLevel]:
    """Build grids ell = 0..L with widths h_ell = 2^-(e0 + ell).

    Args:
        e0: exponent of the coarsest grid (>= 2 so the coarsest grid still
            has interior structure).
        L: index of the finest level (>= 0).
    """
    if e0 < 2:
        raise ValueError(f"coarsest exponent must be >= 2, got {e0}")
    if L < 0:
        raise ValueError(f"finest level index must be >= 0, got {L}")
    if e0 + L > MAX_EXPONENT:
        raise ValueError(
            f"e0 + L = {e0 + L} exceeds the maximum exponent {MAX_EXPONENT}"
        )
    return [GridLevel(ell, e0 + ell) for ell in range(L + 1)]


@dataclass
class NodalField:
    """Scalar nodal values on one grid level.

    ``values`` is a C-contiguous (n+1, n+1) float array: entry [i, j] is the
    value at x = (i*h, j*h), i.e. row-major over the (n+1)^2 nodes.
    """

    level: GridLevel
    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if arr.shape != self.level.shape:
            if arr.size == self.level.node_count:
                arr = arr.reshape(self.level.shape)
            else:
                raise ValueError(
                    f"field has {arr.size} values, level {self.level.ell} "
                    f"needs {self.level.node_count}"
                )
        self.values = arr

    def copy(self) -> "NodalField":
        return NodalField(self.level, self.values.copy())

    # Small amount of arithmetic sugar so estimator code reads like the math.
    def _check_level(self, other: "NodalField") -> None:
        if other.level != self.level:
            raise ValueError(
                f"field levels differ: {self.level.ell} vs {other.level.ell}"
            )

    def __add__(self, other: "NodalField") -> "NodalField":
        self._check_level(other)
        return NodalField(self.level, self.values + other.values)

    def __sub__(self, other: "NodalField") -> "NodalField":
        self._check_level(other)
        return NodalField(self.level, self.values - other.values)

    def __mul__(self, scalar: float) -> "NodalField":
        return NodalField(self.level, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "NodalField":
        return NodalField(self.level, -self.values)


def zeros(level: GridLevel) -> NodalField:
    return NodalField(level, np.zeros(level.shape))


def field_from_function(
    level: GridLevel, f: Callable[[np.ndarray, np.ndarray], np.ndarray]
) -> NodalField:
    """Evaluate ``f(x1, x2)`` on the nodes of ``level``."""
    x1, x2 = level.coordinates()
    return NodalField(level, np.asarray(f(x1, x2), dtype=np.float64))


@dataclass(frozen=True)
class AdmissibleBox:
    """Box constraints applied nodewise to the control."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(
                f"box requires lower < upper, got [{self.lower}, {self.upper}]"
            )


def project_admissible(field: NodalField, box: AdmissibleBox) -> NodalField:
    """Nodewise clamp onto the box.

    With the lumped inner product below this is the exact metric projection
    onto the admissible set (the mass matrix is diagonal with positive
    weights, so the projection decouples node by node).
    """
    return NodalField(field.level, np.clip(field.values, box.lower, box.upper))


def _weights(level: GridLevel) -> np.ndarray:
    """Trapezoidal lumped-mass weights: 1 interior, 1/2 edges, 1/4 corners."""
    w = np.ones(level.shape)
    w[0, :] *= 0.5
    w[-1, :] *= 0.5
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    return w


def inner_l2(a: NodalField, b: NodalField) -> float:
    """Mass-lumped L2(D) inner product h^2 * sum_i w_i a_i b_i."""
    if a.level != b.level:
        raise ValueError(
            f"inner product needs matching levels, got {a.level.ell} and {b.level.ell}"
        )
    h = a.level.h
    return float(h * h * np.sum(_weights(a.level) * a.values * b.values))


def norm_l2(a: NodalField) -> float:
    return float(np.sqrt(max(inner_l2(a, a), 0.0)))


def prolongate(field: NodalField, fine_level: GridLevel) -> NodalField:
    """Bilinear interpolation one level up (coincident nodes copied).

    Coincident fine nodes take the coarse value; edge midpoints average the
    two adjacent coarse nodes; cell centers average all four corners.  Affine
    functions are reproduced exactly, and a zero boundary ring stays zero.
    """
    coarse = field.level
    if fine_level.exponent != coarse.exponent + 1:
        raise ValueError(
            f"prolongation goes one level up: field exponent {coarse.exponent}, "
            f"target exponent {fine_level.exponent}"
        )
    c = field.values
    n = coarse.n
    out = np.empty(fine_level.shape)
    out[0::2, 0::2] = c
    out[1::2, 0::2] = 0.5 * (c[: n, :] + c[1:, :])
    out[0::2, 1::2] = 0.5 * (c[:, : n] + c[:, 1:])
    out[1::2, 1::2] = 0.25 * (c[: n, : n] + c[1:, : n] + c[: n, 1:] + c[1:, 1:])
    return NodalField(fine_level, out)


def prolongate_to(field: NodalField, target: GridLevel) -> NodalField:
    """Compose one-level prolongations up to ``target`` (identity if equal)."""
    if target.exponent < field.level.exponent:
        raise ValueError("prolongate_to target must not be coarser than the field")
    out = field
    while out.level.exponent < target.exponent:
        step = GridLevel(out.level.ell + 1, out.level.exponent + 1)
        out = prolongate(out, step)
    if out.level != target:
        out = NodalField(target, out.values)
    return out


def restrict(field: NodalField, coarse_level: GridLevel) -> NodalField:
    """Injection at coincident nodes (left inverse of ``prolongate``)."""
    fine = field.level
    gap = fine.exponent - coarse_level.exponent
    if gap < 0:
        raise ValueError(
            f"restriction goes down: field exponent {fine.exponent}, "
            f"target exponent {coarse_level.exponent}"
        )
    if gap == 0:
        return NodalField(coarse_level, field.values.copy())
    s = 2**gap
    return NodalField(coarse_level, field.values[::s, ::s].copy())
