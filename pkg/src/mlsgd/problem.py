"""Problem definition shared by the estimators and optimizers.

Bundles the ingredients of the tracking-type control problem on the unit
square — target state, regularization weight, admissible box — together
with the experiment wiring every estimation call needs: grid hierarchy,
random-field sampler, worker pool size, cost accounting mode, and solver
tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .mesh import AdmissibleBox, GridLevel, NodalField, field_from_function, inner_l2
from .randfield import GrfSampler, MaternParams

COST_MODES = ("work_units", "seconds")


def default_target(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Reference target state: sin(2*pi*x1) * sin(2*pi*x2)."""
    return np.sin(2.0 * np.pi * x1) * np.sin(2.0 * np.pi * x2)


@dataclass(frozen=True)
class Hyperparams:
    """Optimization constants of the control problem.

    lam     regularization weight in front of 0.5*||z||^2
    eta     contraction factor for the error-target schedule, in (0, 1]
    theta   split of the squared error target between sampling and
            discretization, in (0, 1)
    box     admissible pointwise bounds for the control
    target  callable (x1, x2) -> target state values
    """

    lam: float = 1e-8
    eta: float = 0.9
    theta: float = 0.5
    box: AdmissibleBox = field(default_factory=lambda: AdmissibleBox(-1000.0, 1000.0))
    target: Callable[[np.ndarray, np.ndarray], np.ndarray] = default_target

    def __post_init__(self) -> None:
        if not self.lam >= 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")


def regularization(hp: Hyperparams, z: NodalField) -> float:
    """The control penalty 0.5 * lam * ||z||^2 (shared by all objectives)."""
    return 0.5 * hp.lam * inner_l2(z, z)


class ProblemSetup:
    """Everything an estimation batch needs besides the control iterate.

    The grid hierarchy is addressed by level index: level ``ell`` has mesh
    exponent ``e0 + ell``.  Target-state fields are cached per level.
    """

    def __init__(
        self,
        e0: int = 4,
        hp: Optional[Hyperparams] = None,
        matern: Optional[MaternParams] = None,
        grf_mode: str = "independent",
        finest_ell: Optional[int] = None,
        workers: int = 1,
        cost_mode: str = "work_units",
        solver_tol: float = 1e-8,
        padded_size: Optional[int] = None,
    ):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        if cost_mode not in COST_MODES:
            raise ValueError(f"cost_mode must be one of {COST_MODES}, got {cost_mode!r}")
        self.e0 = int(e0)
        self.hp = hp if hp is not None else Hyperparams()
        self.matern = matern if matern is not None else MaternParams()
        self.sampler = GrfSampler(
            self.matern, self.e0, mode=grf_mode, finest_ell=finest_ell,
            padded_size=padded_size,
        )
        self.workers = int(workers)
        self.cost_mode = cost_mode
        self.solver_tol = float(solver_tol)
        self._targets: dict[int, NodalField] = {}

    def level(self, ell: int) -> GridLevel:
        return GridLevel(ell, self.e0 + ell)

    def target_field(self, ell: int) -> NodalField:
        """Target state sampled on level ``ell`` (cached)."""
        if ell not in self._targets:
            self._targets[ell] = field_from_function(self.level(ell), self.hp.target)
        return self._targets[ell]

    def prepare_levels(self, ells) -> None:
        """Pre-build samplers and target caches before parallel work."""
        self.sampler.prepare(ells)
        for ell in ells:
            self.target_field(ell)
