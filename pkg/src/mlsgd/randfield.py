"""Stationary Gaussian random fields with Matern covariance on grid levels.

Sampling uses circulant embedding: the covariance restricted to a periodic
padding of the grid is block-circulant, so its eigenvalues come from a single
2D FFT of the covariance base row and exact samples cost one inverse FFT.
Slightly negative eigenvalues (the embedding is only guaranteed nonnegative
for large enough padding) are clipped; the clipped mass is gated.

Seeds follow a splittable-counter scheme: every sample is keyed by
``mix_seed(root_seed, k, ell, m)`` so realizations are reproducible and
independent of evaluation order and worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mesh import GridLevel, NodalField, restrict, zeros

_MASK64 = (1 << 64) - 1
_EULER_GAMMA = 0.57721566490153286060651209008240243


# ---------------------------------------------------------------------------
# Modified Bessel function of the second kind, integer and half-integer order
# ---------------------------------------------------------------------------

def _bessel_k01_series(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """K_0 and K_1 by the ascending series (accurate for x <= ~9).

    K_0(x) = -(ln(x/2) + gamma) I_0(x) + sum_{k>=1} psi-corrections,
    with the standard psi(k+1) = -gamma + H_k digamma values; K_1 follows
    from its own series.  Terms are accumulated until they stop mattering
    at double precision.
    """
    t = 0.25 * x * x
    lg = np.log(0.5 * x)

    # I_0 / I_1 series terms and the psi-weighted companions, built together.
    term0 = np.ones_like(x)           # t^k / (k!)^2, k = 0
    term1 = 0.5 * x                   # (x/2) t^k / (k! (k+1)!), k = 0
    i0 = term0.copy()
    i1 = term1.copy()
    k0 = np.zeros_like(x)             # sum psi(k+1) t^k / (k!)^2
    k1 = np.zeros_like(x)             # sum [psi(k+1)+psi(k+2)] ... for K_1
    psi1 = -_EULER_GAMMA              # psi(k+1) at k = 0
    psi2 = 1.0 - _EULER_GAMMA         # psi(k+2) at k = 0
    k0 += psi1 * term0
    k1 += (psi1 + psi2) * term1
    for k in range(1, 80):
        term0 = term0 * t / (k * k)
        term1 = term1 * t / (k * (k + 1))
        psi1 += 1.0 / k
        psi2 += 1.0 / (k + 1)
        i0 += term0
        i1 += term1
        k0 += psi1 * term0
        k1 += (psi1 + psi2) * term1
        if np.all(term0 <= 1e-18 * np.abs(i0)):
            break
    K0 = -lg * i0 + k0
    K1 = 1.0 / x + lg * i1 - 0.5 * k1
    return K0, K1


def _bessel_k01_asymptotic(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """K_0 and K_1 by the large-argument expansion (x > ~9).

    K_n(x) ~ sqrt(pi/(2x)) e^-x sum_k a_k with a_0 = 1,
    a_k = a_{k-1} (mu - (2k-1)^2)/(8 k x), mu = 4 n^2; the series is
    truncated at its smallest term (optimal truncation).
    """
    pref = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x)
    out = []
    for mu in (0.0, 4.0):
        term = np.ones_like(x)
        total = term.copy()
        active = np.ones_like(x, dtype=bool)
        for k in range(1, 40):
            nxt = term * (mu - (2 * k - 1) ** 2) / (8.0 * k * x)
            # stop where terms start growing again (asymptotic divergence)
            active &= np.abs(nxt) < np.abs(term)
            if not np.any(active):
                break
            total = np.where(active, total + nxt, total)
            term = np.where(active, nxt, term)
        out.append(pref * total)
    return out[0], out[1]


def _bessel_k_int(order: int, x: np.ndarray) -> np.ndarray:
    """K_n for integer n >= 0 via series/asymptotic split plus recurrence."""
    small = x <= 9.0
    K0 = np.empty_like(x)
    K1 = np.empty_like(x)
    if np.any(small):
        K0[small], K1[small] = _bessel_k01_series(x[small])
    if np.any(~small):
        K0[~small], K1[~small] = _bessel_k01_asymptotic(x[~small])
    if order == 0:
        return K0
    if order == 1:
        return K1
    # upward recurrence K_{n+1} = K_{n-1} + (2n/x) K_n (stable for K)
    km, kc = K0, K1
    for n in range(1, order):
        km, kc = kc, km + (2.0 * n / x) * kc
    return kc


def _bessel_k_half(order_twice: int, x: np.ndarray) -> np.ndarray:
    """K_{m+1/2} from the closed form K_{1/2} and upward recurrence."""
    k_half = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x)
    km, kc = k_half.copy(), k_half.copy()  # K_{-1/2} = K_{1/2}
    nu = 0.5
    m = (order_twice - 1) // 2
    for _ in range(m):
        km, kc = kc, km + (2.0 * nu / x) * kc
        nu += 1.0
    return kc


def bessel_k(order: float, x) -> np.ndarray:
    """Modified Bessel function K_order(x) for integer or half-integer order.

    Vectorized over ``x``; x = 0 maps to +inf (the function diverges there).
    """
    twice = round(2 * order)
    if twice < 0 or abs(2 * order - twice) > 1e-12:
        raise ValueError(
            f"order must be a nonnegative integer or half-integer, got {order}"
        )
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < 0):
        raise ValueError("bessel_k requires x >= 0")
    out = np.full(arr.shape, np.inf)
    pos = arr > 0
    if np.any(pos):
        xp = arr[pos]
        if twice % 2 == 0:
            out[pos] = _bessel_k_int(twice // 2, xp)
        else:
            out[pos] = _bessel_k_half(twice, xp)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Matern covariance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaternParams:
    """Matern covariance parameters (variance, smoothness, correlation length).

    The smoothness must be a positive integer or half-integer, the orders for
    which the local Bessel evaluation is exact.
    """

    sigma2: float = 1.5
    nu: float = 1.0
    lambda_kappa: float = 0.1

    def __post_init__(self):
        if self.sigma2 <= 0 or self.nu <= 0 or self.lambda_kappa <= 0:
            raise ValueError("Matern parameters must all be positive")
        twice = round(2 * self.nu)
        if abs(2 * self.nu - twice) > 1e-12:
            raise ValueError(
                f"smoothness nu = {self.nu} unsupported: must be an integer "
                f"or half-integer"
            )

    @property
    def kappa(self) -> float:
        return math.sqrt(2.0 * self.nu) / self.lambda_kappa


def matern_cov(r, params: MaternParams) -> np.ndarray:
    """Covariance sigma2/(2^(nu-1) Gamma(nu)) (kappa r)^nu K_nu(kappa r).

    Vectorized over distances ``r >= 0``; the removable singularity at r = 0
    evaluates to sigma2.
    """
    arr = np.asarray(r, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr < 0):
        raise ValueError("distances must be nonnegative")
    out = np.full(arr.shape, params.sigma2)
    pos = arr > 0
    if np.any(pos):
        x = params.kappa * arr[pos]
        scale = params.sigma2 / (2.0 ** (params.nu - 1.0) * math.gamma(params.nu))
        out[pos] = scale * x**params.nu * bessel_k(params.nu, x)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Circulant embedding
# ---------------------------------------------------------------------------

class EmbeddingError(RuntimeError):
    """Raised when the clipped spectral mass exceeds its gate."""


CLIP_GATE = 1e-3


@dataclass
class EmbeddingPlan:
    """Precomputed spectral data for sampling one grid level.

    ``spectrum`` holds the (clipped, nonnegative) eigenvalues of the padded
    block-circulant covariance, shape (padded_size, padded_size).
    """

    level: GridLevel
    params: MaternParams
    padded_size: int
    spectrum: np.ndarray
    clipped_mass: float
    sqrt_spectrum: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.sqrt_spectrum is None:
            self.sqrt_spectrum = np.sqrt(self.spectrum)


def _next_pow2(m: int) -> int:
    return 1 << (m - 1).bit_length()


def _embedding_attempt(
    level: GridLevel, params: MaternParams, padded: int
) -> tuple[np.ndarray, float, float]:
    idx = np.arange(padded)
    wrap = np.minimum(idx, padded - idx) * level.h
    r = np.sqrt(wrap[:, None] ** 2 + wrap[None, :] ** 2)
    base = matern_cov(r, params)
    lam = np.fft.fft2(base).real
    clipped = float(np.sum(np.maximum(-lam, 0.0)))
    spectrum = np.maximum(lam, 0.0)
    return spectrum, clipped, float(np.sum(spectrum))


def build_embedding(
    level: GridLevel, params: MaternParams, padded_size: Optional[int] = None
) -> EmbeddingPlan:
    """Build the sampling plan for ``level``.

    Default padding doubles the per-side node count and rounds up to a power
    of two; if the clipped-mass gate fails the padding doubles again, twice,
    before giving up with advice to enlarge it.
    """
    n = level.n
    if padded_size is not None:
        if padded_size & (padded_size - 1) or padded_size < 2 * n:
            raise ValueError(
                f"padded_size must be a power of two >= {2 * n}, got {padded_size}"
            )
        candidates = [padded_size]
    else:
        base = _next_pow2(2 * (n + 1))
        candidates = [base, 2 * base, 4 * base]
    last_ratio = None
    for padded in candidates:
        spectrum, clipped, total = _embedding_attempt(level, params, padded)
        if total > 0 and clipped <= CLIP_GATE * total:
            return EmbeddingPlan(level, params, padded, spectrum, clipped)
        last_ratio = clipped / total if total > 0 else math.inf
    raise EmbeddingError(
        f"circulant embedding failed at padding {candidates[-1]} "
        f"(clipped mass ratio {last_ratio:.3e} > {CLIP_GATE:.0e}); "
        f"increase padded_size or the correlation length resolution"
    )


def sample_field(plan: EmbeddingPlan, seed: int) -> NodalField:
    """One realization on ``plan.level``, a deterministic function of the seed.

    Two independent standard normal arrays form complex spectral noise; the
    scaled inverse FFT's real part restricted to the grid window has exactly
    the target covariance (up to the clipped spectral mass).
    """
    P = plan.padded_size
    rng = np.random.Generator(np.random.Philox(key=seed & _MASK64))
    noise = rng.standard_normal((2, P, P))
    z = noise[0] + 1j * noise[1]
    w = np.fft.ifft2(plan.sqrt_spectrum * z) * P
    n = plan.level.n
    return NodalField(plan.level, np.ascontiguousarray(w.real[: n + 1, : n + 1]))


def sample_pair(
    plan: EmbeddingPlan, seed: int
) -> tuple[NodalField, Optional[NodalField]]:
    """Fine realization plus its injection to the next coarser level.

    Both fields come from the same draw, which is what couples the level-pair
    estimators.  At the coarsest level the coarse member is None.
    """
    fine = sample_field(plan, seed)
    lvl = plan.level
    if lvl.ell == 0:
        return fine, None
    coarse_level = GridLevel(lvl.ell - 1, lvl.exponent - 1)
    return fine, restrict(fine, coarse_level)


# ---------------------------------------------------------------------------
# Seed schedule
# ---------------------------------------------------------------------------

def splitmix64(state: int) -> int:
    """One step of the standard splitmix64 output mix."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix_seed(root_seed: int, k: int, ell: int, m: int) -> int:
    """Per-sample seed from (root, iteration, level, sample index).

    A chained splitmix64 hash: collision-free in practice over the index
    ranges that occur, and independent of evaluation order by construction.
    """
    s = root_seed & _MASK64
    for v in (k, ell, m):
        s = splitmix64(s ^ (v & _MASK64))
    return s


# ---------------------------------------------------------------------------
# Sampler facade used by the estimators
# ---------------------------------------------------------------------------

class GrfSampler:
    """Hands out per-(iteration, level, sample) realizations.

    Modes:
        independent: each level pair draws at its own fine level; the seed
            depends on (k, ell, m).  This is the production mode.
        shared-finest: all levels inject one draw made at ``finest_ell``;
            the seed ignores the level slot, so sample m sees the same
            realization on every level (telescoping cancels exactly).
        zero: the log-coefficient field is identically zero (deterministic
            test hook; the diffusion coefficient becomes 1).
    """

    MODES = ("independent", "shared-finest", "zero")

    def __init__(
        self,
        params: MaternParams,
        e0: int,
        mode: str = "independent",
        finest_ell: Optional[int] = None,
        padded_size: Optional[int] = None,
    ):
        if mode not in self.MODES:
            raise ValueError(f"unknown sampler mode {mode!r}; one of {self.MODES}")
        if mode == "shared-finest" and finest_ell is None:
            raise ValueError("shared-finest mode needs finest_ell")
        self.params = params
        self.e0 = e0
        self.mode = mode
        self.finest_ell = finest_ell
        self.padded_size = padded_size
        self._plans: dict[int, EmbeddingPlan] = {}

    def level(self, ell: int) -> GridLevel:
        return GridLevel(ell, self.e0 + ell)

    def plan(self, ell: int) -> EmbeddingPlan:
        if ell not in self._plans:
            self._plans[ell] = build_embedding(
                self.level(ell), self.params, self.padded_size
            )
        return self._plans[ell]

    def prepare(self, ells) -> None:
        """Build plans up front (so worker threads never race on the cache)."""
        if self.mode == "zero":
            return
        if self.mode == "shared-finest":
            self.plan(self.finest_ell)
            return
        for ell in ells:
            self.plan(ell)

    def realization(self, ell: int, k: int, m: int, root_seed: int) -> NodalField:
        if self.mode == "zero":
            return zeros(self.level(ell))
        if self.mode == "shared-finest":
            seed = mix_seed(root_seed, k, 0, m)
            fine = sample_field(self.plan(self.finest_ell), seed)
            return restrict(fine, self.level(ell))
        seed = mix_seed(root_seed, k, ell, m)
        return sample_field(self.plan(ell), seed)

    def realization_pair(
        self, ell: int, k: int, m: int, root_seed: int
    ) -> tuple[NodalField, Optional[NodalField]]:
        if ell == 0:
            return self.realization(0, k, m, root_seed), None
        if self.mode == "zero":
            return zeros(self.level(ell)), zeros(self.level(ell - 1))
        if self.mode == "shared-finest":
            seed = mix_seed(root_seed, k, 0, m)
            fine = sample_field(self.plan(self.finest_ell), seed)
            return (
                restrict(fine, self.level(ell)),
                restrict(fine, self.level(ell - 1)),
            )
        seed = mix_seed(root_seed, k, ell, m)
        return sample_pair(self.plan(ell), seed)
