"""Log-log regression utilities and trajectory decay fits."""

import math

import numpy as np
import pytest

from mlsgd import IterationRecord, RateFit, estimate_delta, fit_loglinear


def _record(k, grad_norm, cumulative_cost):
    return IterationRecord(
        k=k,
        J_hat=0.0,
        grad_norm=grad_norm,
        t_k=1.0,
        eps_k=0.0,
        err_sam=0.0,
        err_num=0.0,
        alpha_hat=0.0,
        cumulative_cost=cumulative_cost,
        remaining_T=0.0,
        remaining_Mem=0.0,
        level_M=(3,),
        level_norm_p=(1.0,),
        level_s2=(0.0,),
        level_cost=(1.0,),
    )


class TestFitLoglinear:
    def test_exact_power_law_decay_in_x(self):
        xs = [2.0**-e for e in range(1, 6)]
        ys = [7.0 * x**1.75 for x in xs]
        fit = fit_loglinear(xs, ys, sign=+1)
        assert fit.exponent == pytest.approx(1.75, abs=1e-12)
        assert fit.residual == pytest.approx(0.0, abs=1e-12)
        assert fit.n_points == 5

    def test_exact_growth_with_negative_sign(self):
        # sign = -1 fits y ~ x^(-exponent): growth in x means negative
        # exponent under that convention and vice versa
        xs = [1.0, 2.0, 4.0, 8.0]
        ys = [3.0 * x**2 for x in xs]
        fit = fit_loglinear(xs, ys, sign=-1)
        assert fit.exponent == pytest.approx(-2.0, abs=1e-12)

    def test_two_points_fit_exactly(self):
        fit = fit_loglinear([1.0, 2.0], [1.0, 0.25], sign=+1)
        # y halves twice per doubling of x: slope -2, decay exponent
        # against x (sign +1 measures the power of x itself)
        assert fit.exponent == pytest.approx(-2.0, abs=1e-12)

    def test_intercept_recovers_prefactor(self):
        xs = [0.5, 0.25, 0.125]
        c = 5.0
        ys = [c * x**2 for x in xs]
        fit = fit_loglinear(xs, ys, sign=+1)
        assert 2.0**fit.intercept == pytest.approx(c, rel=1e-12)

    def test_noisy_rate_recovered_within_tolerance(self):
        rng = np.random.default_rng(6)
        xs = [2.0**-e for e in range(1, 8)]
        ys = [x**1.5 * math.exp(0.05 * rng.standard_normal()) for x in xs]
        fit = fit_loglinear(xs, ys, sign=+1)
        assert fit.exponent == pytest.approx(1.5, abs=0.1)

    def test_scale_equivariance(self):
        # multiplying y by a constant shifts the intercept, never the slope
        xs = [1.0, 0.5, 0.25, 0.125]
        ys = [x**0.8 for x in xs]
        a = fit_loglinear(xs, ys, sign=+1)
        b = fit_loglinear(xs, [1e6 * y for y in ys], sign=+1)
        assert a.exponent == pytest.approx(b.exponent, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            fit_loglinear([1.0], [1.0], sign=+1)
        with pytest.raises(ValueError):
            fit_loglinear([1.0, 2.0], [1.0], sign=+1)
        with pytest.raises(ValueError):
            fit_loglinear([1.0, 2.0], [1.0, -1.0], sign=+1)
        with pytest.raises(ValueError):
            fit_loglinear([1.0, 1.0], [1.0, 2.0], sign=+1)  # degenerate xs
        with pytest.raises(ValueError):
            fit_loglinear([1.0, 2.0], [1.0, 2.0], sign=0)

    def test_result_is_frozen(self):
        fit = fit_loglinear([1.0, 2.0], [1.0, 2.0], sign=+1)
        assert isinstance(fit, RateFit)
        with pytest.raises(AttributeError):
            fit.exponent = 0.0


class TestEstimateDelta:
    def test_exact_inverse_sqrt_decay(self):
        # ||g|| = C / sqrt(cost) must fit delta = 0.5 exactly
        recs = [_record(k, 8.0 * (1000.0 * (k + 1)) ** -0.5, 1000.0 * (k + 1))
                for k in range(10)]
        fit = estimate_delta(recs, burn_in_cost=0.0)
        assert fit.exponent == pytest.approx(0.5, abs=1e-12)

    def test_burn_in_excludes_early_records(self):
        # early records follow a different law; burn-in must hide them
        recs = [_record(0, 100.0, 10.0), _record(1, 90.0, 20.0)]
        recs += [_record(k, (100.0 * k) ** -1.0, 100.0 * k) for k in range(2, 8)]
        fit = estimate_delta(recs, burn_in_cost=150.0)
        assert fit.exponent == pytest.approx(1.0, abs=1e-12)

    def test_two_surviving_records_suffice(self):
        recs = [
            _record(0, 50.0, 1.0),
            _record(1, 1.0, 100.0),
            _record(2, 0.5, 400.0),
        ]
        fit = estimate_delta(recs, burn_in_cost=50.0)
        assert fit.n_points == 2
        assert fit.exponent == pytest.approx(0.5, abs=1e-12)

    def test_too_few_records_raise(self):
        recs = [_record(0, 1.0, 10.0), _record(1, 0.5, 20.0)]
        with pytest.raises(ValueError):
            estimate_delta(recs, burn_in_cost=15.0)
