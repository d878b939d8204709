"""Grid hierarchy, nodal fields, quadrature, and transfer operators."""

import math

import numpy as np
import pytest

from mlsgd import (
    AdmissibleBox,
    GridLevel,
    NodalField,
    build_hierarchy,
    field_from_function,
    inner_l2,
    norm_l2,
    project_admissible,
    prolongate,
    prolongate_to,
    restrict,
    zeros,
)


class TestGridLevel:
    def test_basic_geometry(self):
        lv = GridLevel(0, 4)
        assert lv.h == pytest.approx(2.0**-4)
        assert lv.n == 16
        assert lv.shape == (17, 17)
        assert lv.node_count == 17 * 17

    def test_coordinates_span_unit_square(self):
        lv = GridLevel(2, 5)
        x1, x2 = lv.coordinates()
        assert x1.shape == lv.shape and x2.shape == lv.shape
        assert x1.min() == 0.0 and x1.max() == 1.0
        assert x2.min() == 0.0 and x2.max() == 1.0
        # tensor grid with spacing h in both directions
        np.testing.assert_allclose(np.diff(x1[:, 0]), lv.h)
        np.testing.assert_allclose(np.diff(x2[0, :]), lv.h)

    def test_finer_refines_by_two(self):
        lv = GridLevel(1, 4)
        fine = lv.finer()
        assert fine.ell == 2 and fine.exponent == 5
        assert fine.h == pytest.approx(lv.h / 2)

    def test_invalid_levels_rejected(self):
        with pytest.raises(ValueError):
            GridLevel(-1, 4)
        with pytest.raises(ValueError):
            GridLevel(0, 0)
        with pytest.raises(ValueError):
            GridLevel(0, 99)  # node indices would overflow

    def test_build_hierarchy(self):
        levels = build_hierarchy(3, 2)
        assert [lv.ell for lv in levels] == [0, 1, 2]
        assert [lv.exponent for lv in levels] == [3, 4, 5]
        with pytest.raises(ValueError):
            build_hierarchy(3, -1)


class TestNodalField:
    def test_shape_validation(self):
        lv = GridLevel(0, 3)
        with pytest.raises(ValueError):
            NodalField(lv, np.zeros((4, 4)))

    def test_arithmetic(self):
        lv = GridLevel(0, 3)
        rng = np.random.default_rng(7)
        a = NodalField(lv, rng.standard_normal(lv.shape))
        b = NodalField(lv, rng.standard_normal(lv.shape))
        np.testing.assert_allclose((a + b).values, a.values + b.values)
        np.testing.assert_allclose((a - b).values, a.values - b.values)
        np.testing.assert_allclose((a * 2.5).values, 2.5 * a.values)
        np.testing.assert_allclose((-a).values, -a.values)

    def test_mismatched_levels_rejected(self):
        a = zeros(GridLevel(0, 3))
        b = zeros(GridLevel(0, 4))
        with pytest.raises(ValueError):
            _ = a + b

    def test_copy_is_independent(self):
        a = zeros(GridLevel(0, 3))
        c = a.copy()
        c.values[0, 0] = 1.0
        assert a.values[0, 0] == 0.0

    def test_field_from_function(self):
        lv = GridLevel(0, 4)
        f = field_from_function(lv, lambda x1, x2: x1 + 2 * x2)
        x1, x2 = lv.coordinates()
        np.testing.assert_allclose(f.values, x1 + 2 * x2)


class TestQuadrature:
    def test_separable_sine_product_integrates_exactly(self):
        # integral of sin^2(2 pi x1) sin^2(2 pi x2) over the unit square is
        # 1/4, and the trapezoid rule is exact for this integrand on dyadic
        # grids because the aliased cosine terms sum to zero.
        for exponent in (3, 4, 5, 6):
            lv = GridLevel(0, exponent)
            f = field_from_function(
                lv, lambda a, b: np.sin(2 * np.pi * a) * np.sin(2 * np.pi * b)
            )
            assert inner_l2(f, f) == pytest.approx(0.25, abs=2e-3)
            assert abs(inner_l2(f, f) - 0.25) < 1e-12

    def test_constant_field_weights_sum_to_one(self):
        # trapezoid weights over the unit square must integrate 1 to 1.
        lv = GridLevel(0, 5)
        one = field_from_function(lv, lambda a, b: np.ones_like(a))
        assert inner_l2(one, one) == pytest.approx(1.0, rel=1e-14)

    def test_inner_product_is_bilinear_and_symmetric(self):
        lv = GridLevel(0, 4)
        rng = np.random.default_rng(11)
        a = NodalField(lv, rng.standard_normal(lv.shape))
        b = NodalField(lv, rng.standard_normal(lv.shape))
        c = NodalField(lv, rng.standard_normal(lv.shape))
        assert inner_l2(a, b) == pytest.approx(inner_l2(b, a), rel=1e-14)
        assert inner_l2(a + c, b) == pytest.approx(
            inner_l2(a, b) + inner_l2(c, b), rel=1e-12
        )
        assert isinstance(inner_l2(a, b), float)

    def test_norm_consistent_with_inner(self):
        lv = GridLevel(0, 4)
        rng = np.random.default_rng(12)
        a = NodalField(lv, rng.standard_normal(lv.shape))
        assert norm_l2(a) == pytest.approx(math.sqrt(inner_l2(a, a)), rel=1e-14)
        assert norm_l2(zeros(lv)) == 0.0


class TestProjection:
    def test_box_validation(self):
        with pytest.raises(ValueError):
            AdmissibleBox(1.0, -1.0)

    def test_projection_clips_and_is_idempotent(self):
        lv = GridLevel(0, 4)
        rng = np.random.default_rng(3)
        f = NodalField(lv, 5.0 * rng.standard_normal(lv.shape))
        box = AdmissibleBox(-1.0, 2.0)
        p = project_admissible(f, box)
        assert p.values.min() >= -1.0 and p.values.max() <= 2.0
        np.testing.assert_array_equal(
            project_admissible(p, box).values, p.values
        )
        # interior values pass through untouched
        inside = np.abs(f.values) <= 1.0
        np.testing.assert_array_equal(p.values[inside], f.values[inside])

    def test_projection_minimizes_distance(self):
        # nodewise clipping is the metric projection for the weighted l2
        # norm: no admissible field is closer.
        lv = GridLevel(0, 3)
        rng = np.random.default_rng(4)
        f = NodalField(lv, 3.0 * rng.standard_normal(lv.shape))
        box = AdmissibleBox(-1.0, 1.0)
        p = project_admissible(f, box)
        for trial_seed in range(5):
            trng = np.random.default_rng(100 + trial_seed)
            trial = NodalField(
                lv, np.clip(trng.uniform(-1, 1, lv.shape), -1.0, 1.0)
            )
            assert norm_l2(f - p) <= norm_l2(f - trial) + 1e-14


class TestTransfers:
    def test_prolongation_reproduces_bilinear_functions(self):
        coarse = GridLevel(0, 3)
        fine = GridLevel(1, 4)
        f = field_from_function(coarse, lambda a, b: 2.0 + 3.0 * a - b + 0.5 * a * b)
        exact = field_from_function(fine, lambda a, b: 2.0 + 3.0 * a - b + 0.5 * a * b)
        np.testing.assert_allclose(prolongate(f, fine).values, exact.values, atol=1e-14)

    def test_prolongation_matches_at_coincident_nodes(self):
        coarse = GridLevel(0, 3)
        fine = GridLevel(1, 4)
        rng = np.random.default_rng(8)
        f = NodalField(coarse, rng.standard_normal(coarse.shape))
        pf = prolongate(f, fine)
        np.testing.assert_array_equal(pf.values[::2, ::2], f.values)

    def test_restrict_after_prolongate_is_identity(self):
        coarse = GridLevel(0, 4)
        fine = GridLevel(1, 5)
        rng = np.random.default_rng(9)
        for _ in range(3):
            f = NodalField(coarse, rng.standard_normal(coarse.shape))
            back = restrict(prolongate(f, fine), coarse)
            np.testing.assert_array_equal(back.values, f.values)

    def test_restrict_is_injection(self):
        coarse = GridLevel(0, 3)
        fine = GridLevel(1, 4)
        rng = np.random.default_rng(10)
        f = NodalField(fine, rng.standard_normal(fine.shape))
        rf = restrict(f, coarse)
        np.testing.assert_array_equal(rf.values, f.values[::2, ::2])

    def test_gap_zero_transfers_copy_values(self):
        # same-exponent transfer relabels the level and preserves the bits;
        # the multilevel drivers rely on this for the single-level case.
        src = GridLevel(1, 4)
        dst = GridLevel(0, 4)
        rng = np.random.default_rng(13)
        f = NodalField(src, rng.standard_normal(src.shape))
        r = restrict(f, dst)
        assert r.level == dst
        np.testing.assert_array_equal(r.values, f.values)
        p = prolongate_to(NodalField(dst, f.values.copy()), src)
        assert p.level == src
        np.testing.assert_array_equal(p.values, f.values)

    def test_prolongate_to_composes_over_gaps(self):
        base = GridLevel(0, 3)
        target = GridLevel(2, 5)
        f = field_from_function(base, lambda a, b: 1.0 + a - 2.0 * b)
        exact = field_from_function(target, lambda a, b: 1.0 + a - 2.0 * b)
        np.testing.assert_allclose(
            prolongate_to(f, target).values, exact.values, atol=1e-14
        )

    def test_invalid_transfer_targets_rejected(self):
        f = zeros(GridLevel(1, 4))
        with pytest.raises(ValueError):
            prolongate(f, GridLevel(0, 3))  # prolongation must go finer
        with pytest.raises(ValueError):
            restrict(f, GridLevel(2, 5))  # restriction must go coarser
