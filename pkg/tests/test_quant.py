import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqrot.errors import (
    EmptyCalibrationError,
    GroupDoesNotDivideError,
    InvalidSpecError,
    ShapeMismatchError,
)
from seqrot.quant import (
    DEFAULT_MSE_GRID,
    METRIC_MAX_ABS,
    METRIC_MSE,
    METRIC_PROXY,
    CalibrationHessian,
    Clip,
    QuantSpec,
    dequantize,
    gptq_quantize,
    hessian_from_calibration,
    mse_clip_search,
    proxy_objective,
    quant_error,
    round_half_away,
    rtn_quantize,
)


def rt(w, spec):
    return dequantize(rtn_quantize(np.asarray(w, dtype=np.float64), spec))


class TestRounding:
    def test_half_away_from_zero(self):
        x = np.array([0.5, 1.5, 2.5, -0.5, -1.5, -2.5, 0.49, -0.49])
        assert round_half_away(x).tolist() == [1, 2, 3, -1, -2, -3, 0, -0]


class TestSpecValidation:
    def test_bits_range(self):
        for bits in (1, 0, 9):
            with pytest.raises(InvalidSpecError):
                QuantSpec(bits=bits)

    def test_clip_validation(self):
        with pytest.raises(InvalidSpecError):
            QuantSpec(bits=4, clip=Clip.fixed(0.0))
        with pytest.raises(InvalidSpecError):
            QuantSpec(bits=4, clip=Clip.fixed(1.5))
        with pytest.raises(InvalidSpecError):
            QuantSpec(bits=4, clip=Clip.mse(grid=()))

    def test_group_must_divide(self):
        with pytest.raises(GroupDoesNotDivideError):
            rtn_quantize(np.zeros((2, 6)), QuantSpec(bits=4, group_size=4))


class TestRtn:
    def test_lattice_asymmetric(self):
        spec = QuantSpec(bits=2, group_size=4, symmetric=False)
        q = rtn_quantize(np.array([[0.0, 1.0, 2.0, 3.0]]), spec)
        assert q.scales[0, 0] == 1.0
        assert q.zero_points[0, 0] == 0
        assert q.codes.tolist() == [[0, 1, 2, 3]]
        assert dequantize(q).tolist() == [[0.0, 1.0, 2.0, 3.0]]

    def test_symmetric_hand_rounded(self):
        spec = QuantSpec(bits=2, group_size=4, symmetric=True)
        q = rtn_quantize(np.array([[-3.0, -1.0, 1.0, 3.0]]), spec)
        assert q.scales[0, 0] == 3.0
        assert q.zero_points is None
        assert q.codes.tolist() == [[-1, 0, 0, 1]]
        assert dequantize(q).tolist() == [[-3.0, 0.0, 0.0, 3.0]]

    def test_mse_clip_prefers_full_range_for_single_spike(self):
        spec = QuantSpec(bits=2, group_size=4, clip=Clip.mse())
        q = rtn_quantize(np.array([[0.0, 0.0, 0.0, 10.0]]), spec)
        err = float(((dequantize(q) - [0.0, 0.0, 0.0, 10.0]) ** 2).sum())
        # brute-force every grid ratio independently: 1.0 is lattice-exact here
        ratio, best = mse_clip_search(np.array([0.0, 0.0, 0.0, 10.0]), spec)
        assert ratio == 1.0
        assert err <= best + 1e-24

    def test_degenerate_groups_exact(self):
        spec = QuantSpec(bits=2, group_size=4)
        for c in (0.0, 0.3, -2.7, 5.0):
            w = np.full((2, 4), c)
            q = rtn_quantize(w, spec)
            assert np.array_equal(dequantize(q), w), c
        spec_s = QuantSpec(bits=2, group_size=4, symmetric=True)
        assert np.array_equal(rt(np.zeros((1, 4)), spec_s), np.zeros((1, 4)))

    def test_per_channel_sentinel(self):
        spec = QuantSpec(bits=4, group_size=None)
        q = rtn_quantize(np.arange(12.0).reshape(3, 4), spec)
        assert q.scales.shape == (3, 1)

    def test_codes_within_range(self):
        rng = np.random.default_rng(0)
        for symmetric in (False, True):
            for bits in (2, 3, 8):
                spec = QuantSpec(bits=bits, group_size=8, symmetric=symmetric)
                q = rtn_quantize(rng.standard_normal((16, 32)) * 10, spec)
                assert q.codes.min() >= spec.qmin
                assert q.codes.max() <= spec.qmax

    def test_error_bound_unclamped(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((8, 64))
        spec = QuantSpec(bits=3, group_size=16)
        q = rtn_quantize(w, spec)
        w_hat = dequantize(q)
        scales = np.repeat(q.scales, 16, axis=1)
        zeros = np.repeat(q.zero_points, 16, axis=1)
        # recompute which elements were clamped, independently of the quantizer
        raw = round_half_away(w / scales) + zeros
        clamped = (raw < spec.qmin) | (raw > spec.qmax)
        err = np.abs(w - w_hat)
        assert np.all(err[~clamped] <= scales[~clamped] / 2 + 1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal((8, 32))
        spec = QuantSpec(bits=2, group_size=8, clip=Clip.mse())
        a = rtn_quantize(w, spec)
        b = rtn_quantize(w.copy(), spec)
        assert np.array_equal(a.codes, b.codes)
        assert np.array_equal(a.scales, b.scales)
        assert np.array_equal(a.zero_points, b.zero_points)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 8), st.booleans(), st.integers(0, 2 ** 32 - 1))
    def test_code_range_property(self, bits, symmetric, seed):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((4, 16)) * rng.uniform(0.1, 50)
        spec = QuantSpec(bits=bits, group_size=4, symmetric=symmetric)
        q = rtn_quantize(w, spec)
        assert q.codes.min() >= spec.qmin
        assert q.codes.max() <= spec.qmax

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
    def test_lattice_exact_round_trip(self, bits, seed):
        # groups whose values sit on a full-span code lattice reproduce exactly
        rng = np.random.default_rng(seed)
        spec = QuantSpec(bits=bits, group_size=8, symmetric=False)
        scale = float(rng.integers(1, 64)) / 16.0   # dyadic, so scale recovery is exact
        codes = rng.integers(spec.qmin, spec.qmax + 1, size=(3, 32))
        codes[:, ::8] = spec.qmin   # force full span in every group
        codes[:, 7::8] = spec.qmax
        w = codes.astype(np.float64) * scale
        assert np.array_equal(dequantize(rtn_quantize(w, spec)), w)


class TestMseClipSearch:
    def test_lattice_exact(self):
        spec = QuantSpec(bits=2, group_size=4)
        assert mse_clip_search(np.array([0.0, 1.0, 2.0, 3.0]), spec) == (1.0, 0.0)

    def test_all_zero_group(self):
        spec = QuantSpec(bits=2, group_size=4)
        assert mse_clip_search(np.zeros(4), spec) == (1.0, 0.0)

    def test_equals_exhaustive_evaluation(self):
        rng = np.random.default_rng(11)
        spec = QuantSpec(bits=2, group_size=128)
        group = rng.standard_normal(128)
        ratio, err = mse_clip_search(group, spec)
        # independent re-evaluation: quantize with each fixed ratio directly
        errs = {}
        for r in DEFAULT_MSE_GRID:
            s = QuantSpec(bits=2, group_size=128, clip=Clip.fixed(r))
            errs[r] = float(((rt(group.reshape(1, -1), s) - group) ** 2).sum())
        best = min(errs.values())
        assert err == pytest.approx(best, abs=1e-18)
        assert errs[ratio] == pytest.approx(best, abs=1e-18)

    def test_monotone_vs_no_clip(self):
        rng = np.random.default_rng(5)
        spec = QuantSpec(bits=2, group_size=64)
        for _ in range(20):
            group = rng.standard_t(4, size=64)
            _, err = mse_clip_search(group, spec)
            s1 = QuantSpec(bits=2, group_size=64, clip=Clip.fixed(1.0))
            full = float(((rt(group.reshape(1, -1), s1) - group) ** 2).sum())
            assert err <= full + 1e-15


class TestHessian:
    def test_one_hot(self):
        x = np.zeros((1, 4))
        x[0, 2] = 1.0
        h = hessian_from_calibration(x)
        expected = np.zeros((4, 4))
        expected[2, 2] = 2.0
        assert np.array_equal(h.matrix, expected)
        assert h.sample_count == 1

    def test_identity_samples(self):
        h = hessian_from_calibration(np.eye(4))
        assert np.allclose(h.matrix, 0.5 * np.eye(4))

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((8, 4))
        h = hessian_from_calibration(x).matrix
        naive = np.zeros((4, 4))
        for a in range(4):
            for b in range(4):
                naive[a, b] = 2.0 * sum(x[i, a] * x[i, b] for i in range(8)) / 8
        assert np.max(np.abs(h - naive)) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(EmptyCalibrationError):
            hessian_from_calibration(np.zeros((0, 4)))


def random_spd_hessian(rng, d, samples=None):
    x = rng.standard_normal((samples or 2 * d, d))
    return hessian_from_calibration(x)


class TestGptq:
    def test_single_column_equals_rtn(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((4, 1))
        spec = QuantSpec(bits=2, group_size=1)
        h = CalibrationHessian(matrix=np.array([[2.0]]), sample_count=1)
        assert np.array_equal(gptq_quantize(w, h, spec).codes,
                              rtn_quantize(w, spec).codes)

    def test_scaled_identity_hessian_matches_rtn_objective(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((4, 8))
        spec = QuantSpec(bits=2, group_size=8)
        h = CalibrationHessian(matrix=3.0 * np.eye(8), sample_count=8)
        g = proxy_objective(w, dequantize(gptq_quantize(w, h, spec)), h)
        r = proxy_objective(w, dequantize(rtn_quantize(w, spec)), h)
        assert abs(g - r) < 1e-12

    def test_2x2_exhaustive_bracket(self):
        rng = np.random.default_rng(9)
        spec = QuantSpec(bits=2, group_size=2)
        for _ in range(20):
            w = rng.standard_normal((2, 2))
            h = random_spd_hessian(rng, 2)
            q = gptq_quantize(w, h, spec)
            g_obj = proxy_objective(w, dequantize(q), h)
            r_obj = proxy_objective(w, dequantize(rtn_quantize(w, spec)), h)
            best = exhaustive_optimum(w, h, q)
            assert g_obj <= r_obj + 1e-12
            assert g_obj >= best - 1e-12

    def test_dominates_rtn_over_random_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            d = int(rng.choice([4, 8, 16]))
            w = rng.standard_normal((4, d))
            h = random_spd_hessian(rng, d)
            spec = QuantSpec(bits=2, group_size=d)
            g = proxy_objective(w, dequantize(gptq_quantize(w, h, spec)), h)
            r = proxy_objective(w, dequantize(rtn_quantize(w, spec)), h)
            assert g <= r + 1e-12


def exhaustive_optimum(w, h, q):
    """Brute-force min proxy objective over all code assignments with q's params."""
    spec = q.spec
    levels = range(spec.qmin, spec.qmax + 1)
    scales = np.repeat(q.scales, w.shape[1] // q.scales.shape[1], axis=1)
    zeros = (np.zeros_like(scales, dtype=np.int64) if q.zero_points is None
             else np.repeat(q.zero_points, w.shape[1] // q.zero_points.shape[1], axis=1))
    flat_scale = scales.reshape(-1)
    flat_zero = zeros.reshape(-1)
    n = w.size
    best = np.inf
    from itertools import product
    for assign in product(levels, repeat=n):
        w_hat = ((np.array(assign, dtype=np.float64) - flat_zero) * flat_scale).reshape(w.shape)
        delta = w - w_hat
        obj = float(np.trace(delta @ h.matrix @ delta.T))
        best = min(best, obj)
    return best


class TestQuantError:
    def test_zero_for_identical(self):
        w = np.ones((3, 3))
        h = CalibrationHessian(matrix=np.eye(3), sample_count=1)
        assert quant_error(w, w, METRIC_MSE) == 0.0
        assert quant_error(w, w, METRIC_MAX_ABS) == 0.0
        assert quant_error(w, w, METRIC_PROXY, h) == 0.0

    def test_mse_all_ones_delta(self):
        assert quant_error(np.ones((2, 2)), np.zeros((2, 2)), METRIC_MSE) == 1.0

    def test_proxy_identity_is_frobenius(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((4, 4))
        w_hat = rng.standard_normal((4, 4))
        h = CalibrationHessian(matrix=np.eye(4), sample_count=1)
        frob = float(np.sum((w - w_hat) ** 2))
        assert quant_error(w, w_hat, METRIC_PROXY, h) == pytest.approx(frob, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            quant_error(np.ones((2, 2)), np.ones((2, 3)))
