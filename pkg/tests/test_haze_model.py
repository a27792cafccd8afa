import numpy as np
import pytest

from urdehaze.haze_model import (
    DepthConfig,
    EstimationErrors,
    ScatteringParams,
    T_MIN,
    accumulate_error,
    apply_scattering,
    haze_map,
    invert_scattering,
    synthesize_pair,
    transmission_from_depth,
)


def const_image(h, w, value):
    return np.full((h, w, 3), value, dtype=np.float64)


class TestApplyScattering:
    def test_full_transmission_is_identity(self):
        rng = np.random.default_rng(0)
        clear = rng.uniform(0, 1, (6, 7, 3))
        out = apply_scattering(clear, np.ones((6, 7)), ScatteringParams(alpha=0.9))
        np.testing.assert_array_equal(out, clear)

    def test_direct_arithmetic(self):
        clear = const_image(2, 2, 0.2)
        out = apply_scattering(clear, np.full((2, 2), 0.5), ScatteringParams(alpha=1.0))
        np.testing.assert_allclose(out, 0.6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            apply_scattering(const_image(4, 4, 0.5), np.ones((4, 5)), ScatteringParams(alpha=1.0))

    def test_transmission_range_enforced(self):
        with pytest.raises(ValueError, match=r"\(0, 1\]"):
            apply_scattering(const_image(3, 3, 0.5), np.zeros((3, 3)), ScatteringParams(alpha=1.0))

    def test_output_stays_in_unit_range(self):
        rng = np.random.default_rng(1)
        clear = rng.uniform(0, 1, (5, 5, 3))
        t = rng.uniform(0.1, 1.0, (5, 5))
        out = apply_scattering(clear, t, ScatteringParams(alpha=0.8))
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestInvertScattering:
    def test_full_transmission_is_identity(self):
        rng = np.random.default_rng(2)
        haze = rng.uniform(0, 1, (4, 4, 3))
        out = invert_scattering(haze, np.ones((4, 4)), ScatteringParams(alpha=0.7))
        np.testing.assert_array_equal(out, haze)

    def test_direct_arithmetic(self):
        haze = const_image(2, 2, 0.6)
        out = invert_scattering(haze, np.full((2, 2), 0.5), ScatteringParams(alpha=1.0))
        np.testing.assert_allclose(out, 0.2)

    def test_floor_enforced_with_named_value(self):
        haze = const_image(3, 3, 0.5)
        with pytest.raises(ValueError, match=str(T_MIN)):
            invert_scattering(haze, np.full((3, 3), 5e-3), ScatteringParams(alpha=1.0))

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            clear = rng.uniform(0, 1, (8, 9, 3))
            t = rng.uniform(0.1, 1.0, (8, 9))
            params = ScatteringParams(alpha=rng.uniform(0.5, 1.0, 3))
            recovered = invert_scattering(apply_scattering(clear, t, params), t, params)
            np.testing.assert_allclose(recovered, clear, atol=1e-6)


class TestTransmissionFromDepth:
    def test_zero_beta_gives_unit_transmission(self):
        d = np.random.default_rng(4).uniform(0, 50, (6, 6))
        np.testing.assert_array_equal(transmission_from_depth(d, 0.0), np.ones((6, 6)))

    def test_ln2_depth_halves(self):
        t = transmission_from_depth(np.full((2, 2), np.log(2.0)), 1.0)
        np.testing.assert_allclose(t, 0.5)

    def test_monotone_in_depth(self):
        rng = np.random.default_rng(5)
        d1 = rng.uniform(0, 5, (10, 10))
        d2 = d1 + rng.uniform(0, 5, (10, 10))
        beta = 0.7
        assert np.all(transmission_from_depth(d1, beta) >= transmission_from_depth(d2, beta))

    def test_decreasing_in_beta(self):
        d = np.random.default_rng(6).uniform(0.1, 5, (8, 8))
        t1 = transmission_from_depth(d, 0.5)
        t2 = transmission_from_depth(d, 1.5)
        assert np.all(t1 > t2)

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(7)
        t = transmission_from_depth(rng.uniform(0, 100, (20, 20)), rng.uniform(0, 3))
        assert np.all(t > 0) and np.all(t <= 1)

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError, match="beta"):
            transmission_from_depth(np.ones((2, 2)), -0.1)


class TestAccumulateError:
    def test_zero_case(self):
        assert accumulate_error(0.0, 0.0) == 0.0

    def test_direct_arithmetic(self):
        # 0.1 + 0.1 + 0.1*0.1; the decimal result 0.21 is not binary
        # representable, so exactness means within one ulp of the literal.
        import math

        assert abs(accumulate_error(0.1, 0.1) - 0.21) <= math.ulp(0.21)

    def test_one_sided(self):
        assert accumulate_error(0.5, 0.0) == 0.5

    def test_symmetric_and_dominates_max(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            d1, d2 = rng.uniform(0, 2, 2)
            assert accumulate_error(d1, d2) == accumulate_error(d2, d1)
            assert accumulate_error(d1, d2) >= max(d1, d2)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            accumulate_error(-0.1, 0.2)

    def test_dataclass_total(self):
        assert EstimationErrors(0.1, 0.1).total == pytest.approx(0.21)
        with pytest.raises(ValueError):
            EstimationErrors(-1.0, 0.0)


class TestHazeMap:
    def test_zero_residual(self):
        x = np.random.default_rng(9).uniform(-1, 1, (5, 5, 3))
        np.testing.assert_array_equal(haze_map(x, x), np.zeros_like(x))

    def test_subtraction(self):
        m = haze_map(const_image(2, 2, 0.7), const_image(2, 2, 0.2))
        np.testing.assert_allclose(m, 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            haze_map(const_image(2, 2, 0.0), const_image(2, 3, 0.0))

    def test_linearity(self):
        rng = np.random.default_rng(10)
        i, j = rng.normal(size=(2, 4, 4, 3))
        np.testing.assert_allclose(haze_map(3.0 * i, 3.0 * j), 3.0 * haze_map(i, j))


class TestSynthesizePair:
    def test_zero_beta_returns_clear(self):
        clear = np.random.default_rng(11).uniform(0, 1, (6, 6, 3))
        haze, back = synthesize_pair(clear, ScatteringParams(alpha=0.9, beta=0.0))
        np.testing.assert_array_equal(haze, clear)
        np.testing.assert_array_equal(back, clear)

    def test_constant_depth_composition(self):
        clear = np.random.default_rng(12).uniform(0, 1, (5, 5, 3))
        params = ScatteringParams(alpha=1.0, beta=1.0)
        haze, _ = synthesize_pair(clear, params, depth=np.full((5, 5), np.log(2.0)))
        np.testing.assert_allclose(haze, 0.5 * clear + 0.5, atol=1e-12)

    def test_batch_round_trip(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            clear = rng.uniform(0, 1, (7, 6, 3))
            params = ScatteringParams(alpha=rng.uniform(0.7, 1.0), beta=rng.uniform(0.0, 2.0))
            depth = rng.uniform(0.1, 1.0, (7, 6))
            haze, _ = synthesize_pair(clear, params, depth)
            t = transmission_from_depth(depth, params.beta)
            if t.min() >= 0.1:
                back = invert_scattering(haze, t, params)
                np.testing.assert_allclose(back, clear, atol=1e-6)

    def test_depth_config_ramp(self):
        d = DepthConfig(constant=2.0, vertical_ramp=True, ramp_range=(1.5, 0.5)).build(9, 4)
        assert d.shape == (9, 4)
        assert d[0, 0] == pytest.approx(3.0)
        assert d[-1, 0] == pytest.approx(1.0)
        assert np.all(np.diff(d[:, 0]) < 0)


class TestParamValidation:
    def test_alpha_broadcast_and_range(self):
        p = ScatteringParams(alpha=0.8)
        assert p.alpha.shape == (3,)
        with pytest.raises(ValueError):
            ScatteringParams(alpha=0.0)
        with pytest.raises(ValueError):
            ScatteringParams(alpha=1.2)

    def test_beta_validation(self):
        with pytest.raises(ValueError):
            ScatteringParams(alpha=0.9, beta=-1.0)
        with pytest.raises(ValueError):
            ScatteringParams(alpha=0.9, beta=float("nan"))
