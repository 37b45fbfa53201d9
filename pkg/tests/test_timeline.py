import math

import numpy as np
import pytest

from stgnn_lab.timeline import (
    SamplingGrid,
    WarpFunction,
    regrid,
    resample_warped,
    warp_exponential_cosine,
    xi_l2_norm,
)


class TestWarpFamily:
    def test_zero_eps(self):
        w = warp_exponential_cosine(0.0)
        u = np.linspace(0, 5, 11)
        assert np.all(w.z(u) == 0)
        assert np.all(w.xi(u) == 0)

    def test_closed_form_at_zero(self):
        eps = 0.1
        w = warp_exponential_cosine(eps)
        assert w.z(0.0) == pytest.approx(math.sqrt(eps))
        assert w.xi(0.0) == pytest.approx(-(eps**1.5))

    def test_xi_is_derivative(self):
        warp_exponential_cosine(0.25).check_derivative()

    @pytest.mark.parametrize("eps", [0.01, 0.05, 0.1, 0.25, 0.3])
    def test_xi_norm_closed_form(self, eps):
        # L2 norm over [0, inf) equals sqrt(3/4) * eps
        numeric = xi_l2_norm(warp_exponential_cosine(eps))
        assert numeric == pytest.approx(math.sqrt(0.75) * eps, rel=0.01)

    def test_eps_out_of_range(self):
        with pytest.raises(ValueError):
            warp_exponential_cosine(1.0)
        with pytest.raises(ValueError):
            warp_exponential_cosine(-0.1)


class TestResampleWarped:
    def test_identity_at_zero_warp(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 20))
        grid = SamplingGrid(0.1, 20)
        out = resample_warped(x, grid, warp_exponential_cosine(0.0))
        assert np.array_equal(out, x)

    def test_constant_preserved(self):
        grid = SamplingGrid(0.1, 30)
        x = np.full((1, 30), 3.25)
        out = resample_warped(x, grid, warp_exponential_cosine(0.2))
        assert np.allclose(out, 3.25)

    def test_linear_ramp_exact(self):
        # the linear interpolant of a linear signal is the signal itself
        grid = SamplingGrid(0.1, 40)
        times = grid.times()
        warp = warp_exponential_cosine(0.1)
        out = resample_warped(times[None, :], grid, warp)
        expected = np.clip(times + warp.z(times), 0.0, grid.horizon)
        assert np.max(np.abs(out[0] - expected)) <= 1e-14

    def test_first_order_in_eps(self):
        # resampler responds to first order in the warp amplitude: with a
        # displacement proportional to eps and a smooth input, the relative
        # L2 error scales ~linearly with eps
        grid = SamplingGrid(0.1, 256)
        times = grid.times()
        x = np.sin(2 * np.pi * times / (20 * grid.ts))[None, :]
        eps_list = [0.02, 0.05, 0.1, 0.2]
        errs = []
        for eps in eps_list:
            warp = WarpFunction(
                eps,
                lambda u, e=eps: e * np.sin(0.4 * np.asarray(u, float)),
                lambda u, e=eps: 0.4 * e * np.cos(0.4 * np.asarray(u, float)),
                1.0,
            )
            out = resample_warped(x, grid, warp)
            errs.append(np.linalg.norm(out - x) / np.linalg.norm(x))
        slope = np.polyfit(np.log(eps_list), np.log(errs), 1)[0]
        assert 0.8 <= slope <= 1.2
        assert all(e <= 4.0 * eps for e, eps in zip(errs, eps_list))


class TestRegrid:
    def test_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 15))
        assert np.array_equal(regrid(x, 0.1, 0.1), x)

    def test_halve_step_on_ramp(self):
        x = np.arange(10.0)[None, :]
        out = regrid(x, 0.2, 0.1)
        assert out.shape[-1] == 19
        assert np.allclose(out[0], np.arange(19) * 0.5)

    def test_matches_independent_interpolation(self):
        times = np.arange(50) * 0.1
        x = np.sin(times)[None, :]
        out = regrid(x, 0.1, 0.15)
        t_new = np.arange(out.shape[-1]) * 0.15
        oracle = np.array(
            [np.interp(t, times, x[0]) for t in t_new]
        )
        assert np.max(np.abs(out[0] - oracle)) <= 1e-12

    def test_round_trip_on_linear(self):
        x = (np.arange(21) * 0.3 + 1.0)[None, :]
        back = regrid(regrid(x, 0.1, 0.05), 0.05, 0.1)
        assert back.shape == x.shape
        assert np.allclose(back, x, atol=1e-12)

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            regrid(np.zeros((1, 0)), 0.01, 10.0)


class TestWarpFunctionChecks:
    def test_mismatched_xi_detected(self):
        bad = WarpFunction(0.1, lambda u: np.asarray(u) * 0.5, lambda u: np.asarray(u) * 0.0, 1.0)
        with pytest.raises(ValueError):
            bad.check_derivative()
