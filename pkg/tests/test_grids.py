import math
import warnings

import numpy as np
import pytest

from mkvflow.grids import (
    GridSpec,
    ScalarField,
    bessel_apply,
    field_derivative,
    gaussian_density,
    grid_delta,
    heat_apply,
    heat_gradient,
    random_band_limited,
)

GRID1 = GridSpec(1, 1024, 16.0)


def cosine_field(grid, m):
    """cos(omega x) at an exact grid frequency omega = 2 pi m / L."""
    omega = 2.0 * math.pi * m / grid.extent
    x = grid.coords()[0]
    return ScalarField(grid, np.cos(omega * x)), omega


class TestGridSpec:
    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            GridSpec(3, 64, 8.0)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            GridSpec(1, 100, 8.0)

    def test_rejects_small_grid(self):
        with pytest.raises(ValueError):
            GridSpec(1, 8, 8.0)

    def test_rejects_bad_extent(self):
        with pytest.raises(ValueError):
            GridSpec(1, 64, -1.0)

    def test_spacing(self):
        assert GRID1.spacing == pytest.approx(16.0 / 1024)


class TestHeatApply:
    def test_gaussian_convolution_identity(self):
        # N(0, 0.04) evolved for t=0.1 is N(0, 0.14)
        f = gaussian_density(GRID1, 0.0, 0.04)
        out = heat_apply(f, 0.1)
        expect = gaussian_density(GRID1, 0.0, 0.14)
        assert np.max(np.abs(out.values - expect.values)) < 1e-8

    def test_cosine_eigenfunction(self):
        f, omega = cosine_field(GRID1, 5)
        out = heat_apply(f, 0.5)
        expect = math.exp(-0.5 * 0.5 * omega**2) * f.values
        assert np.max(np.abs(out.values - expect)) < 1e-12

    def test_semigroup_law(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            f = random_band_limited(GRID1, 100, rng)
            s, t = rng.uniform(1e-3, 2.0, size=2)
            a = heat_apply(heat_apply(f, s), t)
            b = heat_apply(f, s + t)
            rel = np.max(np.abs(a.values - b.values)) / np.max(np.abs(b.values))
            assert rel < 1e-10

    def test_mass_conserved(self):
        f = gaussian_density(GRID1, 0.3, 0.09)
        out = heat_apply(f, 0.4)
        assert abs(out.mass() - f.mass()) < 1e-12

    def test_positivity(self):
        f = gaussian_density(GRID1, -0.5, 0.04)
        out = heat_apply(f, 0.2)
        assert out.values.min() > -1e-12

    def test_rejects_nonpositive_time(self):
        f = gaussian_density(GRID1, 0.0, 0.04)
        with pytest.raises(ValueError):
            heat_apply(f, 0.0)
        with pytest.raises(ValueError):
            heat_apply(f, -1.0)

    def test_under_resolved_warns_not_raises(self):
        f = gaussian_density(GRID1, 0.0, 0.04)
        tiny = (0.5 * GRID1.spacing) ** 2
        with pytest.warns(UserWarning, match="under-resolved"):
            out = heat_apply(f, tiny)
        assert out.meta.get("under_resolved") is True


class TestHeatGradient:
    def test_constant_has_zero_gradient(self):
        f = ScalarField(GRID1, np.ones(GRID1.shape))
        out = heat_gradient(f, 0.3)
        assert np.max(np.abs(out.components[0])) < 1e-13

    def test_sine_eigenfunction(self):
        omega = 2.0 * math.pi * 4 / GRID1.extent
        x = GRID1.coords()[0]
        f = ScalarField(GRID1, np.sin(omega * x))
        out = heat_gradient(f, 0.25)
        expect = omega * math.exp(-0.5 * 0.25 * omega**2) * np.cos(omega * x)
        assert np.max(np.abs(out.components[0] - expect)) < 1e-12

    def test_mollified_spike_sup_decay_slope(self):
        # sup |grad P_t delta| ~ t^{-(1+d)/2}; slope fitted over t in [0.01, 1]
        f = gaussian_density(GRID1, 0.0, 1e-4, normalize=True)
        ts = np.geomspace(0.01, 1.0, 12)
        sups = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for t in ts:
                sups.append(heat_gradient(f, t).sup_norm())
        slope = np.polyfit(np.log(ts), np.log(sups), 1)[0]
        assert abs(slope - (-1.0)) < 0.1


class TestBesselApply:
    def test_r_zero_is_identity(self):
        rng = np.random.default_rng(3)
        f = random_band_limited(GRID1, 64, rng)
        out = bessel_apply(f, 0.0)
        assert np.array_equal(out.values, f.values)

    def test_cosine_eigenfunction(self):
        f, omega = cosine_field(GRID1, 7)
        out = bessel_apply(f, 0.5)
        expect = (1.0 + omega**2) ** (-0.5) * f.values
        assert np.max(np.abs(out.values - expect)) < 1e-12

    @pytest.mark.parametrize("r", [0.25, 0.75, 1.5])
    def test_gamma_quadrature_matches_spectral(self, r):
        rng = np.random.default_rng(11)
        f = random_band_limited(GRID1, 128, rng)
        a = bessel_apply(f, r, mode="gamma_quadrature", nodes=200)
        b = bessel_apply(f, r, mode="spectral")
        rel = np.linalg.norm(a.values - b.values) / np.linalg.norm(b.values)
        assert rel < 1e-6

    def test_gamma_quadrature_rejects_r_zero(self):
        f = gaussian_density(GRID1, 0.0, 0.04)
        with pytest.raises(ValueError):
            bessel_apply(f, 0.0, mode="gamma_quadrature")

    def test_rejects_negative_order(self):
        f = gaussian_density(GRID1, 0.0, 0.04)
        with pytest.raises(ValueError):
            bessel_apply(f, -0.5)

    def test_composition_law(self):
        rng = np.random.default_rng(5)
        f = random_band_limited(GRID1, 64, rng)
        a = bessel_apply(bessel_apply(f, 0.6), 0.9)
        b = bessel_apply(f, 1.5)
        rel = np.max(np.abs(a.values - b.values)) / np.max(np.abs(b.values))
        assert rel < 1e-10

    def test_commutes_with_derivative(self):
        rng = np.random.default_rng(9)
        f = random_band_limited(GRID1, 64, rng)
        a = bessel_apply(field_derivative(f, (1,)), 0.7)
        b = field_derivative(bessel_apply(f, 0.7), (1,))
        assert np.max(np.abs(a.values - b.values)) < 1e-10


class TestFieldDerivative:
    def test_zero_order_is_identity(self):
        f = gaussian_density(GRID1, 0.0, 0.04)
        out = field_derivative(f, (0,))
        assert np.array_equal(out.values, f.values)

    def test_sine_second_derivative(self):
        omega = 2.0 * math.pi * 6 / GRID1.extent
        x = GRID1.coords()[0]
        f = ScalarField(GRID1, np.sin(omega * x))
        out = field_derivative(f, (2,))
        assert np.max(np.abs(out.values + omega**2 * f.values)) < 1e-10

    def test_gaussian_derivative_closed_form(self):
        sigma2 = 0.09
        f = gaussian_density(GRID1, 0.0, sigma2)
        out = field_derivative(f, (1,))
        x = GRID1.coords()[0]
        expect = -x / sigma2 * f.values
        assert np.max(np.abs(out.values - expect)) < 1e-8

    def test_rejects_order_above_four(self):
        f = gaussian_density(GRID1, 0.0, 0.04)
        with pytest.raises(ValueError, match="unsupported"):
            field_derivative(f, (5,))

    def test_2d_mixed_derivative(self):
        grid = GridSpec(2, 64, 8.0)
        oma = 2.0 * math.pi * 2 / grid.extent
        omb = 2.0 * math.pi * 3 / grid.extent
        xa, xb = grid.coords()
        f = ScalarField(grid, np.sin(oma * xa) * np.cos(omb * xb))
        out = field_derivative(f, (1, 1))
        expect = -oma * omb * np.cos(oma * xa) * np.sin(omb * xb)
        assert np.max(np.abs(out.values - expect)) < 1e-10


class TestHelpers:
    def test_grid_delta_mass(self):
        d = grid_delta(GRID1)
        assert d.mass() == pytest.approx(1.0)

    def test_delta_heated_is_gaussian(self):
        d = grid_delta(GRID1)
        out = heat_apply(d, 0.05)
        expect = gaussian_density(GRID1, 0.0, 0.05)
        assert np.max(np.abs(out.values - expect.values)) < 1e-6

    def test_band_limited_band(self):
        rng = np.random.default_rng(0)
        f = random_band_limited(GRID1, 10, rng)
        spec = np.fft.fft(f.values)
        m = np.fft.fftfreq(GRID1.points_per_dim, 1.0 / GRID1.points_per_dim).astype(int)
        assert np.max(np.abs(spec[np.abs(m) > 10])) < 1e-9 * np.max(np.abs(spec))

    def test_field_shape_mismatch(self):
        with pytest.raises(ValueError):
            ScalarField(GRID1, np.zeros(10))

    def test_2d_heat_mass(self):
        grid = GridSpec(2, 64, 8.0)
        f = gaussian_density(grid, [0.2, -0.1], 0.09)
        out = heat_apply(f, 0.3)
        assert abs(out.mass() - 1.0) < 1e-10
