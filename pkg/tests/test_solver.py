import math

import numpy as np
import pytest

from mkvflow.grids import GridSpec, ScalarField, gaussian_density, grid_delta, heat_apply
from mkvflow.kernels import (
    ConstantVector,
    KernelSpec,
    RieszOrder,
    TimeModulation,
    realize_kernel,
)
from mkvflow.solver import (
    DegradedAccuracyError,
    FlowParams,
    MeasureFlow,
    NoContractionError,
    eta_theta_params,
    phi_apply,
    picard_solve,
    tau_n_formula,
    time_shift_solve,
    weighted_flow_distance,
)

GRID = GridSpec(1, 1024, 16.0)
EPS = 4.0 * GRID.spacing**2


def small_kernel(c=0.2, kappa=0.75):
    return KernelSpec(RieszOrder((c,), 0, 1.0), EPS, TimeModulation(kappa=kappa))


def params_for(T=0.5, n=10, kappa=0.75, **kw):
    tg = tuple(np.linspace(T / n, T, n))
    return FlowParams(delta=kw.get("delta", 1.0), k=kw.get("k", 2.0),
                      eps=kw.get("eps", 0.0), p=kw.get("p", math.inf),
                      kappa=kappa, T=T, time_grid=tg, dim=1)


class TestFlowParams:
    def test_eta_formula(self):
        p = params_for(kappa=0.0)
        assert p.eta == pytest.approx(1.0 + 0.5)
        assert p.theta == math.inf  # (eta - 2 kappa)+ = 1.5 >= 1

    def test_degenerate_indices(self):
        p = FlowParams(delta=1.0, k=2.0, eps=1.0, p=2.0, kappa=0.0, T=1.0)
        assert p.eta == 0.0
        assert p.theta == 2.0

    def test_admissibility_flags(self):
        p = params_for(kappa=0.0)
        info = eta_theta_params(p)
        assert info["eta"] == pytest.approx(1.5)
        assert not info["smoothing_gap_ok"]
        info2 = eta_theta_params(params_for(kappa=0.5))
        assert info2["smoothing_gap_ok"]  # 1.5 < 1 + 1

    def test_xi_q_matched_indices(self):
        p = FlowParams(delta=1.0, k=2.0, eps=1.0, p=2.0, kappa=0.0, T=1.0)
        info = eta_theta_params(p, q=2.0)
        assert info["xi_q"] == pytest.approx((1.0 + 0.5) / 2.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            FlowParams(delta=1.0, k=2.0, eps=2.0, p=math.inf, T=1.0)
        with pytest.raises(ValueError):
            FlowParams(delta=1.0, k=4.0, p=2.0, T=1.0)
        with pytest.raises(ValueError):
            FlowParams(delta=1.0, k=2.0, T=1.0, time_grid=(0.5, 0.25, 1.0))


class TestTauFormula:
    def test_strongest_norm_branch(self):
        p = params_for()
        assert tau_n_formula(5.0, 3, 1.0, p) == 3.0

    def test_explicit_value(self):
        p = FlowParams(delta=1.0, k=2.0, eps=0.5, p=4.0, kappa=1.0, T=1.0)
        # A_n = 1, norm 1, theta finite: min(2, exp(-1))
        val = tau_n_formula(1.0, 2, 1.0, p)
        assert val == pytest.approx(math.exp(-1.0))

    def test_monotone_in_norm(self):
        p = FlowParams(delta=1.0, k=2.0, eps=0.5, p=4.0, kappa=1.0, T=1.0)
        vals = [tau_n_formula(g, 2, 1.0, p) for g in np.linspace(0.5, 50, 30)]
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-10

    def test_rejects_undefined_contraction_exponent(self):
        p = FlowParams(delta=1.5, k=2.0, eps=0.5, p=4.0, kappa=0.0, T=1.0)
        assert not math.isfinite(p.theta)
        with pytest.raises(ValueError, match="undefined"):
            tau_n_formula(1.0, 2, 1.0, p)


class TestPhiApply:
    def test_zero_drift_is_heat_flow(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        flow = phi_apply(gamma, None, None, params, steps=200)
        for t, rho in zip(flow.times, flow.densities):
            expect = gaussian_density(GRID, 0.0, 0.04 + t)
            assert np.abs(rho.values - expect.values).max() < 1e-8

    def test_constant_drift_gaussian_law(self):
        c = 0.8
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        kern = KernelSpec(ConstantVector((c,)))
        base = phi_apply(gamma, None, None, params, steps=200)
        flow = phi_apply(gamma, base, kern, params, steps=2000)
        for t, rho in zip(flow.times, flow.densities):
            expect = gaussian_density(GRID, c * t, 0.04 + t)
            assert np.abs(rho.values - expect.values).max() < 1e-6

    def test_agrees_with_fd_oracle(self):
        # independent oracle: central finite differences in space, explicit
        # Euler in time, drift recomputed from the FD density itself; the
        # output grid doubles as the drift-freezing interpolation grid, so it
        # stays at the resolution the solver is meant to run at
        kern = small_kernel()
        params = params_for(T=0.5, n=10)
        gamma = gaussian_density(GRID, 0.0, 0.04)
        flow, _ = picard_solve(gamma, kern, params, tol=1e-8, steps=600)
        h = GRID.spacing
        dt = 2.5e-5
        rho = gamma.values.copy()
        kf_hat = np.fft.fft(np.fft.ifftshift(realize_kernel(kern, GRID).components[0]))
        targets = {int(round(t / dt)): i for i, t in enumerate(flow.times)}
        fd_out = {}
        for m in range(1, int(round(0.5 / dt)) + 1):
            t = m * dt
            b = t**0.75 * np.fft.ifft(kf_hat * np.fft.fft(rho)).real * h
            flux = b * rho
            dflux = (np.roll(flux, -1) - np.roll(flux, 1)) / (2 * h)
            lap = (np.roll(rho, -1) - 2 * rho + np.roll(rho, 1)) / h**2
            rho = rho + dt * (0.5 * lap - dflux)
            if m in targets:
                fd_out[targets[m]] = rho.copy()
        for i, rho_s in enumerate(flow.densities):
            l1 = np.abs(rho_s.values - fd_out[i]).sum() * h
            assert l1 < 1e-3

    def test_mass_and_positivity(self):
        kern = small_kernel(c=0.5)
        params = params_for()
        gamma = gaussian_density(GRID, 0.0, 0.04)
        base = phi_apply(gamma, None, None, params, steps=300)
        flow = phi_apply(gamma, base, kern, params, steps=300)
        for rho in flow.densities:
            assert abs(rho.mass() - 1.0) < 1e-9
            assert rho.values.min() >= -1e-6
        assert flow.meta["clip_mass"] < 1e-3


class TestWeightedFlowDistance:
    def test_identical_flows(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        flow = phi_apply(gamma, None, None, params, steps=100)
        assert weighted_flow_distance(flow, flow, params) == 0.0

    def test_monotone_in_lambda(self):
        gamma1 = gaussian_density(GRID, 0.0, 0.04)
        gamma2 = gaussian_density(GRID, 0.1, 0.04)
        params = params_for()
        f1 = phi_apply(gamma1, None, None, params, steps=100)
        f2 = phi_apply(gamma2, None, None, params, steps=100)
        vals = [weighted_flow_distance(f1, f2, params, lam=l)
                for l in (0.0, 1.0, 10.0, 100.0)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 0.05 * vals[0]

    def test_refinement_consistency(self):
        # [DERIVED refinement oracle] a denser time grid reproduces the sup
        gamma1 = gaussian_density(GRID, 0.0, 0.04)
        gamma2 = gaussian_density(GRID, 0.1, 0.04)
        coarse = params_for(T=0.5, n=10)
        fine = params_for(T=0.5, n=40)
        d_coarse = weighted_flow_distance(
            phi_apply(gamma1, None, None, coarse, steps=100),
            phi_apply(gamma2, None, None, coarse, steps=100), coarse)
        d_fine = weighted_flow_distance(
            phi_apply(gamma1, None, None, fine, steps=100),
            phi_apply(gamma2, None, None, fine, steps=100), fine)
        assert abs(d_fine - d_coarse) / d_fine < 0.02

    def test_grid_mismatch(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        p1, p2 = params_for(n=10), params_for(n=12)
        f1 = phi_apply(gamma, None, None, p1, steps=50)
        f2 = phi_apply(gamma, None, None, p2, steps=50)
        with pytest.raises(ValueError):
            weighted_flow_distance(f1, f2, p1)


class TestPicardSolve:
    def test_zero_drift_one_iteration(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        flow, rep = picard_solve(gamma, KernelSpec(ConstantVector((0.0,))),
                                 params, steps=200)
        assert rep.iterations == 1
        expect = gaussian_density(GRID, 0.0, 0.04 + params.T)
        assert np.abs(flow.densities[-1].values - expect.values).max() < 1e-8

    def test_constant_drift_two_applications(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        flow, rep = picard_solve(gamma, KernelSpec(ConstantVector((0.6,))),
                                 params, steps=1200)
        assert rep.iterations <= 2
        assert rep.residual < 1e-8
        expect = gaussian_density(GRID, 0.6 * params.T, 0.04 + params.T)
        assert np.abs(flow.densities[-1].values - expect.values).max() < 1e-6

    def test_contraction_and_fixed_point(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        kern = small_kernel()
        flow, rep = picard_solve(gamma, kern, params, tol=1e-6, steps=400)
        assert rep.iterations <= 20
        assert max(rep.contraction_ratios) < 0.9
        assert rep.residual < 1e-6
        # fixed-point consistency: one more application stays within 2 tol
        again = phi_apply(gamma, flow, kern, params, steps=400)
        assert weighted_flow_distance(again, flow, params) < 2e-6

    def test_decay_trajectory_and_report(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        _, rep = picard_solve(gamma, small_kernel(), params, steps=400)
        assert np.all(np.isfinite(rep.decay_trajectory))
        assert not rep.blowup
        assert rep.tau_n_estimate == 1.0  # eps=0, p=inf branch
        assert np.all(np.diff(rep.k_traj) >= -1e-12)
        assert np.all(rep.s_traj <= rep.decay_times + 1e-12)

    def test_no_contraction_error(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for(T=2.0, kappa=0.0)
        # strong kernel, long horizon, frozen weight: ratios stay >= 1
        kern = KernelSpec(RieszOrder((12.0,), 0, 1.0), EPS)
        with pytest.raises((NoContractionError, DegradedAccuracyError)):
            picard_solve(gamma, kern, params, tol=1e-12, steps=150,
                         auto_lambda=False, max_iter=8)


class TestTimeShiftSolve:
    def test_zero_drift_shift_invisible(self):
        params = params_for()
        gamma0 = gaussian_density(GRID, 0.0, 0.04)
        shifted = time_shift_solve(gamma0, 0.05, KernelSpec(ConstantVector((0.0,))),
                                   params, steps=300)
        for t, rho in zip(shifted.times, shifted.densities):
            expect = gaussian_density(GRID, 0.0, 0.04 + 0.05 + t)
            assert np.abs(rho.values - expect.values).max() < 1e-8

    def test_heat_leg_from_spike(self):
        params = params_for()
        gamma0 = grid_delta(GRID, 0.0)
        shifted = time_shift_solve(gamma0, 0.05, small_kernel(), params, steps=300)
        expect = gaussian_density(GRID, 0.0, 0.05)
        assert np.abs(shifted.initial.values - expect.values).max() < 1e-6

    def test_matches_plain_solve(self):
        # the two constructions are mutual oracles
        params = params_for()
        kern = small_kernel()
        r = 0.05
        gamma0 = grid_delta(GRID, 0.0)
        shifted = time_shift_solve(gamma0, r, kern, params, tol=1e-10, steps=600)
        plain, _ = picard_solve(heat_apply(gamma0, r), kern, params,
                                tol=1e-10, steps=600)
        h = GRID.spacing
        for a, b in zip(shifted.densities, plain.densities):
            assert np.abs(a.values - b.values).sum() * h < 1e-4

    def test_rejects_unresolvable_shift(self):
        params = params_for()
        with pytest.raises(ValueError, match="resolvability"):
            time_shift_solve(grid_delta(GRID), 1e-7, small_kernel(), params)


class TestNemytskiiDriftSolve:
    def test_density_feedback_contracts(self):
        # drift proportional to the solution's own density, small weight
        from mkvflow.kernels import NemytskiiSpec
        spec = NemytskiiSpec(1, "linear", params=(("weights", (0.15,)),),
                             modulation=TimeModulation(kappa=0.75))
        params = FlowParams(delta=1.2, k=math.inf, kappa=0.75, T=0.5,
                            time_grid=tuple(np.linspace(0.05, 0.5, 10)))
        gamma = gaussian_density(GRID, 0.0, 0.04)
        flow, rep = picard_solve(gamma, spec, params, tol=1e-8, steps=400)
        assert rep.residual < 1e-8
        assert max(rep.contraction_ratios) < 0.9
        for rho in flow.densities:
            assert abs(rho.mass() - 1.0) < 1e-9
        # the density drift pushes mass rightward where rho is largest
        mean_T = float((flow.densities[-1].values * GRID.coords()[0]).sum()
                       * GRID.cell_volume)
        assert mean_T > 0.01


class TestTwoDimensional:
    def test_heat_flow_2d(self):
        # extent 12 keeps the evolved Gaussian's wrap-around tail below 1e-10
        grid = GridSpec(2, 64, 12.0)
        gamma = gaussian_density(grid, [0.0, 0.0], 0.09)
        params = FlowParams(delta=1.0, k=2.0, kappa=0.75, T=0.4,
                            time_grid=(0.2, 0.4), dim=2)
        flow = phi_apply(gamma, None, None, params, steps=50)
        expect = gaussian_density(grid, [0.0, 0.0], 0.09 + 0.4)
        assert np.abs(flow.densities[-1].values - expect.values).max() < 1e-8

    def test_constant_drift_2d(self):
        grid = GridSpec(2, 64, 8.0)
        gamma = gaussian_density(grid, [0.0, 0.0], 0.09)
        params = FlowParams(delta=1.0, k=2.0, kappa=0.75, T=0.3,
                            time_grid=(0.15, 0.3), dim=2)
        kern = KernelSpec(ConstantVector((0.4, -0.2)))
        flow, rep = picard_solve(gamma, kern, params, steps=600)
        expect = gaussian_density(grid, [0.4 * 0.3, -0.2 * 0.3], 0.09 + 0.3)
        assert np.abs(flow.densities[-1].values - expect.values).max() < 1e-5
        assert rep.iterations <= 2


class TestMeasureFlow:
    def test_interpolation_endpoints(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        flow = phi_apply(gamma, None, None, params, steps=100)
        assert np.array_equal(flow.density_at(0.0).values, gamma.values)
        assert np.array_equal(flow.density_at(99.0).values, flow.densities[-1].values)

    def test_l1_increments_modulus(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        params = params_for()
        flow = phi_apply(gamma, None, None, params, steps=100)
        inc = flow.l1_increments()
        assert np.all(inc < 0.5)

    def test_rejects_bad_mass(self):
        gamma = gaussian_density(GRID, 0.0, 0.04)
        bad = ScalarField(GRID, gamma.values * 1.5)
        with pytest.raises(ValueError, match="mass"):
            MeasureFlow(np.array([0.5]), [bad], gamma)
