import numpy as np
import pytest

from conftest import scalar_system, system_2x2, time_periodic_l
from wavekit.coeffs import nondimensionalize
from wavekit.dispersion import minimal_speed, speed_roots, static_frame
from wavekit.eigen import EigenEvaluator
from wavekit.errors import NumericalError, WavekitError
from wavekit.frame import make_frame, transform_coefficients
from wavekit.pde_core import GridField
from wavekit.waves import (
    WaveProfile,
    build_envelopes_critical,
    build_envelopes_supercritical,
    critical_fixed_point,
    cylinder_grid,
    extend_to_entire,
    fixed_point_truncated,
    verify_wave,
    _cell_grid_for,
)


def wave_frame(sys, c):
    return transform_coefficients(
        nondimensionalize(sys), make_frame([1.0], float(c), mode="space-homogeneous")
    )


@pytest.fixture(scope="module")
def scalar_setup():
    sys = scalar_system()
    curve = minimal_speed(static_frame(sys, e=[1]), tol=1e-8)
    roots = speed_roots(curve, 2.5, tol=1e-10)
    fsc = wave_frame(sys, 2.5)
    ev = EigenEvaluator(fsc)
    gamma = 0.5 * min(roots.mu_wedge, roots.mu_vee - roots.mu_wedge)
    env = build_envelopes_supercritical(
        fsc, roots, ev.pair(roots.mu_wedge), ev.pair(roots.mu_wedge + gamma), ev.grid
    )
    return sys, curve, roots, fsc, env


@pytest.fixture(scope="module")
def scalar_profile(scalar_setup):
    _, _, _, fsc, env = scalar_setup
    return fixed_point_truncated(fsc, env, 24.0, tol=1e-8, n_z=1201,
                                 record_iterates=True)


class TestSupercriticalEnvelopes:
    def test_gamma_arithmetic(self, scalar_setup):
        _, _, roots, _, env = scalar_setup
        assert env.gamma == pytest.approx(0.25, abs=1e-7)

    def test_M_value(self, scalar_setup):
        # kappa = 1, chi = lambda_{0.75} + 2.5*0.75 = 0.3125 => M = 1/0.3125
        _, _, _, _, env = scalar_setup
        assert env.chi == pytest.approx(0.3125, abs=1e-6)
        assert env.M == pytest.approx(3.2, abs=1e-5)

    def test_supersolution_residual_small(self, scalar_setup, scalar_profile):
        # R ubar = 0 in the continuum; discrete residual is O(dz^2)
        assert scalar_profile.info["supersolution_residual"] < 0.01

    def test_subsolution_inequality(self, scalar_profile):
        assert scalar_profile.info["subsolution_violation"] < 1e-10

    def test_envelopes_ordered(self, scalar_setup):
        _, _, _, fsc, env = scalar_setup
        grid = cylinder_grid(fsc, 24.0, n_z=1201)
        ubar, ulow = env.materialize(grid)
        assert (ubar.values - ulow.values).min() >= 0
        assert ubar.values.min() > 0
        # subsolution nonpositive on {z >= 0}
        sel = grid.z >= 0
        assert ulow.values[:, :, sel].max() <= 0

    def test_2x2_envelope_constants(self):
        sys = system_2x2()
        curve = minimal_speed(static_frame(sys, e=[1]), tol=1e-8)
        roots = speed_roots(curve, 3.0, tol=1e-10)
        fsc = wave_frame(sys, 3.0)
        ev = EigenEvaluator(fsc)
        gamma = 0.5 * min(roots.mu_wedge, roots.mu_vee - roots.mu_wedge)
        env = build_envelopes_supercritical(
            fsc, roots, ev.pair(roots.mu_wedge), ev.pair(roots.mu_wedge + gamma), ev.grid
        )
        assert roots.mu_wedge == pytest.approx(1.0, abs=1e-7)
        assert env.chi == pytest.approx(0.25, abs=1e-6)
        assert env.M == pytest.approx(8.0, abs=1e-4)  # N b / (chi kappa) = 2/0.25


class TestFixedPointTruncated:
    def test_trapping_and_residual(self, scalar_profile):
        assert scalar_profile.trapping_violation < 1e-6
        assert scalar_profile.pde_residual < 1e-5

    def test_iterates_stay_in_envelope(self, scalar_profile):
        for lo, hi in scalar_profile.info["iterate_bounds"]:
            assert lo >= -1e-9
            assert hi >= -1e-9

    def test_domain_too_short(self, scalar_setup):
        _, _, _, fsc, env = scalar_setup
        with pytest.raises(WavekitError, match="domain too short"):
            fixed_point_truncated(fsc, env, env.a_star / 2, n_z=257)

    def test_relaxation_agrees_with_steady(self, scalar_setup):
        _, _, _, fsc, env = scalar_setup
        p_direct = fixed_point_truncated(fsc, env, 12.0, tol=1e-8, n_z=601)
        p_relax = fixed_point_truncated(fsc, env, 12.0, tol=1e-8, n_z=601,
                                        force_relaxation=True)
        assert np.abs(p_direct.u.values - p_relax.u.values).max() < 1e-5


class TestExtendToEntire:
    def test_stabilization_gap(self, scalar_setup):
        # at dz = 0.02 the window gap between a=40 and a=60 drops below 1e-4
        _, _, _, fsc, env = scalar_setup
        profile = extend_to_entire(fsc, env, [40.0, 60.0], window=10.0,
                                   tol=1e-4, dz=0.02)
        assert profile.info["stabilization_gap"] < 1e-4
        assert profile.a == 60.0

    def test_k_bound(self, scalar_setup):
        # logistic envelope for l = b = 1 forces max u <= K = 1
        _, _, _, fsc, env = scalar_setup
        profile = extend_to_entire(fsc, env, [40.0, 60.0], window=10.0,
                                   tol=1e-4, dz=0.02)
        assert profile.u.values.max() <= 1.0 + 1e-6
        assert profile.info["k_bound_violation"] == 0.0

    def test_no_stabilization_raises(self, scalar_setup):
        _, _, _, fsc, env = scalar_setup
        with pytest.raises(NumericalError):
            extend_to_entire(fsc, env, [12.0, 16.0], window=4.0, tol=1e-12, dz=0.04)


class TestVerifyWave:
    def test_scalar_wave_checks(self, scalar_profile):
        ver = verify_wave(scalar_profile, decay_expected=0.5, floor_required=0.9)
        assert ver.downstream_pass and ver.downstream_sup < 1e-3
        assert abs(ver.decay_rate - 0.5) <= 0.05
        assert ver.upstream_pass and ver.upstream_floor >= 0.9

    def test_zero_function(self, scalar_profile):
        g = scalar_profile.u.grid
        zero = WaveProfile(
            e=(1.0,), c=2.5, a=g.z1, u=GridField(np.zeros((1, g.n_t, g.n_z)), g),
            trapping_violation=0.0, pde_residual=0.0,
            downstream_decay_rate=float("nan"), upstream_floor=0.0, iterations=0,
        )
        ver = verify_wave(zero, decay_expected=0.5, floor_required=0.1)
        assert ver.downstream_pass
        assert not ver.upstream_pass


@pytest.fixture(scope="module")
def critical_setup():
    # a and dz both matter here: the fit window must clear the subsolution
    # support edge (~M3), and the O(dz) splitting of the discrete double
    # characteristic root pollutes the tail beyond |z| ~ 1/dz
    sys = scalar_system()
    curve = minimal_speed(static_frame(sys, e=[1]), tol=1e-8)
    fsc = wave_frame(sys, curve.c_star)
    grid = cylinder_grid(fsc, 60.0, n_z=6001)
    env = build_envelopes_critical(fsc, curve.mu_star, curve.c_star, grid)
    return curve, fsc, grid, env


class TestCriticalPipeline:
    def test_g_gamma_strictly_negative(self, critical_setup):
        # lambda_{1.5} + 2 * 1.5 = -3.25 + 3 = -0.25
        curve, _, _, env = critical_setup
        assert env.g_gamma == pytest.approx(-0.25, abs=1e-6)

    def test_slope_identity_at_mu_star(self, critical_setup):
        curve, _, _, _ = critical_setup
        dlam = curve.evaluator.derivative(curve.mu_star)
        assert dlam == pytest.approx(-curve.c_star, abs=1e-4)

    def test_supersolution_positive(self, critical_setup):
        _, _, _, env = critical_setup
        assert env.ubar.values.min() >= 0
        assert (env.ubar.values - env.ulow.values).min() >= -1e-12
        sel = env.ubar.grid.z >= 0
        assert env.ulow.values[:, :, sel].max() == 0.0

    def test_relaxation_inner_matches_ptc(self, critical_setup):
        # the parabolic-flow inner solver (quadratic term implicit per point)
        # and the pseudo-transient steady solver agree on a short cylinder
        curve, fsc, _, _ = critical_setup
        grid8 = cylinder_grid(fsc, 8.0, n_z=401)
        env8 = build_envelopes_critical(fsc, curve.mu_star, curve.c_star, grid8)
        p_direct = critical_fixed_point(fsc, env8, 8.0, tol=1e-8, grid=grid8)
        p_relax = critical_fixed_point(fsc, env8, 8.0, tol=1e-8, grid=grid8,
                                       force_relaxation=True)
        assert np.abs(p_direct.u.values - p_relax.u.values).max() < 1e-5
        assert p_relax.trapping_violation < 1e-8

    def test_critical_wave(self, critical_setup):
        curve, fsc, grid, env = critical_setup
        profile = critical_fixed_point(fsc, env, 60.0, tol=1e-8, grid=grid,
                                       record_iterates=True)
        assert profile.trapping_violation < 1e-5
        assert profile.pde_residual < 1e-6
        ver = verify_wave(profile, decay_expected=curve.mu_star, critical=True,
                          mu_star=curve.mu_star, decay_rtol=0.2)
        assert ver.shape_pass and abs(ver.shape_slope - 1.0) <= 0.2
        for lo, hi in profile.info["iterate_bounds"]:
            assert lo >= -1e-9 and hi >= -1e-9


class TestGridConvergence:
    def test_profile_invariant_under_dz_refinement(self, scalar_setup):
        # second-order discretization: halving dz moves the profile by O(dz^2)
        _, _, _, fsc, env = scalar_setup
        p1 = fixed_point_truncated(fsc, env, 12.0, tol=1e-9, n_z=601)
        p2 = fixed_point_truncated(fsc, env, 12.0, tol=1e-9, n_z=1201)
        assert np.abs(p2.u.values[:, :, ::2] - p1.u.values).max() < 5e-4

    def test_profile_invariant_under_dt_refinement(self):
        from conftest import time_periodic_l
        from wavekit.coeffs import nondimensionalize
        from wavekit.frame import make_frame, transform_coefficients

        sys = scalar_system(l_field=time_periodic_l(1.0, 0.5))
        curve = minimal_speed(static_frame(sys, e=[1]), tol=1e-8)
        roots = speed_roots(curve, 2.5, tol=1e-10)
        fsc = transform_coefficients(nondimensionalize(sys),
                                     make_frame([1.0], 2.5, mode="space-homogeneous"))
        gamma = 0.5 * min(roots.mu_wedge, roots.mu_vee - roots.mu_wedge)
        profs = {}
        for n_t in (32, 64):
            grid = cylinder_grid(fsc, 12.0, n_t=n_t, n_z=601)
            cell = _cell_grid_for(fsc, grid)
            ev = EigenEvaluator(fsc, grid=cell)
            env = build_envelopes_supercritical(
                fsc, roots, ev.pair(roots.mu_wedge), ev.pair(roots.mu_wedge + gamma), cell
            )
            profs[n_t] = fixed_point_truncated(fsc, env, 12.0, tol=1e-8, grid=grid)
        diff = np.abs(profs[64].u.values[:, ::2, :] - profs[32].u.values).max()
        assert diff < 1e-2  # backward Euler relaxation: O(dt)


class TestSpaceHomogeneousHigherDimension:
    def test_anisotropic_direction_reduction(self):
        # n = 2, A = diag(1, 4), direction e = (0.6, 0.8): the frame reduction
        # collapses to a 1-D problem with effective diffusion e^T A e = 2.92
        from conftest import const
        from wavekit.coeffs import KPPSystem, nondimensionalize
        from wavekit.frame import make_frame, transform_coefficients

        c2 = lambda v: const(v, n=2)
        sys = KPPSystem(
            1, 2,
            (((c2(1.0), c2(0.0)), (c2(0.0), c2(4.0))),),
            ((c2(0.0), c2(0.0)),),
            ((c2(1.0),),), ((c2(1.0),),),
        )
        e = [0.6, 0.8]
        ae = 2.92
        curve = minimal_speed(static_frame(sys, e=e), tol=1e-8)
        assert curve.c_star == pytest.approx(2 * np.sqrt(ae), abs=1e-6)
        assert curve.mu_star == pytest.approx(1 / np.sqrt(ae), abs=1e-5)
        roots = speed_roots(curve, 4.0, tol=1e-10)
        mu_oracle = (4 - np.sqrt(16 - 4 * ae)) / (2 * ae)
        assert roots.mu_wedge == pytest.approx(mu_oracle, abs=1e-8)
        fsc = transform_coefficients(nondimensionalize(sys),
                                     make_frame(e, 4.0, mode="space-homogeneous"))
        ev = EigenEvaluator(fsc)
        gamma = 0.5 * min(roots.mu_wedge, roots.mu_vee - roots.mu_wedge)
        env = build_envelopes_supercritical(
            fsc, roots, ev.pair(roots.mu_wedge), ev.pair(roots.mu_wedge + gamma), ev.grid
        )
        profile = fixed_point_truncated(fsc, env, 24.0, tol=1e-8, n_z=1201)
        assert profile.trapping_violation < 1e-8
        assert abs(profile.downstream_decay_rate - mu_oracle) / mu_oracle < 0.05


class TestSpacePeriodicWave:
    def test_rational_frame_pipeline(self):
        # l(x) = 1 + 0.5 cos(2 pi x): the moving frame at rational c = 3 makes
        # the coefficients genuinely (t, z)-periodic; exercises the rational
        # frame transform, the power-iteration eigensolver in the c-frame and
        # the cell-aligned envelope extension
        from conftest import space_periodic_l
        from wavekit.frame import make_frame
        from wavekit.coeffs import nondimensionalize
        from wavekit.frame import transform_coefficients

        sys = scalar_system(l_field=space_periodic_l(1.0, 0.5))
        curve = minimal_speed(static_frame(sys, e=[1]), tol=1e-7)
        assert curve.c_star == pytest.approx(2.003, abs=2e-3)
        roots = speed_roots(curve, 3, tol=1e-8)
        fsc = transform_coefficients(nondimensionalize(sys), make_frame([1], 3))
        assert not fsc.is_time_independent()  # drift mixes x into t
        grid = cylinder_grid(fsc, 8.0, n_t=64, points_per_cell=64)
        cell = _cell_grid_for(fsc, grid)
        ev = EigenEvaluator(fsc, grid=cell)
        gamma = 0.5 * min(roots.mu_wedge, roots.mu_vee - roots.mu_wedge)
        env = build_envelopes_supercritical(
            fsc, roots, ev.pair(roots.mu_wedge), ev.pair(roots.mu_wedge + gamma), cell
        )
        profile = fixed_point_truncated(fsc, env, 8.0, tol=1e-6, grid=grid)
        assert profile.trapping_violation < 1e-8
        assert abs(profile.downstream_decay_rate - roots.mu_wedge) / roots.mu_wedge < 0.15
        assert profile.upstream_floor > 0.3


class TestTimePeriodicWave:
    def test_supercritical_time_periodic(self):
        # l(t) = 1 + 0.5 sin(2 pi t): c* = 2 by time averaging; wave at c = 2.5
        sys = scalar_system(l_field=time_periodic_l(1.0, 0.5))
        curve = minimal_speed(static_frame(sys, e=[1]), tol=1e-8)
        assert curve.c_star == pytest.approx(2.0, abs=1e-6)
        roots = speed_roots(curve, 2.5, tol=1e-10)
        fsc = wave_frame(sys, 2.5)
        grid = cylinder_grid(fsc, 16.0, n_t=64, n_z=401)
        cell = _cell_grid_for(fsc, grid)
        ev = EigenEvaluator(fsc, grid=cell)
        gamma = 0.5 * min(roots.mu_wedge, roots.mu_vee - roots.mu_wedge)
        env = build_envelopes_supercritical(
            fsc, roots, ev.pair(roots.mu_wedge), ev.pair(roots.mu_wedge + gamma), cell
        )
        profile = fixed_point_truncated(fsc, env, 16.0, tol=1e-6, grid=grid)
        # backward-Euler relaxation: trapping is exact, the centered-difference
        # residual carries the O(dt) time-discretization mismatch
        assert profile.trapping_violation < 1e-8
        assert abs(profile.downstream_decay_rate - 0.5) / 0.5 < 0.1
        assert profile.upstream_floor > 0.5
