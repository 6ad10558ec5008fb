import numpy as np
import pytest

from conftest import const, scalar_system, system_2x2
from wavekit.cauchy import (
    bump_initial,
    front_initial,
    logistic_envelope,
    measure_spreading_speed,
    nonexistence_probe,
    simulate,
)
from wavekit.coeffs import KPPSystem, nondimensionalize
from wavekit.errors import InputError, NumericalError


class TestLogisticEnvelope:
    def test_scalar(self):
        assert logistic_envelope(scalar_system()) == (1.0, 1.0)

    def test_2x2_row_sums(self):
        r, K = logistic_envelope(system_2x2())
        assert (r, K) == (1.0, 2.0)

    def test_inequality_random_sampling(self, rng):
        # L u - (B u) o u <= r (1^T u)(K 1 - u) componentwise for u >= 0
        sys = system_2x2(l11=-0.5, l12=2.0, l21=1.0, l22=0.3, b=1.0)
        sysn = nondimensionalize(sys)
        r, K = logistic_envelope(sysn)
        N = sysn.N
        for _ in range(2000):
            u = rng.uniform(0, 3 * K, size=N)
            t, x = rng.uniform(0, 1, size=2)
            L = np.array([[float(sysn.L[i][j].eval(t, [x])) for j in range(N)] for i in range(N)])
            B = np.array([[float(sysn.B[i][j].eval(t, [x])) for j in range(N)] for i in range(N)])
            lhs = L @ u - (B @ u) * u
            rhs = r * u.sum() * (K - u)
            assert np.all(lhs <= rhs + 1e-10)

    def test_requires_positive_competition(self):
        with pytest.raises(InputError):
            logistic_envelope(scalar_system(b=0.0))


class TestSimulate:
    def test_logistic_attractor(self):
        # flat data: the PDE reduces to the logistic ODE, u(10) -> 1
        run = simulate(scalar_system(), np.full((1, 2048), 0.1), 10.0, 50.0, n_x=2048)
        assert np.abs(run.snapshots[-1] - 1.0).max() < 1e-3

    def test_extinction_decay(self):
        # l = -1: linearized decay dominates, sup u(t) <= e^{-t} sup u0 (1+o(1))
        run = simulate(scalar_system(l=-1.0), np.full((1, 2048), 0.5), 5.0, 50.0, n_x=2048)
        assert run.snapshots[-1].max() <= 0.5 * np.exp(-5.0) * 1.2

    def test_front_forms_and_interior_saturates(self):
        x = np.linspace(-60, 60, 2048)
        run = simulate(scalar_system(), bump_initial(x, 1), 25.0, 60.0, n_x=2048)
        final = run.snapshots[-1][0]
        # interior saturated at the steady state 1, front still inside domain
        assert abs(final[len(final) // 2] - 1.0) < 1e-3
        assert final[0] < 1e-2 and final[-1] < 1e-2

    def test_mass_positivity(self):
        x = np.linspace(-50, 50, 2048)
        run = simulate(system_2x2(), bump_initial(x, 2), 10.0, 50.0, n_x=2048)
        assert run.snapshots.min() >= 0.0

    def test_negative_initial_rejected(self):
        with pytest.raises(InputError):
            simulate(scalar_system(), np.full((1, 2048), -0.1), 1.0, 50.0, n_x=2048)


@pytest.fixture(scope="module")
def kpp_run():
    x = np.linspace(-120, 120, 3072)
    return simulate(scalar_system(), bump_initial(x, 1), 50.0, 120.0, n_x=3072)


class TestSpreadingSpeed:
    def test_speed_close_to_two(self, kpp_run):
        m = measure_spreading_speed(kpp_run, 0.5)
        assert abs(m.speed_right - 2.0) / 2.0 < 0.05
        assert abs(m.speed_left - 2.0) / 2.0 < 0.05
        assert m.r2_right > 0.999

    def test_theta_robustness(self, kpp_run):
        m1 = measure_spreading_speed(kpp_run, 0.1)
        m2 = measure_spreading_speed(kpp_run, 0.5)
        assert abs(m1.speed_right - m2.speed_right) / 2.0 < 0.02

    def test_domain_exhaustion_guard(self):
        x = np.linspace(-30, 30, 2048)
        run = simulate(scalar_system(), bump_initial(x, 1), 20.0, 30.0, n_x=2048)
        with pytest.raises(NumericalError, match="exhausted"):
            measure_spreading_speed(run, 0.5)

    def test_scalar_envelope_dominates_components(self):
        # v_t = a_max v'' + r (N v)(K - v) from dominating data bounds each
        # component of the system run at every snapshot
        sys = system_2x2()
        r, K = logistic_envelope(sys)
        x = np.linspace(-50, 50, 1024)
        init = bump_initial(x, 2, amp=0.4)
        run = simulate(sys, init, 8.0, 50.0, n_x=1024)
        # scalar comparison system: L = r N K, B = r N (so r v(K - v) * N)
        N = 2
        comp = KPPSystem(
            1, 1,
            (((const(1.0),),),),
            ((const(0.0),),),
            ((const(r * N * K),),),
            ((const(r * N),),),
        )
        init_v = init.max(axis=0, keepdims=True)
        run_v = simulate(comp, init_v, 8.0, 50.0, n_x=1024)
        stride = max(1, len(run.times) // len(run_v.times))
        for k, t in enumerate(run.times):
            kv = np.argmin(np.abs(run_v.times - t))
            if abs(run_v.times[kv] - t) > 1e-9:
                continue
            dom = run_v.snapshots[kv, 0]
            assert (run.snapshots[k] <= dom[None, :] + 1e-8).all()


class TestNonexistenceProbe:
    def test_scalar_subcritical_floor(self):
        rep = nonexistence_probe(scalar_system(), 1.0, 1.0, 2.0,
                                 t_final=30.0, X=90.0, n_x=2048)
        assert rep.status == "no_wave_signature"
        assert rep.floor_ratio >= 0.5
        assert rep.upstream_reference > 0.9

    def test_supercritical_guard(self):
        with pytest.raises(InputError, match="precondition"):
            nonexistence_probe(scalar_system(), 1.0, 3.0, 2.0)

    def test_2x2_half_speed(self):
        c_star = 2 * np.sqrt(2)
        rep = nonexistence_probe(system_2x2(), 1.0, c_star / 2, c_star,
                                 t_final=24.0, X=80.0, n_x=2048)
        assert rep.status == "no_wave_signature"
        assert rep.floor >= 0.5 * rep.upstream_reference
