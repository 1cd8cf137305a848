import math

import numpy as np
import pytest
from scipy.linalg import expm

from dynopf import dynamics as dyn
from dynopf import grid


@pytest.fixture(scope="module")
def wscc9():
    return grid.load_bundled_case("wscc9")


def _params(x_d=1.0, m=0.1, d=0.0, p_m=0.0, e_q0=1.0, v=1.0, th=0.0):
    return dyn.MachineParams(x_d_prime=x_d, inertia=m, damping=d, p_m=p_m,
                             e_q0=e_q0, v_mag=v, v_ang=th)


# --------------------------------------------------------------------------
# stator currents and the reduction identity
# --------------------------------------------------------------------------

def test_stator_currents_aligned_emf():
    p = _params()
    i_d, i_q = dyn.stator_currents(p, e_d=0.0, e_q=1.0, delta=0.0)
    assert i_d == pytest.approx(0.0, abs=1e-15)
    assert i_q == pytest.approx(0.0, abs=1e-15)


def test_stator_currents_quadrature():
    p = _params(x_d=1.0, v=1.0, th=0.0)
    i_d, i_q = dyn.stator_currents(p, e_d=0.0, e_q=1.0, delta=math.pi / 2)
    assert i_d == pytest.approx(1.0, rel=1e-12)
    assert i_q == pytest.approx(1.0, rel=1e-12)


def test_reduction_identity_random_states():
    # with e_d = 0 the two-axis electrical power collapses to the
    # single-sine form used by the reduced model
    rng = np.random.default_rng(7)
    for _ in range(200):
        x_d = rng.uniform(0.05, 1.5)
        v = rng.uniform(0.8, 1.2)
        th = rng.uniform(-0.6, 0.6)
        e_q = rng.uniform(0.5, 2.0)
        delta = rng.uniform(-3, 3)
        p = _params(x_d=x_d, v=v, th=th)
        i_d, i_q = dyn.stator_currents(p, 0.0, e_q, delta)
        p_two_axis = 0.0 * i_d + e_q * i_q
        p_reduced = (e_q * v / x_d) * math.sin(delta - th)
        assert abs(p_two_axis - p_reduced) <= 1e-12


# --------------------------------------------------------------------------
# swing equation right-hand side
# --------------------------------------------------------------------------

def test_swing_rhs_steady_state(wscc9):
    gen = wscc9.generators[0]
    d0, e_q0, w0 = dyn.initial_conditions(gen, 0.9, 0.3, 1.04, 0.05)
    params = dyn.machine_params_from_dispatch(gen, 0.9, 0.3, 1.04, 0.05)
    out = dyn.swing_rhs(params, dyn.MachineState(d0, w0))
    assert out.delta == pytest.approx(0.0, abs=1e-12)
    assert out.omega == pytest.approx(0.0, abs=1e-10)


def test_swing_rhs_synchronous_speed_freezes_angle():
    p = _params(p_m=0.7, m=0.2, d=0.3)
    out = dyn.swing_rhs(p, dyn.MachineState(1.234, dyn.OMEGA_SYNC))
    assert out.delta == 0.0


def test_swing_rhs_direct_substitution():
    # p_m = 1, K = 1, delta - theta = pi/6, d = 0, m = 0.1 -> accel = 5
    p = _params(x_d=1.0, m=0.1, d=0.0, p_m=1.0, e_q0=1.0, v=1.0, th=0.0)
    out = dyn.swing_rhs(p, dyn.MachineState(math.pi / 6, dyn.OMEGA_SYNC))
    assert out.omega == pytest.approx(5.0, rel=1e-12)


# --------------------------------------------------------------------------
# initial conditions
# --------------------------------------------------------------------------

def test_initial_conditions_unloaded(wscc9):
    gen = wscc9.generators[0]
    d0, e_q0, w0 = dyn.initial_conditions(gen, 0.0, 0.0, 1.0, 0.0)
    assert d0 == 0.0
    assert e_q0 == pytest.approx(1.0, rel=1e-15)
    assert w0 == dyn.OMEGA_SYNC


def test_initial_conditions_known_point():
    d0, e_q0, w0 = dyn._initial_conditions_xd(1.0, 1.0, 0.0, 1.0, 0.0)
    assert d0 == pytest.approx(math.pi / 4, rel=1e-14)
    assert e_q0 == pytest.approx(math.sqrt(2.0), rel=1e-14)


def _ic_residuals(x_d, p_r, q_r, v, th, d0, e_q0):
    r_p = e_q0 * v * math.sin(d0 - th) / x_d - p_r
    r_q = (e_q0 * v * math.cos(d0 - th) - v * v) / x_d - q_r
    return r_p, r_q


def test_initial_conditions_residual_oracle():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(1000):
        x_d = rng.uniform(0.05, 1.0)
        p_r = rng.uniform(0.0, 3.0)
        q_r = rng.uniform(-3.0, 3.0)
        v = rng.uniform(0.8, 1.2)
        th = rng.uniform(-0.6, 0.6)
        d0, e_q0, _ = dyn._initial_conditions_xd(x_d, p_r, q_r, v, th)
        r_p, r_q = _ic_residuals(x_d, p_r, q_r, v, th, d0, e_q0)
        worst = max(worst, abs(r_p), abs(r_q))
    assert worst <= 1e-10


def test_initial_conditions_newton_oracle():
    # independent Newton solve of the two defining equations
    rng = np.random.default_rng(5)
    for _ in range(50):
        x_d = rng.uniform(0.05, 1.0)
        p_r = rng.uniform(0.1, 3.0)
        q_r = rng.uniform(-2.0, 3.0)
        v = rng.uniform(0.85, 1.15)
        th = rng.uniform(-0.5, 0.5)
        d0, e_q0, _ = dyn._initial_conditions_xd(x_d, p_r, q_r, v, th)

        x = np.array([th + 0.1, 1.0])  # (delta, e_q0) start
        for _ in range(60):
            dd, ee = x
            f = np.array(_ic_residuals(x_d, p_r, q_r, v, th, dd, ee))
            jac = np.array([
                [ee * v * math.cos(dd - th) / x_d, v * math.sin(dd - th) / x_d],
                [-ee * v * math.sin(dd - th) / x_d, v * math.cos(dd - th) / x_d],
            ])
            x = x - np.linalg.solve(jac, f)
        # normalize Newton's branch: flipping the EMF sign shifts the
        # angle by half a turn; the angle itself is modulo one turn
        if x[1] < 0:
            x = np.array([x[0] + math.pi, -x[1]])
        wrapped = (x[0] - d0 + math.pi) % (2 * math.pi) - math.pi
        assert wrapped == pytest.approx(0.0, abs=1e-9)
        assert x[1] == pytest.approx(e_q0, abs=1e-9)


def test_initial_conditions_degenerate_voltage(wscc9):
    with pytest.raises(dyn.DegenerateVoltageError):
        dyn.initial_conditions(wscc9.generators[0], 1.0, 0.0, 0.0, 0.0)


# --------------------------------------------------------------------------
# integrators
# --------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["euler", "rk4", "bosh3", "dopri5"])
def test_zero_field_constant(method):
    cfg = dyn.IntegratorConfig(method=method, dt=0.01, horizon=1.0)
    traj = dyn.integrate(lambda t, x: np.zeros_like(x), np.array([1.5, -2.0]), cfg)
    assert np.all(traj.states == np.array([1.5, -2.0]))
    assert traj.times[0] == 0.0
    assert traj.times[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("method,tol", [
    ("euler", 5e-3), ("rk4", 1e-9), ("bosh3", 1e-6), ("dopri5", 1e-8),
])
def test_exponential_decay(method, tol):
    cfg = dyn.IntegratorConfig(method=method, dt=1e-3, horizon=1.0)
    traj = dyn.integrate(lambda t, x: -x, np.array([1.0]), cfg)
    assert traj.states[-1, 0] == pytest.approx(math.exp(-1.0), abs=tol)


def test_equilibrium_preservation(wscc9):
    # steady-state start stays put over the full horizon
    for gi, gen in enumerate(wscc9.generators):
        d0, e_q0, w0 = dyn.initial_conditions(gen, 0.8, 0.2, 1.02, 0.04)
        params = dyn.machine_params_from_dispatch(gen, 0.8, 0.2, 1.02, 0.04)
        traj = dyn.integrate(dyn.swing_field(params), np.array([d0, w0]),
                             dyn.IntegratorConfig(method="dopri5"))
        assert np.abs(traj.delta - d0).max() <= 1e-6, f"generator {gi}"


def test_step_limit_raised():
    cfg = dyn.IntegratorConfig(method="rk4", dt=1e-4, horizon=1.0, max_steps=100)
    with pytest.raises(dyn.StepLimitError):
        dyn.integrate(lambda t, x: -x, np.array([1.0]), cfg)


def test_non_finite_detected():
    cfg = dyn.IntegratorConfig(method="rk4", dt=0.1, horizon=1.0)
    with pytest.raises(dyn.NonFiniteError):
        dyn.integrate(lambda t, x: x * 1e200, np.array([1e200]), cfg)


def _linearized_swing_matrix(m=0.5, d=0.2, k=2.0, omega_base=dyn.DEFAULT_OMEGA_BASE):
    # states (delta deviation, omega deviation)
    return np.array([[0.0, omega_base], [-k / m, -d / m]])


def test_order_of_convergence_linearized_swing():
    a = _linearized_swing_matrix()
    # scale down so euler at the base step is stable and in its asymptotic range
    a = a / np.linalg.norm(a, 2) * 4.0
    x0 = np.array([0.3, 0.0])
    horizon = 1.0
    exact = expm(a * horizon) @ x0

    def global_err(method, dt):
        cfg = dyn.IntegratorConfig(method=method, dt=dt, horizon=horizon)
        traj = dyn.integrate(lambda t, x: a @ x, x0, cfg)
        return np.linalg.norm(traj.states[-1] - exact)

    # base steps keep each method in its asymptotic range but well above
    # the accumulation floor (rk4 at 1e-3 would sit in roundoff noise)
    for method, order, dt in (("euler", 1, 2e-3), ("rk4", 4, 0.1)):
        e1 = global_err(method, dt)
        e2 = global_err(method, dt / 2)
        ratio = e1 / e2
        assert 2 ** order / 2 <= ratio <= 2 ** order * 2, (method, ratio)


def test_adaptive_matches_fine_rk4_on_stable_instances(wscc9):
    # 20 machine instances drawn across the operating box; the adaptive
    # integrator must agree with a very fine fixed-step reference
    rng = np.random.default_rng(11)
    gens = list(wscc9.generators)
    fine = dyn.IntegratorConfig(method="rk4", dt=1e-4, horizon=3.0)
    adaptive = dyn.IntegratorConfig(method="dopri5")
    worst = 0.0
    for i in range(20):
        gen = gens[i % len(gens)]
        p = rng.uniform(gen.p_min, gen.p_max)
        q = rng.uniform(gen.q_min, gen.q_max)
        v = rng.uniform(0.9, 1.1)
        th = rng.uniform(-0.5, 0.5)
        d0, _, w0 = dyn.initial_conditions(gen, p, q, v, th)
        params = dyn.machine_params_from_dispatch(gen, p, q, v, th)
        field = dyn.swing_field(params)
        end_fine = dyn.integrate(field, np.array([d0, w0]), fine).states[-1]
        end_adaptive = dyn.integrate(field, np.array([d0, w0]), adaptive).states[-1]
        worst = max(worst, np.abs(end_fine - end_adaptive).max())
    assert worst <= 1e-5


def test_damping_shrinks_frequency_envelope():
    # slow machine so the oscillation is well resolved; perturbed start
    d0, e_q0, _ = dyn._initial_conditions_xd(1.0, 0.5, 0.1, 1.0, 0.0)
    params = dyn.MachineParams(x_d_prime=1.0, inertia=2.0, damping=0.4,
                               p_m=0.5, e_q0=e_q0, v_mag=1.0, v_ang=0.0)
    cfg = dyn.IntegratorConfig(method="dopri5", rtol=1e-9, atol=1e-12, horizon=3.0)
    traj = dyn.integrate(dyn.swing_field(params), np.array([d0 + 0.4, 1.0]), cfg)
    dev = np.abs(traj.omega - dyn.OMEGA_SYNC)
    # envelope sampled at successive |omega - omega_s| peaks
    peaks = [dev[i] for i in range(1, len(dev) - 1)
             if dev[i] >= dev[i - 1] and dev[i] >= dev[i + 1] and dev[i] > 1e-9]
    assert len(peaks) >= 3
    assert all(b <= a * (1 + 1e-6) for a, b in zip(peaks, peaks[1:]))


def test_bosh3_slower_than_dopri5_in_oscillatory_regime():
    # accuracy-limited integration of a resolved transient: the order-3
    # method needs many more steps at equal tolerances
    d0, e_q0, _ = dyn._initial_conditions_xd(1.0, 0.5, 0.0, 1.0, 0.0)
    params = dyn.MachineParams(x_d_prime=1.0, inertia=2.0, damping=0.05,
                               p_m=0.5, e_q0=e_q0, v_mag=1.0, v_ang=0.0)
    x0 = np.array([d0 + 0.3, 1.0])
    steps = {}
    for method in ("dopri5", "bosh3"):
        cfg = dyn.IntegratorConfig(method=method, rtol=1e-6, atol=1e-9)
        steps[method] = len(dyn.integrate(dyn.swing_field(params), x0, cfg).times)
    assert steps["bosh3"] > 2 * steps["dopri5"]


# --------------------------------------------------------------------------
# dense resampling and the stability check
# --------------------------------------------------------------------------

def test_sample_on_grid_matches_analytic():
    cfg = dyn.IntegratorConfig(method="dopri5", dt=0.05, horizon=2.0,
                               rtol=1e-9, atol=1e-12)
    traj = dyn.integrate(lambda t, x: -x, np.array([1.0]), cfg)
    grid_t = np.linspace(0, 2, 41)
    vals = dyn.sample_on_grid(traj, grid_t)[:, 0]
    np.testing.assert_allclose(vals, np.exp(-grid_t), atol=1e-7)


def test_sample_on_grid_hits_accepted_points_exactly():
    cfg = dyn.IntegratorConfig(method="rk4", dt=0.25, horizon=1.0)
    traj = dyn.integrate(lambda t, x: np.sin(x) + 1.1, np.array([0.2]), cfg)
    vals = dyn.sample_on_grid(traj, traj.times)
    np.testing.assert_array_equal(vals, traj.states)


def test_sample_on_grid_rejects_extrapolation():
    cfg = dyn.IntegratorConfig(method="rk4", dt=0.25, horizon=1.0)
    traj = dyn.integrate(lambda t, x: -x, np.array([1.0]), cfg)
    with pytest.raises(ValueError):
        dyn.sample_on_grid(traj, np.array([0.0, 1.5]))


def test_stability_check_all_safe():
    traj = dyn.Trajectory(np.linspace(0, 3, 31), np.zeros((31, 2)))
    stable, margin, worst = dyn.stability_check(traj, math.pi / 2)
    assert stable and worst == 0.0
    assert margin == pytest.approx(math.pi / 2)


def test_stability_check_single_excursion():
    states = np.zeros((31, 2))
    states[17, 0] = math.pi / 2 + 0.1
    traj = dyn.Trajectory(np.linspace(0, 3, 31), states)
    stable, margin, worst = dyn.stability_check(traj, math.pi / 2)
    assert not stable
    assert worst == pytest.approx(0.1, rel=1e-12)
    assert margin == pytest.approx(-0.1, rel=1e-12)


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        dyn.Trajectory(np.array([0.1, 0.2]), np.zeros((2, 2)))  # must start at 0
    with pytest.raises(ValueError):
        dyn.Trajectory(np.array([0.0, 0.0]), np.zeros((2, 2)))  # strictly increasing
    with pytest.raises(ValueError):
        dyn.Trajectory(np.array([0.0, 1.0]), np.zeros((3, 2)))  # aligned lengths


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        dyn.IntegratorConfig(method="rk45")
    with pytest.raises(ValueError):
        dyn.IntegratorConfig(dt=-0.1)
