import json

import numpy as np
import pytest

from dynopf import acopf, grid


@pytest.fixture(scope="module")
def wscc9():
    return grid.load_bundled_case("wscc9")


@pytest.fixture(scope="module")
def nominal(wscc9):
    load = grid.perturb_loads(wscc9, 0.0, 0)
    sample = acopf.solve_reference(wscc9, load, acopf.SolverConfig(n_starts=1))
    return load, sample


def _two_bus(p_cost=(0.0, 1.0, 0.0), g=1.0, b=0.0, pmin=0.0):
    doc = {
        "base_mva": 100.0,
        "buses": [
            {"id": 0, "vmin": 0.5, "vmax": 1.5, "pd": 0.0, "qd": 0.0, "ref": True},
            {"id": 1, "vmin": 0.5, "vmax": 1.5, "pd": 0.0, "qd": 0.0, "ref": False},
        ],
        "lines": [{"from": 0, "to": 1, "g": g, "b": b,
                   "angle_limit_rad": 1.0, "smax": 10.0}],
        "generators": [{"bus": 0, "pmin": pmin, "pmax": 5.0, "qmin": -5.0,
                        "qmax": 5.0, "c2": p_cost[0], "c1": p_cost[1],
                        "c0": p_cost[2], "xd_prime": 0.1, "inertia": 0.1,
                        "damping": 0.01}],
    }
    return grid.parse_case(json.dumps(doc))


def _dispatch(net, p=0.0, q=0.0, vm=1.0, va=0.0):
    return acopf.DispatchPoint(
        np.full(net.n_gen, float(p)), np.full(net.n_gen, float(q)),
        np.full(net.n_bus, float(vm)), np.full(net.n_bus, float(va)))


# --------------------------------------------------------------------------
# cost
# --------------------------------------------------------------------------

def test_cost_linear():
    net = _two_bus(p_cost=(0.0, 1.0, 0.0))
    assert acopf.dispatch_cost(net, _dispatch(net, p=2.0)) == pytest.approx(2.0)


def test_cost_quadratic():
    net = _two_bus(p_cost=(1.0, 0.0, 0.0))
    assert acopf.dispatch_cost(net, _dispatch(net, p=3.0)) == pytest.approx(9.0)


def test_cost_matches_polynomial_at_optimum(wscc9, nominal):
    _, sample = nominal
    p = sample.optimum.p_r
    by_hand = sum(g.c2 * p[i] ** 2 + g.c1 * p[i] + g.c0
                  for i, g in enumerate(wscc9.generators))
    assert sample.objective_value == pytest.approx(by_hand, rel=1e-12)
    assert acopf.dispatch_cost(wscc9, sample.optimum) == pytest.approx(by_hand, rel=1e-12)


def test_cost_permutation_invariant(wscc9, nominal):
    _, sample = nominal
    perm = [2, 0, 1]
    gens = tuple(wscc9.generators[i] for i in perm)
    net_p = grid.Network(wscc9.base_power, wscc9.buses, wscc9.lines, gens,
                         wscc9.reference_bus)
    d_p = acopf.DispatchPoint(sample.optimum.p_r[perm], sample.optimum.q_r[perm],
                              sample.optimum.v_mag, sample.optimum.v_ang)
    assert acopf.dispatch_cost(net_p, d_p) == pytest.approx(
        acopf.dispatch_cost(wscc9, sample.optimum), rel=1e-14)


def test_cost_dimension_mismatch(wscc9):
    bad = acopf.DispatchPoint(np.zeros(2), np.zeros(2), np.ones(9), np.zeros(9))
    with pytest.raises(ValueError):
        acopf.dispatch_cost(wscc9, bad)


# --------------------------------------------------------------------------
# flows and residuals
# --------------------------------------------------------------------------

def test_flow_equal_voltages_is_zero():
    net = _two_bus(g=1.3, b=-7.0)
    s_f, s_t = acopf.line_flows(net, _dispatch(net, vm=1.0, va=0.0))
    assert s_f[0] == 0 and s_t[0] == 0


def test_flow_direct_arithmetic():
    # Y = 1 + 0j, V_from = 1, V_to = 0.5 (both at angle 0)
    net = _two_bus(g=1.0, b=0.0)
    d = acopf.DispatchPoint(np.zeros(1), np.zeros(1),
                            np.array([1.0, 0.5]), np.zeros(2))
    s_f, _ = acopf.line_flows(net, d)
    assert s_f[0] == pytest.approx(0.5 + 0j)


def test_flat_zero_network_balances():
    net = _two_bus(pmin=0.0)
    load = grid.LoadProfile(np.zeros(2), np.zeros(2))
    res = acopf.balance_residuals(net, _dispatch(net), load)
    np.testing.assert_array_equal(res, np.zeros(2, dtype=complex))
    report = acopf.static_violations(net, _dispatch(net), load)
    assert report.max_violation() == 0.0


def test_residual_linear_in_load(wscc9, nominal):
    load, sample = nominal
    base = acopf.balance_residuals(wscc9, sample.optimum, load)
    bumped = grid.LoadProfile(load.p_d + np.eye(9)[4] * 0.1, load.q_d)
    res = acopf.balance_residuals(wscc9, sample.optimum, bumped)
    assert (res[4] - base[4]).real == pytest.approx(-0.1, rel=1e-12)
    np.testing.assert_allclose(np.delete(res, 4), np.delete(base, 4), atol=0)


def test_optimum_residuals_within_tolerance(wscc9, nominal):
    load, sample = nominal
    res = acopf.balance_residuals(wscc9, sample.optimum, load)
    assert np.abs(res).max() <= 1e-6
    assert np.abs(res).max() <= sample.achieved_eq_tol + 1e-15


def test_flow_consistency_exact_path(wscc9):
    # the residual equals generation - load - scattered flows through the
    # very same arithmetic, so the identity holds bitwise
    rng = np.random.default_rng(0)
    cg, cf, ct = acopf._incidence(wscc9)
    for _ in range(20):
        d = acopf.DispatchPoint(rng.uniform(0, 2, 3), rng.uniform(-1, 1, 3),
                                rng.uniform(0.9, 1.1, 9), rng.uniform(-0.3, 0.3, 9))
        load = grid.perturb_loads(wscc9, 0.2, int(rng.integers(1 << 31)))
        s_f, s_t = acopf.line_flows(wscc9, d)
        manual = (cg @ (d.p_r + 1j * d.q_r) - (load.p_d + 1j * load.q_d)
                  - cf @ s_f - ct @ s_t)
        res = acopf.balance_residuals(wscc9, d, load)
        assert np.array_equal(manual, res)


def test_static_violations_single_voltage_excursion(wscc9, nominal):
    load, sample = nominal
    vm = sample.optimum.v_mag.copy()
    vm[4] = wscc9.buses[4].v_max + 0.01
    d = acopf.DispatchPoint(sample.optimum.p_r, sample.optimum.q_r, vm,
                            sample.optimum.v_ang)
    rep = acopf.static_violations(wscc9, d, load)
    assert rep.v_bounds[4] == pytest.approx(0.01, rel=1e-9)
    assert np.all(rep.v_bounds[np.arange(9) != 4] == 0)


def test_violations_zero_at_optimum(wscc9, nominal):
    load, sample = nominal
    rep = acopf.static_violations(wscc9, sample.optimum, load)
    assert rep.max_violation() <= 1e-6
    assert rep.ref_angle == 0.0


# --------------------------------------------------------------------------
# analytic gradients
# --------------------------------------------------------------------------

def test_balance_jacobians_match_finite_differences(wscc9):
    rng = np.random.default_rng(1)
    load = grid.perturb_loads(wscc9, 0.1, 0)
    eps = 1e-7
    for _ in range(20):
        d = acopf.DispatchPoint(rng.uniform(0.2, 2, 3), rng.uniform(-1, 1, 3),
                                rng.uniform(0.9, 1.1, 9), rng.uniform(-0.3, 0.3, 9))
        drp, drq = acopf.balance_jacobians(wscc9, d)
        blocks = {"p_r": d.p_r, "q_r": d.q_r, "v_mag": d.v_mag, "v_ang": d.v_ang}
        for name, vec in blocks.items():
            j = int(rng.integers(len(vec)))
            def residuals(x):
                mod = {k: np.array(v) for k, v in blocks.items()}
                mod[name] = mod[name].copy()
                mod[name][j] = x
                dd = acopf.DispatchPoint(mod["p_r"], mod["q_r"],
                                         mod["v_mag"], mod["v_ang"])
                r = acopf.balance_residuals(wscc9, dd, load)
                return r.real, r.imag

            rp1, rq1 = residuals(vec[j] + eps)
            rp0, rq0 = residuals(vec[j] - eps)
            fd_p = (rp1 - rp0) / (2 * eps)
            fd_q = (rq1 - rq0) / (2 * eps)
            scale = max(np.abs(fd_p).max(), np.abs(fd_q).max(), 1.0)
            assert np.abs(drp[name][:, j] - fd_p).max() / scale <= 1e-5
            assert np.abs(drq[name][:, j] - fd_q).max() / scale <= 1e-5


def test_cost_gradient_matches_finite_differences(wscc9):
    rng = np.random.default_rng(2)
    d = acopf.DispatchPoint(rng.uniform(0.2, 2, 3), rng.uniform(-1, 1, 3),
                            np.ones(9), np.zeros(9))
    grad = acopf.dispatch_cost_gradient(wscc9, d)
    eps = 1e-6
    for j in range(3):
        p1 = d.p_r.copy(); p1[j] += eps
        p0 = d.p_r.copy(); p0[j] -= eps
        fd = (acopf.dispatch_cost(wscc9, acopf.DispatchPoint(p1, d.q_r, d.v_mag, d.v_ang))
              - acopf.dispatch_cost(wscc9, acopf.DispatchPoint(p0, d.q_r, d.v_mag, d.v_ang))) / (2 * eps)
        assert grad[j] == pytest.approx(fd, rel=1e-7)


# --------------------------------------------------------------------------
# reference solver and the Newton power-flow oracle
# --------------------------------------------------------------------------

def test_newton_power_flow_balances(wscc9, nominal):
    load, sample = nominal
    pf = acopf.newton_power_flow(wscc9, load, sample.optimum.p_r,
                                 sample.optimum.v_mag[wscc9.gen_bus])
    res = acopf.balance_residuals(wscc9, pf, load)
    assert np.abs(res).max() <= 1e-9
    # the slack generator recovers the optimizer's active power
    assert pf.p_r[0] == pytest.approx(sample.optimum.p_r[0], abs=1e-6)


def test_local_optimality_probe(wscc9, nominal):
    # nudging one non-slack generator up and re-solving the voltages must
    # not find a cheaper balanced point
    load, sample = nominal
    base_cost = sample.objective_value
    p = sample.optimum.p_r.copy()
    p[1] += 1e-3
    pf = acopf.newton_power_flow(wscc9, load, p, sample.optimum.v_mag[wscc9.gen_bus])
    res = acopf.balance_residuals(wscc9, pf, load)
    balanced = np.abs(res).max() <= 1e-8
    assert (not balanced) or acopf.dispatch_cost(wscc9, pf) > base_cost


def test_infeasible_at_ten_times_load(wscc9):
    load = grid.perturb_loads(wscc9, 0.0, 0)
    big = grid.LoadProfile(load.p_d * 10, load.q_d * 10)
    with pytest.raises(acopf.InfeasibleError):
        acopf.solve_reference(wscc9, big, acopf.SolverConfig(n_starts=2))


def test_solver_reports_achieved_tolerances(wscc9, nominal):
    _, sample = nominal
    assert sample.achieved_eq_tol <= 1e-6
    assert sample.achieved_ineq_tol <= 1e-8


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_dataset(wscc9):
    return acopf.build_dataset(wscc9, 20, 0.2, seed=7,
                               cfg=acopf.SolverConfig(n_starts=1))


def test_split_sizes(tiny_dataset):
    _, splits = tiny_dataset
    assert len(splits["train"]) == 16
    assert len(splits["val"]) == 2
    assert len(splits["test"]) == 2


def test_split_sizes_100():
    s = acopf.split_indices(100, seed=0)
    assert (len(s["train"]), len(s["val"]), len(s["test"])) == (80, 10, 10)
    all_idx = np.concatenate([s["train"], s["val"], s["test"]])
    assert sorted(all_idx.tolist()) == list(range(100))


def test_dataset_samples_feasible(wscc9, tiny_dataset):
    samples, _ = tiny_dataset
    for s in samples:
        rep = acopf.static_violations(wscc9, s.optimum, s.load)
        assert rep.max_violation() <= 1e-6


def test_dataset_deterministic_bytes(wscc9, tiny_dataset, tmp_path):
    samples, splits = tiny_dataset
    again, splits2 = acopf.build_dataset(wscc9, 20, 0.2, seed=7,
                                         cfg=acopf.SolverConfig(n_starts=1))
    manifest = acopf.dataset_manifest(wscc9, 20, 0.2, 7, acopf.SolverConfig(n_starts=1))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    acopf.save_dataset(a, samples, splits, manifest)
    acopf.save_dataset(b, again, splits2, manifest)
    assert a.read_bytes() == b.read_bytes()


def test_dataset_round_trip(wscc9, tiny_dataset, tmp_path):
    samples, splits = tiny_dataset
    path = tmp_path / "d.csv"
    manifest = acopf.dataset_manifest(wscc9, 20, 0.2, 7, acopf.SolverConfig())
    acopf.save_dataset(path, samples, splits, manifest)
    loaded, splits2 = acopf.load_dataset(path)
    assert len(loaded) == len(samples)
    for a, b in zip(samples, loaded):
        np.testing.assert_array_equal(a.optimum.p_r, b.optimum.p_r)
        np.testing.assert_array_equal(a.load.q_d, b.load.q_d)
        assert a.objective_value == b.objective_value
    for k in splits:
        np.testing.assert_array_equal(splits[k], splits2[k])
    with open(str(path) + ".manifest.json") as f:
        m = json.load(f)
    assert m["net_hash"] == grid.network_hash(wscc9)


def test_dataset_minimum_size(wscc9):
    with pytest.raises(ValueError):
        acopf.build_dataset(wscc9, 5, 0.2, seed=0)
