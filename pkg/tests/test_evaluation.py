import dataclasses
import json
import time

import numpy as np
import pytest

from dynopf import acopf, evaluation as ev, grid, node
from dynopf import training as tr
from dynopf.dynamics import initial_conditions


@pytest.fixture(scope="module")
def wscc9():
    return grid.load_bundled_case("wscc9")


@pytest.fixture(scope="module")
def dataset(wscc9):
    return acopf.build_dataset(wscc9, 30, 0.2, seed=21,
                               cfg=acopf.SolverConfig(n_starts=1))


@pytest.fixture(scope="module")
def surrogates(wscc9):
    out = []
    for gi in range(3):
        data = node.sample_node_dataset(wscc9, gi, 60, seed=80 + gi)
        s, _ = node.train_node(node.new_surrogate(gi, seed=90 + gi), data,
                               node.NodeTrainConfig(epochs=4, batch_size=64,
                                                    lr=1e-3, seed=95 + gi))
        out.append(s)
    return out


@pytest.fixture(scope="module")
def midpoint_proxy(wscc9, dataset):
    """Zero-weight proxy: every prediction is the box midpoint, angles 0."""
    proxy = tr.new_proxy(wscc9, seed=0)
    zero_net = proxy.net.with_parameters(
        [np.zeros_like(p) for p in proxy.net.parameters()])
    return dataclasses.replace(proxy, net=zero_net)


def test_gap_zero_for_identical_points(wscc9, dataset):
    samples, _ = dataset
    s = samples[0]
    assert ev.steady_state_gap(wscc9, s.optimum, s.optimum) == 0.0


def test_gap_one_percent():
    doc = {
        "base_mva": 100.0,
        "buses": [{"id": 0, "vmin": 0.9, "vmax": 1.1, "pd": 0.0, "qd": 0.0,
                   "ref": True}],
        "lines": [],
        "generators": [{"bus": 0, "pmin": 0.0, "pmax": 500.0, "qmin": -5.0,
                        "qmax": 5.0, "c2": 0.0, "c1": 1.0, "c0": 0.0,
                        "xd_prime": 0.1, "inertia": 0.1, "damping": 0.0}],
    }
    # a one-bus degenerate network is enough to exercise the formula
    net = grid.parse_case(json.dumps(doc))
    star = acopf.DispatchPoint([100.0], [0.0], [1.0], [0.0])
    hat = acopf.DispatchPoint([101.0], [0.0], [1.0], [0.0])
    assert ev.steady_state_gap(net, hat, star) == pytest.approx(1.0, rel=1e-12)


def test_gap_zero_reference_objective(wscc9):
    zero = acopf.DispatchPoint(np.zeros(3), np.zeros(3), np.ones(9), np.zeros(9))
    netz = grid.Network(
        wscc9.base_power, wscc9.buses, wscc9.lines,
        tuple(dataclasses.replace(g, c2=0.0, c1=0.0, c0=0.0)
              for g in wscc9.generators),
        wscc9.reference_bus)
    with pytest.raises(ev.ZeroReferenceObjective):
        ev.steady_state_gap(netz, zero, zero)


def test_true_field_stability_of_labels_is_zero(wscc9, dataset):
    # labels are steady states; with the threshold above every label angle
    # the physical trajectories never cross it
    samples, splits = dataset
    subset = [samples[i] for i in splits["test"]]
    p = np.array([s.optimum.p_r for s in subset])
    q = np.array([s.optimum.q_r for s in subset])
    vm = np.array([s.optimum.v_mag for s in subset])
    va = np.array([s.optimum.v_ang for s in subset])
    worst = ev.true_field_stability(wscc9, p, q, vm, va, delta_max=1.0)
    np.testing.assert_array_equal(worst, np.zeros(len(subset)))


def test_evaluate_model_hand_computed_fixture(wscc9, dataset, midpoint_proxy):
    """Every metric cross-checked against direct formulas on 3 samples."""
    samples, _ = dataset
    fix = {"test": np.array([0, 1, 2]), "train": np.array([]), "val": np.array([])}
    delta_max = 0.6
    report = ev.evaluate_model(midpoint_proxy, [], samples, fix, wscc9,
                               delta_max, timing_repeats=2,
                               include_surrogate_stability=False)
    mid = 0.5 * (midpoint_proxy.box_lo + midpoint_proxy.box_hi)
    ng, nb = 3, 9
    p_mid, q_mid, v_mid = mid[:ng], mid[ng:2 * ng], mid[2 * ng:]

    mse_p, gaps, flows, bounds, worst = [], [], [], [], []
    for i in range(3):
        s = samples[i]
        mse_p.append(np.mean((p_mid - s.optimum.p_r) ** 2))
        d = acopf.DispatchPoint(p_mid, q_mid, v_mid, np.zeros(nb))
        f_hat = acopf.dispatch_cost(wscc9, d)
        gaps.append(abs(s.objective_value - f_hat) / abs(s.objective_value) * 100)
        rep = acopf.static_violations(wscc9, d, s.load)
        flows.append(rep.flow_eq.mean())
        bounds.append(np.concatenate([rep.v_bounds, rep.angle_bounds,
                                      rep.gen_bounds, rep.line_flow]).mean())
        w = 0.0
        for gi, gen in enumerate(wscc9.generators):
            d0, _, _ = initial_conditions(gen, p_mid[gi], q_mid[gi],
                                          v_mid[gen.bus], 0.0)
            w = max(w, max(0.0, d0 - delta_max))
        worst.append(w)

    assert report.mse_p == pytest.approx(np.mean(mse_p), rel=1e-12)
    assert report.gap_mean == pytest.approx(np.mean(gaps), rel=1e-12)
    assert report.gap_std == pytest.approx(np.std(gaps), rel=1e-12)
    assert report.flow_violation_mean == pytest.approx(np.mean(flows), rel=1e-12)
    assert report.boundary_violation_mean == pytest.approx(np.mean(bounds), rel=1e-12)
    # equilibrium trajectories stay within integration tolerance of delta0
    assert report.stability_violation_mean == pytest.approx(np.mean(worst), abs=1e-6)
    assert report.pct_unstable == pytest.approx(
        100.0 * np.mean([w > 0 for w in worst]), abs=1e-9)
    assert report.n_samples == 3


def test_evaluate_model_deterministic_metrics(wscc9, dataset, midpoint_proxy):
    samples, splits = dataset
    a = ev.evaluate_model(midpoint_proxy, [], samples, splits, wscc9, 0.5,
                          timing_repeats=2, include_surrogate_stability=False)
    b = ev.evaluate_model(midpoint_proxy, [], samples, splits, wscc9, 0.5,
                          timing_repeats=2, include_surrogate_stability=False)
    da, db = a.to_dict(), b.to_dict()
    for k in da:
        if k.startswith("inference"):
            continue
        assert da[k] == db[k], k


def test_surrogate_stability_labeled_separately(wscc9, dataset, surrogates,
                                                midpoint_proxy):
    samples, splits = dataset
    rep = ev.evaluate_model(midpoint_proxy, surrogates, samples, splits, wscc9,
                            0.5, timing_repeats=2)
    assert rep.pct_unstable_surrogate is not None
    assert rep.stability_violation_mean_surrogate is not None
    rep2 = ev.evaluate_model(midpoint_proxy, surrogates, samples, splits, wscc9,
                             0.5, timing_repeats=2,
                             include_surrogate_stability=False)
    assert rep2.pct_unstable_surrogate is None
    # the honest true-field columns are present either way
    assert rep2.pct_unstable == rep.pct_unstable


def test_report_serialization_round_trip(wscc9, dataset, midpoint_proxy):
    samples, splits = dataset
    rep = ev.evaluate_model(midpoint_proxy, [], samples, splits, wscc9, 0.5,
                            timing_repeats=2, include_surrogate_stability=False)
    doc = json.loads(rep.to_json())
    assert doc["n_samples"] == rep.n_samples
    keys, row = rep.csv_row()
    assert len(keys) == len(row)
    assert "gap_mean" in keys


def test_bench_inference_ordering(wscc9, dataset, surrogates, midpoint_proxy):
    samples, _ = dataset
    out = ev.bench_inference({"proxy_only": (midpoint_proxy, []),
                              "with_rollouts": (midpoint_proxy, surrogates)},
                             wscc9, samples, repeats=10)
    assert out["proxy_only"]["mean"] < out["with_rollouts"]["mean"]
    assert out["with_rollouts"]["n"] == 10


def test_full_inference_under_fifty_milliseconds(wscc9, dataset, surrogates,
                                                 midpoint_proxy):
    # dispatch prediction plus all three surrogate rollouts per sample;
    # retried because the host can throttle mid-measurement
    samples, _ = dataset
    for attempt in range(3):
        out = ev.bench_inference({"m": (midpoint_proxy, surrogates)}, wscc9,
                                 samples, repeats=15)
        if out["m"]["mean"] <= 0.050:
            return
    pytest.fail(f"inference took {out['m']['mean']*1e3:.1f} ms per sample")


def test_bench_inference_timer_sanity(wscc9, dataset, midpoint_proxy):
    samples, _ = dataset

    def measure():
        out = ev.bench_inference({"m": (midpoint_proxy, [])}, wscc9, samples,
                                 repeats=20)
        return out["m"]["mean"]

    # retried: a shared host can throttle mid-measurement
    for attempt in range(3):
        a, b = measure(), measure()
        if 0.5 <= a / b <= 2.0:
            break
    else:
        pytest.fail(f"repeat timings inconsistent: {a:.2e} vs {b:.2e}")


def test_export_trajectories(wscc9, dataset, surrogates, midpoint_proxy, tmp_path):
    samples, splits = dataset
    path = tmp_path / "traj.csv"
    ev.export_trajectories(path, wscc9, midpoint_proxy, surrogates, samples,
                           splits["test"][:2], delta_max=0.5)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("sample,gen,t,delta_true")
    assert len(lines) == 1 + 2 * 3 * 31  # samples x generators x grid points
