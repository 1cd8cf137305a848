import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynopf import grid


@pytest.fixture(scope="module")
def wscc9():
    return grid.load_bundled_case("wscc9")


def test_wscc9_shape(wscc9):
    assert wscc9.n_bus == 9
    assert wscc9.n_line == 9
    assert wscc9.n_gen == 3
    assert wscc9.reference_bus == 0


def test_ieee57_shape():
    net = grid.load_bundled_case("ieee57")
    assert net.n_bus == 57
    assert net.n_gen == 7
    assert net.n_line == 80


def test_unknown_bundled_case():
    with pytest.raises(KeyError):
        grid.load_bundled_case("case118")


def _tiny_case(**overrides):
    doc = {
        "base_mva": 100.0,
        "buses": [
            {"id": 1, "vmin": 0.9, "vmax": 1.1, "pd": 0.5, "qd": 0.1, "ref": True},
            {"id": 2, "vmin": 0.9, "vmax": 1.1, "pd": 0.0, "qd": 0.0, "ref": False},
        ],
        "lines": [
            {"from": 1, "to": 2, "g": 1.0, "b": -10.0,
             "angle_limit_rad": 0.5, "smax": 2.0},
        ],
        "generators": [
            {"bus": 1, "pmin": 0.0, "pmax": 3.0, "qmin": -3.0, "qmax": 3.0,
             "c2": 100.0, "c1": 10.0, "c0": 0.0, "xd_prime": 0.1,
             "inertia": 0.1, "damping": 0.01},
        ],
    }
    doc.update(overrides)
    return doc


def test_parse_tiny_case():
    net = grid.parse_case(json.dumps(_tiny_case()))
    assert net.n_bus == 2 and net.n_line == 1 and net.n_gen == 1
    assert net.buses[0].p_load == 0.5


def test_syntax_error_carries_position():
    with pytest.raises(grid.CaseSyntaxError) as err:
        grid.parse_case('{"base_mva": 100.0,,}')
    assert err.value.line == 1
    assert err.value.column > 0


def test_dangling_line_endpoint():
    doc = _tiny_case()
    doc["lines"][0]["to"] = 99
    with pytest.raises(grid.CaseSemanticError, match="unknown bus 99"):
        grid.parse_case(json.dumps(doc))


def test_dangling_generator_bus():
    doc = _tiny_case()
    doc["generators"][0]["bus"] = 7
    with pytest.raises(grid.CaseSemanticError, match="unknown bus 7"):
        grid.parse_case(json.dumps(doc))


def test_requires_exactly_one_reference():
    doc = _tiny_case()
    doc["buses"][1]["ref"] = True
    with pytest.raises(grid.CaseSemanticError, match="exactly one reference"):
        grid.parse_case(json.dumps(doc))
    doc["buses"][0]["ref"] = False
    doc["buses"][1]["ref"] = False
    with pytest.raises(grid.CaseSemanticError, match="exactly one reference"):
        grid.parse_case(json.dumps(doc))


def test_duplicate_bus_ids():
    doc = _tiny_case()
    doc["buses"][1]["id"] = 1
    with pytest.raises(grid.CaseSemanticError, match="unique"):
        grid.parse_case(json.dumps(doc))


def test_voltage_band_invariant():
    doc = _tiny_case()
    doc["buses"][0]["vmin"] = 1.2
    with pytest.raises(grid.CaseSemanticError, match="vmin"):
        grid.parse_case(json.dumps(doc))


def test_zero_admittance_rejected():
    doc = _tiny_case()
    doc["lines"][0]["g"] = 0.0
    doc["lines"][0]["b"] = 0.0
    with pytest.raises(grid.CaseSemanticError, match="zero admittance"):
        grid.parse_case(json.dumps(doc))


def test_machine_parameter_invariants():
    doc = _tiny_case()
    doc["generators"][0]["inertia"] = 0.0
    with pytest.raises(grid.CaseSemanticError, match="inertia"):
        grid.parse_case(json.dumps(doc))


def test_ids_normalized_contiguous():
    doc = _tiny_case()
    doc["buses"][0]["id"] = 40
    doc["buses"][1]["id"] = 7
    doc["lines"][0]["from"] = 40
    doc["lines"][0]["to"] = 7
    doc["generators"][0]["bus"] = 40
    net = grid.parse_case(json.dumps(doc))
    assert [b.id for b in net.buses] == [0, 1]
    # bus 7 sorts first, so the old id-40 bus becomes index 1
    assert net.reference_bus == 1
    assert net.generators[0].bus == 1
    assert {net.lines[0].from_bus, net.lines[0].to_bus} == {0, 1}


@pytest.mark.parametrize("name", ["wscc9", "ieee57"])
def test_round_trip(name):
    net = grid.load_bundled_case(name)
    again = grid.parse_case(grid.serialize_network(net))
    assert again == net
    assert grid.network_hash(again) == grid.network_hash(net)


def test_perturb_zero_fraction_is_nominal(wscc9):
    prof = grid.perturb_loads(wscc9, 0.0, seed=123)
    np.testing.assert_array_equal(prof.p_d, wscc9.p_load)
    np.testing.assert_array_equal(prof.q_d, wscc9.q_load)


def test_perturb_deterministic(wscc9):
    a = grid.perturb_loads(wscc9, 0.2, seed=42)
    b = grid.perturb_loads(wscc9, 0.2, seed=42)
    np.testing.assert_array_equal(a.p_d, b.p_d)
    np.testing.assert_array_equal(a.q_d, b.q_d)
    c = grid.perturb_loads(wscc9, 0.2, seed=43)
    assert not np.array_equal(a.p_d, c.p_d)


def test_perturb_band_1000_seeds(wscc9):
    lo = 0.8 * wscc9.p_load
    hi = 1.2 * wscc9.p_load
    lo_q = 0.8 * wscc9.q_load
    hi_q = 1.2 * wscc9.q_load
    for seed in range(1000):
        prof = grid.perturb_loads(wscc9, 0.2, seed)
        assert np.all(prof.p_d >= np.minimum(lo, hi) - 1e-15)
        assert np.all(prof.p_d <= np.maximum(lo, hi) + 1e-15)
        assert np.all(prof.q_d >= np.minimum(lo_q, hi_q) - 1e-15)
        assert np.all(prof.q_d <= np.maximum(lo_q, hi_q) + 1e-15)


def test_perturb_scales_both_components_together(wscc9):
    prof = grid.perturb_loads(wscc9, 0.2, seed=5)
    loaded = wscc9.p_load > 0
    ratio_p = prof.p_d[loaded] / wscc9.p_load[loaded]
    ratio_q = prof.q_d[loaded] / wscc9.q_load[loaded]
    np.testing.assert_allclose(ratio_p, ratio_q, rtol=1e-12)


@given(fraction=st.floats(min_value=0.0, max_value=0.99), seed=st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_perturb_band_property(fraction, seed):
    net = grid.load_bundled_case("wscc9")
    prof = grid.perturb_loads(net, fraction, seed)
    with np.errstate(invalid="ignore"):
        u = np.where(net.p_load != 0, prof.p_d / np.where(net.p_load == 0, 1, net.p_load), 1.0)
    assert np.all(u >= 1 - fraction - 1e-12)
    assert np.all(u <= 1 + fraction + 1e-12)


def test_perturb_fraction_precondition(wscc9):
    with pytest.raises(ValueError):
        grid.perturb_loads(wscc9, -0.1, 0)
    with pytest.raises(ValueError):
        grid.perturb_loads(wscc9, 1.0, 0)


def test_network_arrays_read_only(wscc9):
    with pytest.raises(ValueError):
        wscc9.p_load[0] = 99.0
