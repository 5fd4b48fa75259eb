import math
import re
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loadkit.case_io import (Line, ModelPolicy, ModelingWarning, bundled_path, case_voltage_state,
                             full_model_consumption, load_matpower, merge_lines, model_network,
                             network_to_json, parse_matpower, parse_network_json)
from loadkit.errors import InvariantViolation, MalformedCase, SchemaError, UnsupportedFeature
from loadkit.powerflow import injections, t_coefficients, VoltageState

from conftest import IEEE, random_network, seeds

TINY = """
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1.0 0 1 1 1.1 0.9;
  2 1 50 20 0 0 1 1.0 0 1 1 1.1 0.9;
  3 1 30 10 0 0 1 1.0 0 1 1 1.1 0.9;
];
mpc.branch = [
  1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;
  2 3 0.02 0.2 0 0 0 0 0 0 1 -360 360;
  1 3 0.02 0.2 0 0 0 0 0 0 1 -360 360;
];
"""


def _rows(text: str, name: str) -> list[list[float]]:
    """Independent reader: rows of an ``mpc.<name>`` matrix, comments stripped."""
    body = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, re.S).group(1)
    rows = []
    for line in body.splitlines():
        line = line.split("%")[0].strip().rstrip(";")
        if line:
            rows.append([float(x) for x in line.split()])
    return rows


def test_case14_counts():
    text = bundled_path("case14").read_text()
    case = parse_matpower(text)
    assert case.base_power == 100
    assert len(case.buses) == 14
    assert len(case.branches) == 20
    assert len(case.branches) == sum(1 for r in _rows(text, "branch") if r[10] != 0)


def test_case14_modeled_targets():
    text = bundled_path("case14").read_text()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelingWarning)
        net = model_network(parse_matpower(text))
    assert net.n == 13
    bus = {int(r[0]): r for r in _rows(text, "bus")}
    pg, qg = {}, {}
    for r in _rows(text, "gen"):
        if r[7] > 0:
            pg[int(r[0])] = pg.get(int(r[0]), 0) + r[1]
            qg[int(r[0])] = qg.get(int(r[0]), 0) + r[2]
    for i, b in enumerate(net.bus_ids):
        assert net.p[i] == pytest.approx((bus[b][2] - pg.get(b, 0)) / 100, abs=1e-12)
        assert net.q[i] == pytest.approx((bus[b][3] - qg.get(b, 0)) / 100, abs=1e-12)


def test_empty_input():
    with pytest.raises(MalformedCase, match="missing mpc.baseMVA"):
        parse_matpower("")


def test_zero_impedance_branch_rejected():
    bad = TINY.replace("1 2 0.01 0.1", "1 2 0 0")
    with pytest.raises(MalformedCase, match="zero impedance"):
        parse_matpower(bad)


@pytest.mark.parametrize("mutation, message", [
    (lambda t: t.replace("2 1 50", "1 1 50"), "duplicate bus id"),
    (lambda t: t.replace("1 3 0 0 0", "1 1 0 0 0"), "no slack"),
    (lambda t: t.replace("2 1 50 20", "2 1 5x0 20"), "numeric"),
    (lambda t: t.replace("mpc.branch", "mpc.notbranch"), "branch"),
])
def test_malformed_cases(mutation, message):
    with pytest.raises(MalformedCase, match=message):
        parse_matpower(mutation(TINY))


def test_malformed_reports_line():
    with pytest.raises(MalformedCase) as info:
        parse_matpower(TINY.replace("2 1 50 20", "2 1 5x0 20"))
    assert info.value.line == 5


def test_offline_branch_dropped():
    case = parse_matpower(TINY.replace("1 3 0.02 0.2 0 0 0 0 0 0 1", "1 3 0.02 0.2 0 0 0 0 0 0 0"))
    assert len(case.branches) == 2


def test_pure_load_case_targets():
    net = model_network(parse_matpower(TINY))
    assert np.allclose(net.p, [0.5, 0.3]) and np.allclose(net.q, [0.2, 0.1])


def test_line_admittance_identity():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelingWarning)
        case = load_matpower(bundled_path("case30"))
        net = model_network(case)
    seen = {}
    for br in case.branches:
        key = (min(br.frm, br.to), max(br.frm, br.to))
        seen.setdefault(key, []).append(br)
    for ln in net.lines:
        grp = seen[(ln.frm, ln.to)]
        if len(grp) == 1:
            z = complex(grp[0].r, grp[0].x)
            assert abs(complex(ln.g, ln.b) * z - 1) <= 1e-12


def test_parallel_branches_merge():
    doubled = TINY.replace("];\n\"\"\"", "").replace(
        "1 3 0.02 0.2 0 0 0 0 0 0 1 -360 360;\n];",
        "1 3 0.02 0.2 0 0 0 0 0 0 1 -360 360;\n  1 3 0.02 0.2 0 0 0 0 0 0 1 -360 360;\n];")
    net = model_network(parse_matpower(doubled))
    single = model_network(parse_matpower(TINY))
    ln = next(x for x in net.lines if (x.frm, x.to) == (1, 3))
    one = next(x for x in single.lines if (x.frm, x.to) == (1, 3))
    assert ln.g == pytest.approx(2 * one.g) and ln.b == pytest.approx(2 * one.b)


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4), st.floats(0.01, 10), st.floats(-10, -0.01)),
                min_size=1, max_size=12), st.randoms())
def test_merge_order_independent(raw, rnd):
    lines = [Line(a, b, g, bb) for a, b, g, bb in raw if a != b]
    shuffled = list(lines)
    rnd.shuffle(shuffled)
    assert merge_lines(lines) == merge_lines(shuffled)


def test_strict_policy_rejects_taps():
    with pytest.raises(UnsupportedFeature):
        model_network(load_matpower(bundled_path("case14")), ModelPolicy(strict=True))


def test_dropped_features_warn():
    with pytest.warns(ModelingWarning, match="taps"):
        model_network(load_matpower(bundled_path("case14")))


def test_case_policy_makes_case_voltages_exact():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelingWarning)
        case = load_matpower(bundled_path("case57"))
        net = model_network(case, ModelPolicy(pv_source="case"))
    p, q = injections(net, case_voltage_state(case, net))
    assert np.allclose(p, net.p, atol=1e-12) and np.allclose(q, net.q, atol=1e-12)


def _branch_flow_consumption(case):
    """Independent oracle: sum MATPOWER pi-model branch flows bus by bus."""
    V = {b.id: b.vm * np.exp(1j * np.radians(b.va)) for b in case.buses}
    out = {b.id: -(V[b.id] * np.conj(complex(b.shunt_g, b.shunt_b) * V[b.id])) for b in case.buses}
    for br in case.branches:
        ys = 1 / complex(br.r, br.x)
        t = (br.tap_ratio or 1.0) * np.exp(1j * np.radians(br.phase_shift))
        vf, vt = V[br.frm], V[br.to]
        i_f = (ys + 0.5j * br.total_charging_b) / abs(t) ** 2 * vf - ys / np.conj(t) * vt
        i_t = -ys / t * vf + (ys + 0.5j * br.total_charging_b) * vt
        out[br.frm] -= vf * np.conj(i_f)
        out[br.to] -= vt * np.conj(i_t)
    return out


@pytest.mark.parametrize("name", ["case14", "case118"])
def test_full_model_matches_branch_flows(name):
    case = load_matpower(bundled_path(name))
    s = full_model_consumption(case)
    ref = _branch_flow_consumption(case)
    for b in case.buses:
        assert abs(s[b.id] - ref[b.id]) <= 1e-10


def test_full_model_near_stored_dispatch():
    # stored Vm/Va are rounded, so consumption only approximately equals load minus generation
    case = load_matpower(bundled_path("case14"))
    s = full_model_consumption(case)
    for b in case.buses:
        if b.kind == "pq":
            assert abs(s[b.id] - complex(b.p_load, b.q_load)) <= 0.05


def test_full_model_equals_series_model_without_extras():
    case = parse_matpower(TINY)
    net = model_network(case)
    s = full_model_consumption(case)
    p, q = injections(net, case_voltage_state(case, net))
    for i, b in enumerate(net.bus_ids):
        assert s[b] == pytest.approx(complex(p[i], q[i]), abs=1e-14)


def test_json_triangle_resistive(resistive):
    v = VoltageState.flat(resistive)
    assert resistive.n == 2
    assert t_coefficients(resistive, v, 2).t1 == -2


def test_json_triangle_lossy(lossy):
    assert all(ln.g == 1 and ln.b == -0.5 for ln in lossy.lines)


def test_json_capacitive_warns():
    doc = network_to_json(random_network(np.random.default_rng(0), 4)).replace('"b": -', '"b": ')
    with pytest.warns(ModelingWarning, match="non-inductive network"):
        parse_network_json(doc)


@pytest.mark.parametrize("doc, err", [
    ("{", SchemaError),
    ('{"base_power": 100}', SchemaError),
    ('{"base_power": 100, "slack": [{"id": 1}, {"id": 2}], "buses": [], "lines": []}', InvariantViolation),
    ('{"base_power": 100, "slack": {"id": 1, "v_re": 1, "v_im": 0}, "buses": [{"id": 1, "p": 0, "q": 0}],'
     ' "lines": []}', InvariantViolation),
    ('{"base_power": 100, "slack": {"id": 1, "v_re": 1, "v_im": 0}, "buses": [{"id": 2, "p": "x", "q": 0}],'
     ' "lines": []}', SchemaError),
    ('{"base_power": 100, "slack": {"id": 1, "v_re": 1, "v_im": 0}, "buses": [{"id": 2, "p": 0, "q": 0}],'
     ' "lines": [{"from": 1, "to": 9, "g": 1, "b": -1}]}', InvariantViolation),
])
def test_json_errors(doc, err):
    with pytest.raises(err):
        parse_network_json(doc)


@settings(max_examples=50)
@given(seeds, st.integers(2, 10))
def test_json_round_trip(seed, size):
    rng = np.random.default_rng(seed)
    net = random_network(rng, size)
    if rng.random() < 0.5:
        net = net.with_q_limits({net.bus_ids[0]: (float(rng.normal()), float(rng.normal())),
                                 net.slack_id: (None, float(rng.normal()))})
    back = parse_network_json(network_to_json(net))
    assert back.slack_id == net.slack_id and back.slack_voltage == net.slack_voltage
    assert back.bus_ids == net.bus_ids and back.lines == net.lines
    assert np.array_equal(back.p, net.p) and np.array_equal(back.q, net.q)
    assert back.q_limits == net.q_limits


@pytest.mark.parametrize("name", IEEE)
def test_ieee_cases_parse(name):
    case = load_matpower(bundled_path(name))
    assert sum(b.kind == "slack" for b in case.buses) == 1
    assert all(br.r >= 0 for br in case.branches)
    assert math.isfinite(case.base_power)
