import json
import math

import numpy as np
import pytest

from couplestab.netmodel import (Branch, Bus, CaseError, FaultScenario, Machine, NetworkCase, TopologyError,
                                 build_reduced, build_ybus, case_from_dict, case_to_dict, electrical_distance,
                                 parse_case, reduced_networks, solve_power_flow)


def two_bus(**kw):
    """Slack machine behind a line feeding a PV machine and a load."""
    buses = (Bus(1, "slack", 1.0), Bus(2, "PV", 1.0, p_load=kw.get("load", 1.0), q_load=0.2))
    branches = (Branch(1, 2, kw.get("r", 0.01), 0.2, kw.get("b", 0.0), kw.get("tap", 1.0)),)
    machines = (Machine(1, 0.1, 0.1, 0.0), Machine(2, 0.05, 0.15, kw.get("pg", 0.5)))
    return NetworkCase(buses, branches, machines)


# -- case data ---------------------------------------------------------------

def test_bundled_case_shape(ne39):
    assert len(ne39.buses) == 39 and len(ne39.branches) == 46 and ne39.n_machines == 10
    assert ne39.machine_buses == list(range(30, 40))
    assert [b.id for b in ne39.buses if b.type == "slack"] == [31]


def test_inertia_from_H(ne39):
    m = ne39.machines[ne39.machine_position(39)]
    assert m.H == 100.0
    assert m.M == pytest.approx(2 * 100.0 / (2 * math.pi * 60))


def test_round_trip(ne39, tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(case_to_dict(ne39)))
    assert parse_case(p) == ne39


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d["buses"].append(dict(d["buses"][0])), "duplicate bus"),
    (lambda d: d["branches"][0].update({"to": 999}), "branches[0]"),
    (lambda d: d["machines"][0].pop("xd_prime"), "machines[0].xd_prime"),
    (lambda d: d["machines"][0].update({"bus": 1}), "must be PV or slack"),
    (lambda d: d["buses"][30].update({"type": "PV"}), "slack"),
    (lambda d: d.pop("base_mva"), "case.base_mva"),
    (lambda d: d["branches"][3].update({"x": "abc"}), "branches[3].x"),
    (lambda d: d["machines"].append(dict(d["machines"][0])), "more than one machine"),
])
def test_schema_errors_name_the_field(ne39, mutate, field):
    doc = case_to_dict(ne39)
    mutate(doc)
    with pytest.raises(CaseError, match=field.replace("[", r"\[").replace("]", r"\]")):
        case_from_dict(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(CaseError, match="invalid JSON"):
        parse_case(p)


# -- admittance matrix -------------------------------------------------------

def test_ybus_pi_model_by_hand():
    case = two_bus(r=0.02, b=0.1)
    Y = build_ybus(case)
    ys = 1 / complex(0.02, 0.2)
    assert Y[0, 1] == pytest.approx(-ys)
    assert Y[0, 0] == pytest.approx(ys + 0.05j)
    assert np.allclose(Y, Y.T)


def test_ybus_tap_on_from_side():
    case = two_bus(r=0.0, tap=1.1)
    Y = build_ybus(case)
    ys = 1 / 0.2j
    assert Y[0, 0] == pytest.approx(ys / 1.21)
    assert Y[1, 1] == pytest.approx(ys)
    assert Y[0, 1] == pytest.approx(-ys / 1.1)


def test_ybus_rows_sum_to_shunts(ne39):
    # without shunt elements every row of the series part sums to zero
    Y = build_ybus(ne39)
    shunt = np.zeros(len(ne39.buses), dtype=complex)
    idx = ne39.bus_index
    for br in ne39.branches:
        a = br.tap
        ys = 1 / complex(br.r, br.x)
        shunt[idx[br.from_bus]] += (ys + 0.5j * br.b) / a**2 - ys / a
        shunt[idx[br.to_bus]] += ys + 0.5j * br.b - ys / a
    for b in ne39.buses:
        shunt[idx[b.id]] += complex(b.g_shunt, b.b_shunt)
    assert np.allclose(Y.sum(axis=1), shunt, atol=1e-9)


# -- power flow --------------------------------------------------------------

# solved bus voltages published with the MATPOWER/PYPOWER copy of the case
REFERENCE_VOLTAGES = {1: (1.0393836, -13.536602), 4: (1.00446, -12.626734), 16: (1.0325203, -10.033348),
                      30: (1.0499, -7.3704746), 31: (0.982, 0.0), 39: (1.03, -14.535256)}


def test_power_flow_matches_reference(solved, ne39):
    assert solved.mismatch < 1e-9
    for bus, (vm, va) in REFERENCE_VOLTAGES.items():
        v = solved.v[ne39.bus_index[bus]]
        assert abs(v) == pytest.approx(vm, abs=1e-6)
        assert math.degrees(np.angle(v)) == pytest.approx(va, abs=1e-4)


def test_power_flow_balances_injections(solved, ne39):
    s = solved.s_injection
    idx = ne39.bus_index
    for b in ne39.buses:
        if b.type == "PQ":
            assert s[idx[b.id]] == pytest.approx(-complex(b.p_load, b.q_load), abs=1e-8)
    pm = dict(zip(solved.machine_ids, solved.p_mech))
    # lossless classical machines: mechanical power equals the bus generation
    for mid, p in pm.items():
        b = ne39.buses[idx[mid]]
        assert s[idx[mid]].real + b.p_load == pytest.approx(p, abs=1e-8)


def test_internal_emf_consistent(solved, ne39):
    # E = V + j x'd I with I the machine current
    s = solved.s_injection
    idx = ne39.bus_index
    for k, m in enumerate(ne39.machines):
        b = ne39.buses[idx[m.bus]]
        v = solved.v[idx[m.bus]]
        sg = s[idx[m.bus]] + complex(b.p_load, b.q_load)
        e = v + 1j * m.xd_prime * np.conj(sg / v)
        assert abs(e) == pytest.approx(solved.E[k], abs=1e-10)
        assert np.angle(e) == pytest.approx(solved.delta0[k], abs=1e-10)


def test_power_flow_two_bus_closed_form():
    case = two_bus(r=0.0, load=0.0, pg=0.5)
    sol = solve_power_flow(case)
    # lossless line: P = V1 V2 sin(th2 - th1) / x
    th = np.angle(sol.v[1])
    assert 0.5 == pytest.approx(math.sin(th) / 0.2, abs=1e-9)


# -- reduction ---------------------------------------------------------------

def brute_force_reduction(solved, fault_bus=None):
    """Explicit network with machine nodes appended, reduced by inverting the full Z matrix."""
    case = solved.case
    nb, n = len(case.buses), case.n_machines
    Y = np.zeros((nb + n, nb + n), dtype=complex)
    Y[:nb, :nb] = build_ybus(case)
    for k, b in enumerate(case.buses):
        Y[k, k] += complex(b.p_load, -b.q_load) / abs(solved.v[k]) ** 2
    if fault_bus is not None:
        Y[case.bus_index[fault_bus], case.bus_index[fault_bus]] += 1e7
    for k, m in enumerate(case.machines):
        y, b, g = 1 / (1j * m.xd_prime), case.bus_index[m.bus], nb + k
        Y[b, b] += y; Y[g, g] += y; Y[b, g] -= y; Y[g, b] -= y
    Z = np.linalg.inv(Y)
    return np.linalg.inv(Z[nb:, nb:])


def test_reduction_matches_inverse(solved):
    net = build_reduced(solved, None, "prefault")
    assert np.allclose(net.Y, brute_force_reduction(solved), atol=1e-9)
    fnet = build_reduced(solved, FaultScenario(0.1, bus=16), "fault-on")
    assert np.allclose(fnet.Y, brute_force_reduction(solved, 16), atol=1e-6)


def test_prefault_equilibrium(solved):
    from couplestab.dynamics import electrical_power
    net = build_reduced(solved, None, "prefault")
    assert np.allclose(electrical_power(net, solved.delta0), solved.p_mech, atol=1e-9)


def test_postfault_restore_equals_prefault(solved):
    pre = build_reduced(solved, None, "prefault")
    _, post = reduced_networks(solved, FaultScenario(0.1, bus=34))
    assert np.array_equal(pre.Y, post.Y)


def test_bus_fault_grounds_faulted_machine(solved):
    # a solid fault on a generator terminal bus leaves that machine delivering no power
    fnet = build_reduced(solved, FaultScenario(0.1, bus=34), "fault-on")
    k = solved.machine_ids.index(34)
    assert abs(fnet.Y[k, :]).sum() < abs(build_reduced(solved, None, "prefault").Y[k, :]).sum()
    assert np.all(np.abs(fnet.C[k]) < 1e-5) and np.all(np.abs(fnet.D[k]) < 1e-5)


def test_line_fault_at_end_equals_bus_fault(solved, ne39):
    k = ne39.find_branch(16, 17)
    br = ne39.branches[k]
    line = build_reduced(solved, FaultScenario(0.1, branch=k, position=0.0), "fault-on")
    bus = build_reduced(solved, FaultScenario(0.1, bus=br.from_bus), "fault-on")
    # the fault reaches ground through two 1e7 pu links instead of one
    assert np.allclose(line.Y, bus.Y, atol=1e-4)


def test_line_fault_midpoint_between_end_faults(solved, ne39):
    k = ne39.find_branch(16, 17)
    nets = [build_reduced(solved, FaultScenario(0.1, branch=k, position=p), "fault-on").Y for p in (0.0, 0.5, 1.0)]
    # the fault-on admittance varies continuously and the midpoint is not one of the ends
    assert not np.allclose(nets[1], nets[0]) and not np.allclose(nets[1], nets[2])


def test_trip_changes_postfault_only(solved, ne39):
    k = ne39.find_branch(16, 17)
    sc = FaultScenario(0.1, bus=16, trip_branch=k)
    pre = build_reduced(solved, None, "prefault")
    _, post = reduced_networks(solved, sc)
    assert not np.allclose(pre.Y, post.Y)


def test_islanding_trip_raises(solved, ne39):
    # bus 30's generator hangs on a single transformer branch
    k = ne39.find_branch(2, 30)
    with pytest.raises(TopologyError):
        reduced_networks(solved, FaultScenario(0.1, bus=2, trip_branch=k))


def test_reduced_coefficients_symmetric(solved):
    net = build_reduced(solved, FaultScenario(0.1, bus=4), "fault-on")
    assert np.allclose(net.C, net.C.T) and np.allclose(net.D, net.D.T)
    assert np.all(np.diag(net.C) == 0)


@pytest.mark.parametrize("kw", [dict(bus=999), dict(branch=999), dict(bus=4, trip_branch=-1)])
def test_scenario_checks(solved, kw):
    with pytest.raises(CaseError):
        reduced_networks(solved, FaultScenario(0.1, **kw))


@pytest.mark.parametrize("kw", [dict(), dict(bus=1, branch=2), dict(branch=0, position=1.5)])
def test_scenario_invalid(kw):
    with pytest.raises(ValueError):
        FaultScenario(0.1, **kw)


def test_electrical_distance_to_own_machine_is_xd(solved, ne39):
    # the internal node hangs off its terminal bus through x'd alone
    d = electrical_distance(solved, 34)
    assert d[solved.machine_ids.index(34)] == pytest.approx(ne39.machines[4].xd_prime, rel=1e-9)
    assert np.all(d > 0)
