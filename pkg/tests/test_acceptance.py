"""Acceptance criteria 1 to 7 on the bundled 39-bus case.

Every criterion records one PASS/FAIL line (printed in the terminal summary)
and then asserts, so an unmet criterion shows up as a failing test.
"""

import numpy as np
import pytest

from couplestab.assess import (PROPOSED, STABLE, TIME_DOMAIN, UNSTABLE, AssessConfig, _window, analyse_couple, assess,
                               cct_search, identify_couples_small, is_runaway, time_domain_verdict)
from couplestab.dynamics import central_derivative, simulate, svcs_relative
from couplestab import predictor as pred
from couplestab.netmodel import FaultScenario
from couplestab.pairs import detect_events, eac_residuals, pair_series

import test_properties as props
from conftest import ACCEPTANCE, CASES

# published reference values for the same scenarios on an unpublished variant of the case
PUBLISHED_COUPLES = {
    "case1": {f"{i}_{j}" for i in (34, 33, 36) for j in (30, 31, 39)},
    "case3": {"32_39"},
}
PUBLISHED_CASE1 = {"34_30": -0.79, "34_31": -0.78, "34_39": -0.76, "33_30": 1.59, "33_31": 8.65, "33_39": 5.46}
PUBLISHED_CASE2 = {"32_37": -0.63, "32_30": -0.39, "32_39": -0.47, "31_37": -0.60, "31_30": -0.35, "31_39": -0.43,
                   "36_39": -0.18}
PUBLISHED_CASE3 = {"32_39": 8.70}
PUBLISHED_CCT = {34: 0.18, 35: 0.29, 36: 0.25, 37: 0.21, 38: 0.13, 4: 0.45, 15: 0.43, 21: 0.32, 24: 0.34}
CCT_BRACKET = (0.05, 0.8)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[str(n)] = line
    print(line)
    return ok


def pair_of(name):
    i, j = name.split("_")
    return int(i), int(j)


def couple_eval(traj, name, cfg=AssessConfig()):
    """Margin of a named pair, with the runaway rule applied as in assessment."""
    ps = pair_series(traj, *pair_of(name))
    return analyse_couple(traj, pair_of(name), cfg, runaway=is_runaway(ps, _window(ps, cfg))).margin


def test_criterion_1_strict_eac(solved):
    worst, ratios = {}, []
    for key, sc in CASES.items():
        errs = []
        for dt in (1e-3, 5e-4):
            tr = simulate(solved, sc, dt, sc.clearing_time + 2.0)
            if dt == 1e-3:
                couples = identify_couples_small(tr).couples
            e = 0.0
            for p in couples:
                ps = pair_series(tr, *p)
                ev = detect_events(ps)
                stop = ev.index if ev.found else len(tr.t) - 1
                e = max(e, float(np.max(np.abs(eac_residuals(ps, stop)))))
            errs.append(e)
        worst[key] = errs[0]
        ratios.append(errs[0] / errs[1])
    ok = max(worst.values()) <= 2e-3 and min(ratios) >= 3.5
    detail = ", ".join(f"{k} max {v:.2e}" for k, v in worst.items())
    assert record(1, ok, f"{detail}; shrink on halving dt >= {min(ratios):.2f}x (need <= 2e-3, >= 3.5x)")


def test_criterion_2_svcs(solved):
    sc = CASES["case1"]
    # central differences carry O(dt^2) error, so the check runs at a fine step
    tr = simulate(solved, sc, 1.25e-4, sc.clearing_time + 1.0)
    worst = 0.0
    for m in tr.machine_ids:
        r = svcs_relative(tr, m)
        d = central_derivative(r.omega, r.t, breaks=(tr.clearing_index,))
        worst = max(worst, float(np.nanmax(np.abs(r.M * tr.omega_base * d - r.f))))
    assert record(2, worst <= 1e-4, f"max |M dw/dt - f| = {worst:.2e} pu at dt = 0.125 ms (need <= 1e-4)")


def test_criterion_3_couple_sets(trajectories):
    got = {k: set(identify_couples_small(trajectories[k]).names("couples")) for k in PUBLISHED_COUPLES}
    ok = all(got[k] == PUBLISHED_COUPLES[k] for k in got)
    detail = "; ".join(f"{k} got {sorted(got[k])} want {sorted(PUBLISHED_COUPLES[k])}" for k in got)
    assert record(3, ok, detail)


def test_criterion_4_margin_signs(trajectories):
    rows, ok = [], True
    expect1 = {n: (UNSTABLE if n.startswith("34_") else STABLE) for n in PUBLISHED_COUPLES["case1"]}
    plan = [("case1", expect1), ("case2", {n: UNSTABLE for n in PUBLISHED_CASE2}),
            ("case3", {n: STABLE for n in PUBLISHED_CASE3})]
    published = {**PUBLISHED_CASE1, **PUBLISHED_CASE2}
    for key, expect in plan:
        for name, want in sorted(expect.items()):
            m = couple_eval(trajectories[key], name)
            ok &= m.verdict == want
            ref = PUBLISHED_CASE3.get(name) if key == "case3" else published.get(name)
            rows.append(f"  {key} {name}: eta {m.eta:+.3f} ({m.verdict}) published "
                        f"{'n/a' if ref is None else f'{ref:+.2f}'}")
    print("\n".join(rows))
    assert record(4, ok, "sign of every listed couple margin (magnitudes informational, printed above)")


@pytest.mark.slow
def test_criterion_5_cct_table(solved):
    own, lines = {}, []
    for bus in PUBLISHED_CCT:
        sc = FaultScenario(0.1, bus=bus)
        own[bus] = {m: cct_search(solved, sc, *CCT_BRACKET, 0.01, m).cct for m in (PROPOSED, TIME_DOMAIN)}
        lines.append(f"  bus {bus}: proposed {own[bus][PROPOSED]:.2f} time-domain {own[bus][TIME_DOMAIN]:.2f} "
                     f"published {PUBLISHED_CCT[bus]:.2f}")
    print("\n".join(lines))
    eps = 1e-9
    agree = sum(abs(v[PROPOSED] - v[TIME_DOMAIN]) <= 0.02 + eps for v in own.values())
    optimism = max(v[PROPOSED] - v[TIME_DOMAIN] for v in own.values())
    ok_a = agree >= 7 and optimism <= 0.01 + eps
    near = sum(abs(own[b][PROPOSED] - PUBLISHED_CCT[b]) <= 0.03 + eps for b in own)
    ok_b = near >= 6
    record("5a", ok_a, f"proposed vs own time-domain within 0.02 s at {agree}/9 (need >= 7); "
                       f"largest optimism {optimism:+.2f} s (need <= 0.01)")
    record("5b", ok_b, f"proposed vs published within 0.03 s at {near}/9 (need >= 6)")
    assert ok_a and ok_b


def test_criterion_6_predictor(solved):
    cfg = AssessConfig()
    td = cct_search(solved, FaultScenario(0.1, bus=34), *CCT_BRACKET, 0.01, TIME_DOMAIN).cct
    sc = CASES["case1"].with_clearing(round(td + 0.05, 10))
    a = assess(solved, sc, cfg)
    lead = next(x for x in a.analyses if x.margin.name == a.system.lead)
    ev = detect_events(lead.series)
    err = abs(lead.prediction.pcmdlp - ev.angle) if ev.found and lead.prediction.source == "qr" else np.inf

    # stable scenarios: Case-3 and every table location at 0.10 s
    better = total = 0
    scenarios = [CASES["case3"]] + [FaultScenario(0.10, bus=b) for b in PUBLISHED_CCT]
    for s in scenarios:
        if time_domain_verdict(solved, s, cfg) != STABLE:
            continue
        tr = simulate(solved, s, cfg.dt, s.clearing_time + cfg.horizon)
        for p in identify_couples_small(tr, cfg).couples:
            w = _window(pair_series(tr, *p), cfg)
            better += pred.window_rms(pred.fit_qr(w, cfg.sigma), w) <= pred.window_rms(pred.fit_sin(w), w)
            total += 1
    share = better / total if total else 0.0
    ok = err <= 0.05 and share >= 0.8
    assert record(6, ok, f"lead {a.system.lead} at t_c = {sc.clearing_time:.2f} s: |PCMDLP - CMDLP| = {err:.4f} rad "
                         f"(need <= 0.05); qr rms <= sin rms on {better}/{total} stable windows (need >= 80%)")


def test_criterion_7_property_suite():
    checks = [props.test_trajectory_matches_brute_force, props.test_pair_properties, props.test_nested_models,
              props.test_a4_floor, props.test_verdict_logic]
    failed = []
    for check in checks:
        try:
            check()
        except Exception as exc:  # noqa: BLE001 - report every failing property
            failed.append(f"{check.__name__}: {type(exc).__name__}")
    assert record(7, not failed, f"{len(checks) - len(failed)}/{len(checks)} randomized property checks on 2-5 "
                                 f"machine systems" + (f" ({'; '.join(failed)})" if failed else ""))
