import csv
import json
import math

import numpy as np
import pytest

from lyapcert.stability import (estimate_delta, example17_bounds_check, settling_time,
                                uniformity_report, write_settling_table)
from lyapcert.systems import builtin, example17_params


def test_delta_linear_decay():
    sys = builtin("linear_decay")[0]
    for t0 in (0.0, 3.0):
        d = estimate_delta(sys, 0.5, t0)
        assert d.delta == pytest.approx(0.5, rel=1e-3) and d.witness is None


@pytest.mark.parametrize("t0", [0.0, 5.0])
def test_delta_example17_closed_form(t0):
    # x(t) = x0 exp(e^{-t0} - e^{-t}) increases to x0 exp(e^{-t0})
    sys = builtin("example17", n=1, h="0")[0]
    d = estimate_delta(sys, 1.0, t0)
    assert d.delta == pytest.approx(math.exp(-math.exp(-t0)), rel=5e-3)
    assert d.delta <= math.exp(-math.exp(-t0)) * (1 + 1e-6)


def test_delta_zero_with_witness():
    sys = builtin("unstable_linear")[0]
    d = estimate_delta(sys, 1.0, 0.0)
    assert d.delta == 0.0 and d.witness is not None
    assert float(d) == 0.0


def test_delta_preconditions():
    sys = builtin("linear_decay")[0]
    with pytest.raises(ValueError):
        estimate_delta(sys, 0.0)
    with pytest.raises(ValueError):
        estimate_delta(sys, 3.0)


def test_delta_direction_doubling_is_stable():
    sys = builtin("example17")[0]
    a = estimate_delta(sys, 1.0, 0.0, directions=41).delta
    b = estimate_delta(sys, 1.0, 0.0, directions=82).delta
    assert abs(a - b) <= 0.01 * a


def test_full_ball_mode_agrees_on_boundary_maximizers():
    sys = builtin("example17", n=1, h="0")[0]
    assert estimate_delta(sys, 1.0, 0.0, full_ball=True).delta == pytest.approx(
        estimate_delta(sys, 1.0, 0.0).delta, rel=1e-12)


def test_uniformity_report(tmp_path):
    sys = builtin("linear_decay")[0]
    report = uniformity_report(sys, [0.1, 0.5], [0.0, 5.0])
    assert report.delta.shape == (2, 2)
    assert report.uniformly_stable and report.monotone_in_epsilon
    assert np.all(report.delta <= np.array([[0.1], [0.5]]))
    assert np.all(report.spread <= 1e-3)
    report.write(tmp_path)
    rows = list(csv.reader(open(tmp_path / "delta_table.csv")))
    assert rows[0] == ["epsilon", "t0", "delta"] and len(rows) == 5
    summary = json.load(open(tmp_path / "summary.json"))
    assert summary["verdict"] == "uniformly stable (empirical)"
    curve = np.loadtxt(tmp_path / "delta_curve.dat")
    assert curve.shape == (2, 4)


def test_uniformity_report_unstable():
    sys = builtin("unstable_linear")[0]
    report = uniformity_report(sys, [0.5, 1.0], [0.0])
    assert not report.uniformly_stable
    assert set(report.witnesses) == {(0.5, 0.0), (1.0, 0.0)}
    assert report.summary()["spread"] == [None, None]


def test_uniformity_report_needs_grids():
    with pytest.raises(ValueError):
        uniformity_report(builtin("linear_decay")[0], [], [0.0])


def test_settling_linear_decay(tmp_path):
    sys = builtin("linear_decay")[0]
    rows = settling_time(sys, 0.1, 1.0, [0.0, 5.0])
    for r in rows:
        assert r.T == pytest.approx(math.log(10), abs=1e-3)
    write_settling_table(tmp_path / "s.csv", rows)
    lines = open(tmp_path / "s.csv").read().splitlines()
    assert lines[0] == "eta,c,t0,T" and len(lines) == 3


def test_settling_not_attained_for_example17():
    sys = builtin("example17")[0]
    rows = settling_time(sys, 0.05, 0.5, [0.0, 5.0])
    assert all(not r.attained for r in rows)


def test_settling_oscillator_is_uniform():
    sys = builtin("matrosov_oscillator")[0]
    rows = settling_time(sys, 0.05, 1.0, [0.0, 1.0, 5.0, 10.0])
    T = np.array([r.T for r in rows])
    assert np.all(np.isfinite(T))
    assert (T.max() - T.min()) / T.min() <= 0.2


def test_settling_preconditions():
    with pytest.raises(ValueError):
        settling_time(builtin("linear_decay")[0], 1.0, 0.5, [0.0])


def test_bounds_check_worked_example():
    params = example17_params(2, "exp(-t)", "x1^2")
    v = example17_bounds_check(params, [(0.0, [0.3, 0.4])])
    run = v.details["runs"][0]
    assert v.status == "pass"
    assert run["bound_norm"] == pytest.approx(0.5 * math.e, abs=1e-5)
    assert run["budget"] == pytest.approx(1.84726, abs=1e-5)
    assert run["sup_norm"] <= 1.35914


def test_bounds_check_equilibrium():
    params = example17_params(2, "exp(-t)", "x1^2")
    v = example17_bounds_check(params, [(0.0, [0.0, 0.0])])
    run = v.details["runs"][0]
    assert v.status == "pass"
    assert run["sup_norm"] == 0.0 and run["integral"] == 0.0


def test_bounds_check_attained_limit():
    # x(t) = 0.5 exp(1 - e^{-2t}) approaches the bound 0.5 e
    params = example17_params(1, "2*exp(-2*t)", "0")
    assert params.M1 == pytest.approx(1.0, abs=1e-12)
    v = example17_bounds_check(params, [(0.0, [0.5])])
    run = v.details["runs"][0]
    assert v.status == "pass"
    assert run["sup_norm"] == pytest.approx(0.5 * math.e, rel=1e-9)


def test_bounds_check_catches_wrong_m1():
    params = example17_params(1, "exp(-t)", "0", M1=0.5)
    v = example17_bounds_check(params, [(0.0, [0.5])])
    assert v.status == "fail" and v.witness is not None
