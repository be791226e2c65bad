import math

import numpy as np
import pytest

from rdcontrol.cascade import make_transform
from rdcontrol.errors import ConfigInvalid, MassConditionViolated, WeightedSourceUnbounded, ZeroDenominator
from rdcontrol.sourceterm import (WeightFamily, _intervals, log_weighted_sup, plan_schedule, sourceterm_control,
                                  strong_observability_ratio, weight_eval)
from rdcontrol.spectral import ControlSignal, SpectralDomain, l2_norm, linear_operator, node_norms, simulate_linear

from conftest import random_linv


@pytest.fixture(scope="module")
def coarse(two_control_net):
    tr = make_transform(two_control_net, np.ones(4))
    dom = SpectralDomain.for_degree(1.0, 8, (0.3, 0.7), two_control_net.gamma)
    op = linear_operator(dom, tr)
    w = WeightFamily(M=0.1, T=1.0)
    return tr, dom, op, w, plan_schedule(w, dom, tr, op=op)


@pytest.mark.parametrize("kwargs, field", [
    (dict(M=0.0, T=1.0), "M"), (dict(M=1.0, T=-1.0), "T"), (dict(M=1.0, T=1.0, q=1.5), "q"),
    (dict(M=1.0, T=1.0, q=1.4, p=1.0), "p"),
])
def test_weight_validation(kwargs, field):
    with pytest.raises(ConfigInvalid) as err:
        WeightFamily(**kwargs)
    assert err.value.field == field


def test_weight_closed_forms():
    w = WeightFamily(M=0.5, T=2.0, q=1.2, p=4.0)
    assert w.log_rho0(0.0) == pytest.approx(-4 * math.log(0.5) - 0.5 * 4 / (0.2 * 2.0))
    assert w.log_rhoS(1.0) == pytest.approx(-5 * math.log(0.5) - 5 * 1.44 * 0.5 / (0.2 * 1.0))
    assert w.log_rho0(2.0) == -math.inf and w.rhoS(3.0) == 0.0
    assert weight_eval(w, 1.0, "rho0") == pytest.approx(math.exp(w.log_rho0(1.0)))
    np.testing.assert_allclose(w.schedule([0, 1, 2]), [0.0, 2.0 * (1 - 1 / 1.2), 2.0 * (1 - 1 / 1.44)])


def test_squared_state_weight_is_dominated_by_source_weight():
    # rho_0^2 / rho_S tends to zero at T, which is what lets a quadratic remainder be a valid source
    w = WeightFamily(M=0.3, T=1.0)
    t = 1.0 - np.logspace(-1, -6, 30)
    gap = 2 * w.log_rho0(t) - w.log_rhoS(t)
    assert np.all(np.diff(gap) < 0)


def test_schedule_intervals():
    b = _intervals(1.0, 1.2, 1e-3)
    assert b[0] == 0.0 and b[-1] == 1.0
    assert np.all(np.diff(b) > 0)
    np.testing.assert_allclose(b[1:4], [1 - 1.2 ** -1, 1 - 1.2 ** -2, 1 - 1.2 ** -3])


def test_log_weighted_sup():
    assert log_weighted_sup([1.0, 2.0, 0.0], np.array([0.0, -1.0, -5.0])) == pytest.approx(math.log(2.0) + 1.0)
    assert log_weighted_sup([0.0], np.array([0.0])) == -math.inf


def test_plan_is_data_independent(coarse):
    tr, dom, op, w, plan = coarse
    again = plan_schedule(w, dom, tr, op=op)
    assert again == plan
    steered = [e is not None for e in plan["entries"]]
    assert steered[0] and steered == sorted(steered, reverse=True)


def test_steers_without_source(coarse):
    tr, dom, op, w, plan = coarse
    z0 = random_linv(4, 2, dom.n_modes, 0)
    res = sourceterm_control(z0, None, w, dom, tr, plan=plan, op=op)
    rep = res.report
    assert rep["final_norm"] <= 1e-6 * l2_norm(z0)
    assert all(np.isfinite(v) for v in rep["certificates"].values())
    replay = simulate_linear(dom, tr, z0, control=res.control, op=op).final
    assert l2_norm(replay - res.trajectory.final) <= 1e-9 * l2_norm(z0)


def test_steers_with_weighted_source(coarse):
    tr, dom, op, w, plan = coarse
    z0 = random_linv(4, 2, dom.n_modes, 1)
    profile = np.zeros((4, dom.n_modes))
    profile[:2, :3] = [[1.0, 0.5, -0.2], [0.3, -0.4, 0.1]]
    # exactly rho_S * profile wherever rho_S is a normal double, zero past that
    res = sourceterm_control(z0, lambda t: w.rhoS(t) * profile if w.log_rhoS(t) > -700 else 0 * profile,
                             w, dom, tr, plan=plan, op=op)
    rep = res.report
    assert rep["final_norm"] <= 1e-6 * rep["scale"]
    assert rep["source_over_rhoS"] == pytest.approx(l2_norm(profile), rel=1e-12)


def test_source_in_frozen_mean_rejected(coarse):
    tr, dom, op, w, plan = coarse
    bad = np.zeros((4, dom.n_modes))
    bad[3, 0] = 1.0
    with pytest.raises(MassConditionViolated):
        sourceterm_control(np.zeros((4, dom.n_modes)), lambda t: bad, w, dom, tr, plan=plan, op=op)


def test_undominated_source_rejected(coarse):
    tr, dom, op, w, plan = coarse
    flat = np.zeros((4, dom.n_modes))
    flat[0, 1] = 1.0
    with pytest.raises(WeightedSourceUnbounded):
        sourceterm_control(np.zeros((4, dom.n_modes)), lambda t: flat, w, dom, tr, plan=plan, op=op,
                           source_bound=1e3)


def test_source_as_signal_matches_callable(coarse):
    tr, dom, op, w, plan = coarse
    z0 = random_linv(4, 2, dom.n_modes, 2)
    profile = np.zeros((4, dom.n_modes))
    profile[1, 2] = 0.7
    a = sourceterm_control(z0, lambda t: w.rhoS(t) * profile, w, dom, tr, plan=plan, op=op)
    sig = ControlSignal(a.control.times, w.rhoS(a.control.times)[:, None, None] * profile[None])
    b = sourceterm_control(z0, sig, w, dom, tr, plan=plan, op=op)
    np.testing.assert_array_equal(a.control.values, b.control.values)


def test_observability_ratio(coarse):
    tr, dom, op, w, _ = coarse
    rng = np.random.default_rng(0)
    best, ratios = strong_observability_ratio([rng.standard_normal((4, dom.n_modes)) for _ in range(3)], w, dom,
                                              tr, npairs=100, op=op)
    assert len(ratios) == 3 and 0 < best < np.inf and best == max(ratios)
    with pytest.raises(ZeroDenominator):
        strong_observability_ratio([np.zeros((4, dom.n_modes))], w, dom, tr, npairs=20, op=op)


def test_weighted_state_stays_dominated(coarse):
    tr, dom, op, w, plan = coarse
    res = sourceterm_control(random_linv(4, 2, dom.n_modes, 0), None, w, dom, tr, plan=plan, op=op)
    t = res.trajectory.times
    norms = node_norms(res.trajectory.states)
    log_rho0 = w.log_rho0(t)
    early = t <= 0.25 * w.T
    span = t <= res.report["steered_until"]
    first_quartile = log_weighted_sup(norms[early], log_rho0[early])
    assert log_weighted_sup(norms[span], log_rho0[span]) <= first_quartile + math.log(10.0)
    assert np.isfinite(res.report["certificates"]["sup_H_over_rho0"])
