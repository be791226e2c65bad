from math import factorial

import mpmath
import numpy as np
import pytest

from rdcontrol.errors import LambdaZeroUnsupported, OrderTooHigh
from rdcontrol.finite_dim import (ModeSystem, SmoothCutoff, _jet_exp, _jet_reciprocal, brunovsky_control,
                                  control_at, smooth_step_jet, terminal_state_oracle)

mpmath.mp.dps = 40


def step_mp(x):
    return 1 / (1 + mpmath.exp(1 / (1 - x) - 1 / x))


@pytest.mark.parametrize("x", [0.2, 0.5, 0.73])
def test_step_derivatives_against_high_precision(x):
    jet = smooth_step_jet([x], 4)[:, 0]
    for p in range(5):
        ref = float(mpmath.diff(step_mp, mpmath.mpf(x), p))
        assert abs(jet[p] - ref) <= 1e-10 * max(1.0, abs(ref))


def test_step_values():
    jet = smooth_step_jet([-1.0, 0.0, 0.5, 1.0, 2.0], 2)
    np.testing.assert_array_equal(jet[0, [0, 1]], 1.0)
    np.testing.assert_array_equal(jet[0, [3, 4]], 0.0)
    assert jet[0, 2] == 0.5
    np.testing.assert_array_equal(jet[1:, [0, 1, 3, 4]], 0.0)


def test_step_is_antisymmetric():
    x = np.linspace(0.01, 0.99, 41)
    jet = smooth_step_jet(x, 3)
    rev = smooth_step_jet(1.0 - x, 3)
    np.testing.assert_allclose(jet[0] + rev[0], 1.0, atol=1e-14)
    np.testing.assert_allclose(jet[1], rev[1], atol=1e-10)


def test_jet_helpers():
    a = np.zeros((6, 1))
    a[0], a[1] = 1.0, -1.0
    np.testing.assert_allclose(_jet_reciprocal(a)[:, 0], np.ones(6))
    s = np.zeros((6, 1))
    s[1] = 1.0
    np.testing.assert_allclose(_jet_exp(s)[:, 0], [1.0 / factorial(k) for k in range(6)])


def test_cutoff_plateaus_and_order_limit():
    cut = SmoothCutoff(0.9, 3)
    t = np.array([0.0, 0.1, 0.3, 0.6, 0.75, 0.9])
    np.testing.assert_array_equal(cut(t), [1, 1, 1, 0, 0, 0])
    assert 0.0 < cut(np.array([0.45]))[0] < 1.0
    with pytest.raises(OrderTooHigh):
        cut.jet(t, 4)
    consts = cut.derivative_constants()
    assert consts[0] == 1.0 and np.all(np.isfinite(consts))


def cascade_pair(n, m, seed):
    rng = np.random.default_rng(seed)
    D = np.diag(np.arange(1.0, n + 1))
    for i in range(m + 1, n):
        D[i, i - 1] = 1.0
    A = np.zeros((n, n))
    A[:m + 1] = rng.standard_normal((m + 1, n))
    return D, A


@pytest.mark.parametrize("n, m, lam, tau", [(2, 1, 1.0, 0.5), (3, 1, 10.0, 1.0), (4, 2, 100.0, 0.1)])
def test_terminal_state_vanishes(n, m, lam, tau):
    D, A = cascade_pair(n, m, n + m)
    system = ModeSystem.from_cascade(D, A, lam, tau, m)
    y0 = np.random.default_rng(0).standard_normal(n)
    yT = terminal_state_oracle(system, y0)
    assert np.linalg.norm(yT) <= 1e-10 * np.linalg.norm(y0)


def test_construction_solves_uncontrolled_rows():
    D, A = cascade_pair(4, 2, 7)
    system = ModeSystem.from_cascade(D, A, 5.0, 0.6, 2)
    res = brunovsky_control(system, np.ones(4), npairs=100)
    assert np.max(np.abs(res.residual)) <= 1e-10 * np.max(np.abs(res.y))
    np.testing.assert_allclose(res.y[0], np.ones(4), atol=1e-14)
    np.testing.assert_allclose(res.y[-1], 0.0, atol=1e-14)


def test_control_vanishes_outside_middle_third():
    D, A = cascade_pair(3, 1, 3)
    system = ModeSystem.from_cascade(D, A, 2.0, 0.9, 1)
    h = control_at(system, np.array([1.0, -0.5, 0.2]), [0.05, 0.29, 0.61, 0.85])
    # before tau/3 the state is the free flow and h = y' - A y is pure rounding
    assert np.max(np.abs(h)) <= 1e-14
    np.testing.assert_array_equal(h[2:], 0.0)


def test_zero_eigenvalue_restricted_data():
    D, A = cascade_pair(4, 1, 11)
    system = ModeSystem.from_cascade(D, A, 0.0, 1.0, 1)
    with pytest.raises(LambdaZeroUnsupported):
        brunovsky_control(system, np.array([1.0, 1.0, 1.0, 0.0]))
    y0 = np.array([1.0, -2.0, 0.0, 0.0])
    yT = terminal_state_oracle(system, y0)
    assert np.linalg.norm(yT) <= 1e-10 * np.linalg.norm(y0)


def test_energy_grows_as_horizon_shrinks():
    D, A = cascade_pair(3, 1, 5)
    y0 = np.array([1.0, 0.5, -0.3])
    energies = [brunovsky_control(ModeSystem.from_cascade(D, A, 1.0, tau, 1), y0, 400).control_energy()
                for tau in (1.0, 0.5, 0.25)]
    assert energies[0] < energies[1] < energies[2]
