import numpy as np
import pytest

from rdcontrol.cascade import make_transform
from rdcontrol.errors import IllConditioned
from rdcontrol.penalized import (conjugate_gradient, control_sup_norm, energy_identity, epsilon_sweep,
                                 optimality_residual, solve_penalized, weighted_control_energy)
from rdcontrol.sourceterm import WeightFamily
from rdcontrol.spectral import SpectralDomain, linear_operator

from conftest import random_linv


@pytest.fixture(scope="module")
def small(one_control_net):
    tr = make_transform(one_control_net, np.ones(4))
    dom = SpectralDomain.for_degree(1.0, 8, (0.3, 0.7), one_control_net.gamma)
    return tr, dom, linear_operator(dom, tr), WeightFamily(M=0.1, T=1.0)


def spd(size, cond, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((size, size)))
    return (q * np.geomspace(1.0, cond, size)) @ q.T


def test_cg_matches_dense_solve():
    a = spd(30, 1e4, 0)
    b = np.random.default_rng(1).standard_normal(30)
    x, its, res, ritz = conjugate_gradient(lambda v: a @ v, b, rtol=1e-13)
    np.testing.assert_allclose(x, np.linalg.solve(a, b), rtol=1e-8)
    assert res <= 1e-13 and 0 < its <= 300
    # Ritz values of a symmetric operator lie inside its spectrum
    eig = np.linalg.eigvalsh(a)
    assert ritz[0] >= eig[0] * (1 - 1e-8) and ritz[-1] <= eig[-1] * (1 + 1e-8)


def test_cg_zero_rhs():
    x, its, res, ritz = conjugate_gradient(lambda v: v, np.zeros(5))
    assert its == 0 and res == 0.0 and not x.any() and ritz.size == 0


def test_cg_indefinite_and_capped():
    with pytest.raises(IllConditioned):
        conjugate_gradient(lambda v: -v, np.ones(4))
    with pytest.raises(IllConditioned) as err:
        conjugate_gradient(lambda v: spd(40, 1e8, 2) @ v, np.ones(40), rtol=1e-14, max_iter=3)
    assert err.value.details["condition_estimate"] > 1


def test_zero_initial_state(small):
    tr, dom, op, w = small
    sol = solve_penalized(np.zeros((4, dom.n_modes)), 1e-4, w, dom, tr, npairs=50, op=op)
    assert not sol.control.values.any()
    assert not sol.trajectory.states.any()


def test_rejects_nonpositive_eps(small):
    tr, dom, op, w = small
    with pytest.raises(ValueError):
        solve_penalized(np.zeros((4, dom.n_modes)), 0.0, w, dom, tr, op=op)


def test_energy_identity(small):
    tr, dom, op, w = small
    z0 = random_linv(4, 1, dom.n_modes, 3)
    sol = solve_penalized(z0, 1e-1, w, dom, tr, npairs=100, op=op)
    lhs, pairing, observed = energy_identity(sol, z0, w, dom, 1e-1)
    assert abs(lhs - (pairing + observed)) <= 1e-8 * max(abs(lhs), abs(pairing), observed)
    assert sol.report["cg_residual"] <= 1e-10 and sol.report["ritz_min"] > 0


def test_optimality_relation_moderate_eps(small):
    tr, dom, op, w = small
    z0 = random_linv(4, 1, dom.n_modes, 4)
    sol = solve_penalized(z0, 1e-2, w, dom, tr, npairs=100, op=op)
    assert optimality_residual(sol, w, dom) <= 1e-6


def test_homogeneity(small):
    tr, dom, op, w = small
    z0 = random_linv(4, 1, dom.n_modes, 5)
    a = solve_penalized(z0, 1e-3, w, dom, tr, npairs=60, op=op)
    b = solve_penalized(2 * z0, 1e-3, w, dom, tr, npairs=60, op=op)
    np.testing.assert_allclose(b.control.values, 2 * a.control.values, rtol=1e-8, atol=1e-12 * np.abs(
        b.control.values).max())
    assert weighted_control_energy(b, w, dom) == pytest.approx(4 * weighted_control_energy(a, w, dom), rel=1e-8)
    assert control_sup_norm(b.control, dom) == pytest.approx(2 * control_sup_norm(a.control, dom), rel=1e-8)


def test_sweep_monotone_and_bounded(small):
    tr, dom, op, w = small
    z0 = random_linv(4, 1, dom.n_modes, 6)
    rows = epsilon_sweep(z0, [1e-2, 1e-4, 1e-6], w, dom, tr, npairs=60, op=op)
    finals = [r["terminal_norm"] for r in rows]
    assert all(b <= a + 1e-10 for a, b in zip(finals, finals[1:]))
    # a stiffer penalty buys a smaller terminal state with more control energy
    energies = [r["weighted_control_energy"] for r in rows]
    assert all(b >= a * (1 - 1e-10) for a, b in zip(energies, energies[1:]))
    with pytest.raises(ValueError):
        epsilon_sweep(z0, [1e-4, 1e-2], w, dom, tr, op=op)
