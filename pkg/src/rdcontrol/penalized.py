"""Penalized weighted-energy control: minimize

    1/2 int rho_0^-2 |1_omega H|^2 + 1/(2 eps) |Z(T)|^2

over node values of H. The minimizer is h_j = rho_0(t_j)^2 B^T phi(t_j) with phi
the adjoint flow from phi(T) = -Z(T)/eps, so the problem reduces to the
terminal multiplier: (Lambda + eps I) phi_T = -exp(T M) z0, where Lambda is the
weighted reachability Gramian. That symmetric system is solved by conjugate
gradients.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import IllConditioned
from .lebeau_robbiano import check_invariant_subspace
from .spectral import (ControlSignal, l2_norm, linear_operator, pair_grid, simpson_weights, simulate_adjoint,
                       simulate_linear)


def conjugate_gradient(matvec, b, rtol=1e-10, max_iter=None):
    """CG for a symmetric positive definite operator.

    Returns (x, iterations, relative residual, Ritz values of the Lanczos
    tridiagonal built from the CG coefficients).
    """
    b = np.asarray(b, float)
    max_iter = max_iter or 10 * b.size
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0, np.array([])
    r = b.copy()
    p = r.copy()
    rr = r @ r
    alphas, betas = [], []
    it = 0
    while it < max_iter:
        Ap = matvec(p)
        curv = p @ Ap
        if curv <= 0:
            raise IllConditioned("operator is not positive definite along a search direction", curvature=float(curv))
        alpha = rr / curv
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        alphas.append(alpha)
        it += 1
        if math.sqrt(rr_new) <= rtol * bnorm:
            break
        beta = rr_new / rr
        betas.append(beta)
        p = r + beta * p
        rr = rr_new
    else:
        ritz = _ritz(alphas, betas)
        raise IllConditioned(f"CG did not reach {rtol:.1e} in {max_iter} iterations",
                             residual=float(math.sqrt(rr_new) / bnorm),
                             condition_estimate=float(ritz[-1] / ritz[0]) if len(ritz) else math.inf)
    return x, it, math.sqrt(rr_new) / bnorm, _ritz(alphas, betas)


def _ritz(alphas, betas):
    k = len(alphas)
    if k == 0:
        return np.array([])
    diag = np.empty(k)
    diag[0] = 1.0 / alphas[0]
    for i in range(1, k):
        diag[i] = 1.0 / alphas[i] + betas[i - 1] / alphas[i - 1]
    off = np.array([math.sqrt(betas[i]) / alphas[i] for i in range(k - 1)])
    tri = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    return np.linalg.eigvalsh(tri)


@dataclass
class PenalizedSolution:
    control: ControlSignal
    trajectory: object
    adjoint: object
    phi_T: np.ndarray
    report: dict


def weighted_gramian(dom, transform, times, log_rho0, op=None):
    """Lambda = sum_j w_j rho_0(t_j)^2 Psi_j B W B^T Psi_j^T as a dense (nK, nK) matrix."""
    op = op or linear_operator(dom, transform)
    n, m, K = transform.n, transform.m, dom.n_modes
    w = simpson_weights(times) * np.exp(2.0 * np.asarray(log_rho0))
    psi = op.to_final(times)                                   # (J, K, n, n)
    drive = psi[:, :, :, :m] * np.sqrt(w)[:, None, None, None]  # (J, K, n, m)
    flat = drive.transpose(1, 2, 0, 3).reshape(K * n, -1)
    gram = (flat @ flat.T).reshape(K, n, K, n) * dom.W[:, None, :, None]
    # reorder to the (species, mode) layout of state arrays
    gram = gram.transpose(1, 0, 3, 2).reshape(n * K, n * K)
    return 0.5 * (gram + gram.T), psi


def solve_penalized(z0, eps, weights, dom, transform, npairs=200, rtol=1e-13, max_iter=None, op=None):
    """Minimizer of the penalized functional with its trajectory and adjoint."""
    if not eps > 0:
        raise ValueError("penalty parameter must be positive")
    n, m, K = transform.n, transform.m, dom.n_modes
    op = op or linear_operator(dom, transform)
    z0 = np.asarray(z0, float)
    check_invariant_subspace(z0, m)
    times = pair_grid(0.0, weights.T, npairs)
    log_rho0 = weights.log_rho0(times)
    gram, psi = weighted_gramian(dom, transform, times, log_rho0, op)
    free_final = np.einsum("kab,bk->ak", psi[0], z0)
    rhs = -free_final.ravel()
    phi_T, iters, resid, ritz = conjugate_gradient(lambda v: gram @ v + eps * v, rhs, rtol=rtol,
                                                   max_iter=max_iter)
    phi_T = phi_T.reshape(n, K)
    rho2 = np.exp(2.0 * log_rho0)
    control = ControlSignal(times, rho2[:, None, None] * np.einsum("jkba,bk->jak", psi[:, :, :, :m], phi_T))
    traj = simulate_linear(dom, transform, z0, control=control, op=op)
    # adjoint rebuilt from the simulated terminal state, independently of the multiplier
    adjoint = simulate_adjoint(dom, transform, -traj.final / eps, times=times, op=op)
    report = {"eps": eps, "cg_iterations": iters, "cg_residual": resid,
              "ritz_min": float(ritz[0]) if len(ritz) else eps, "ritz_max": float(ritz[-1]) if len(ritz) else eps}
    return PenalizedSolution(control, traj, adjoint, phi_T, report)


def _localized_norms(values, dom):
    """|1_omega v(t)|_{L^2} at every node for v of shape (J, rows, N+1)."""
    return np.sqrt(np.maximum(np.einsum("jik,kl,jil->j", values, dom.W, values), 0.0))


def optimality_residual(sol, weights, dom):
    """max_t |1_omega (h - rho_0^2 phi_B)(t)| / max_t |1_omega h(t)|, phi from -Z(T)/eps."""
    m = sol.control.values.shape[1]
    rho2 = np.exp(2.0 * weights.log_rho0(sol.control.times))
    diff = sol.control.values - rho2[:, None, None] * sol.adjoint.states[:, :m]
    scale = np.max(_localized_norms(sol.control.values, dom))
    err = np.max(_localized_norms(diff, dom))
    return float(err / scale) if scale > 0 else float(err)


def energy_identity(sol, z0, weights, dom, eps):
    """Terms of -|Z(T)|^2 / eps = <z0, phi(0)> + sum_i int int_omega |rho_0 phi_i|^2.

    Returns (lhs, pairing, observed); the right side is pairing + observed.
    """
    m = sol.control.values.shape[1]
    times = sol.control.times
    phi = sol.adjoint.states
    w = simpson_weights(times) * np.exp(2.0 * weights.log_rho0(times))
    observed = float(np.sum(w * np.einsum("jik,kl,jil->j", phi[:, :m], dom.W, phi[:, :m])))
    lhs = -l2_norm(sol.trajectory.final) ** 2 / eps
    return lhs, float(np.sum(np.asarray(z0) * phi[0])), observed


def weighted_control_energy(sol, weights, dom):
    """int rho_0^-2 |1_omega H|^2, evaluated as int rho_0^2 |1_omega phi_B|^2 to avoid dividing by underflow."""
    m = sol.control.values.shape[1]
    times = sol.control.times
    phi = sol.adjoint.states[:, :m]
    w = simpson_weights(times) * np.exp(2.0 * weights.log_rho0(times))
    return float(np.sum(w * np.einsum("jik,kl,jil->j", phi, dom.W, phi)))


def control_sup_norm(control, dom):
    """Largest |H(t, x)| over grid times and collocation points inside omega."""
    a, b = dom.omega
    x = dom.grid[(dom.grid >= a) & (dom.grid <= b)]
    vals = np.einsum("jik,kx->jix", control.values, dom.basis(x))
    return float(np.max(np.abs(vals)))


def epsilon_sweep(z0, eps_list, weights, dom, transform, npairs=200, op=None):
    """Rows of (eps, |Z(T)|^2/eps, weighted energy, control sup-norm, |Z(T)|) for decreasing eps."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("penalty values must be strictly decreasing")
    op = op or linear_operator(dom, transform)
    rows = []
    for eps in eps_list:
        sol = solve_penalized(z0, eps, weights, dom, transform, npairs=npairs, op=op)
        final = l2_norm(sol.trajectory.final)
        rows.append({"eps": eps, "terminal_norm_sq_over_eps": final ** 2 / eps,
                     "weighted_control_energy": weighted_control_energy(sol, weights, dom),
                     "control_sup_norm": control_sup_norm(sol.control, dom), "terminal_norm": final,
                     "cg_iterations": sol.report["cg_iterations"], "ritz_min": sol.report["ritz_min"]})
    return rows
