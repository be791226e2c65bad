"""Reference (numpy) implementation of the time-stepping kernels.

The state is a coefficient array x of shape (n, K). Time advances over pairs of
grid intervals [t0, t2] with exact midpoint t1. For every pair kind s the caller
supplies per-mode matrices of shape (S, K, n, n):

    EH = exp(H M_k), Eh = exp(H/2 M_k), Eq = exp(H/4 M_k)
    F1H, G2H : first two exponential-integrator weights over H (G2 = F2 / step)
    F1h, G2h : the same over H/2

Inputs g (J, n, K) are integrated by Simpson's rule against the exact
propagator. The optional nonlinearity is the mass-action remainder

    N(x) = v * anal(R(Pinv synth(x) + ustar)) - A_lin x

treated explicitly with a two-stage exponential (ETD2) correction.
Status codes: 0 ok, 1 sup-norm above bound, 2 non-finite values.
"""
import numpy as np

OK, BLOWUP, NONFINITE = 0, 1, 2


def bmv(mats, x):
    """Per-mode matrix-vector product: out[:, k] = mats[k] @ x[:, k]."""
    return np.einsum("kij,jk->ik", mats, x)


def mass_action_factor(y, alpha, beta):
    """R on collocation values y (n, Q)."""
    fwd = np.ones(y.shape[1])
    bwd = np.ones(y.shape[1])
    for i in range(y.shape[0]):
        if alpha[i]:
            fwd = fwd * y[i] ** alpha[i]
        if beta[i]:
            bwd = bwd * y[i] ** beta[i]
    return fwd - bwd


def explicit_term(x, synth, anal, pinv, ustar, v, a_lin, alpha, beta):
    y = pinv @ (x @ synth.T) + ustar[:, None]
    r = mass_action_factor(y, alpha, beta)
    return np.outer(v, anal @ r) - a_lin @ x, np.max(np.abs(y))


def integrate_linear(x0, kinds, H, EH, Eh, Eq, g):
    """Linear recursion over pairs; returns states at every node (J, n, K)."""
    npairs = len(kinds)
    J = 2 * npairs + 1
    n, K = x0.shape
    out = np.empty((J, n, K))
    out[0] = x0
    x = x0
    for p in range(npairs):
        s = kinds[p]
        h = 0.5 * H[s]
        g0, g1, g2 = g[2 * p], g[2 * p + 1], g[2 * p + 2]
        gq = 0.375 * g0 + 0.75 * g1 - 0.125 * g2
        out[2 * p + 1] = bmv(Eh[s], x) + (h / 6.0) * (bmv(Eh[s], g0) + 4.0 * bmv(Eq[s], gq) + g1)
        x = bmv(EH[s], x) + (H[s] / 6.0) * (bmv(EH[s], g0) + 4.0 * bmv(Eh[s], g1) + g2)
        out[2 * p + 2] = x
    return out, OK, -1


def integrate_nonlinear(x0, kinds, H, EH, Eh, Eq, F1H, G2H, F1h, G2h, g,
                        synth, anal, pinv, ustar, v, a_lin, alpha, beta, bound):
    npairs = len(kinds)
    J = 2 * npairs + 1
    n, K = x0.shape
    out = np.empty((J, n, K))
    out[0] = x0
    x = x0
    args = (synth, anal, pinv, ustar, v, a_lin, alpha, beta)
    for p in range(npairs):
        s = kinds[p]
        h = 0.5 * H[s]
        n0, sup = explicit_term(x, *args)
        if not np.isfinite(sup):
            return out, NONFINITE, 2 * p
        if sup > bound:
            return out, BLOWUP, 2 * p
        g0, g1, g2 = g[2 * p], g[2 * p + 1], g[2 * p + 2]
        gq = 0.375 * g0 + 0.75 * g1 - 0.125 * g2
        lin_m = bmv(Eh[s], x) + (h / 6.0) * (bmv(Eh[s], g0) + 4.0 * bmv(Eq[s], gq) + g1)
        a_m = lin_m + bmv(F1h[s], n0)
        n_m, _ = explicit_term(a_m, *args)
        out[2 * p + 1] = a_m + bmv(G2h[s], n_m - n0)
        lin = bmv(EH[s], x) + (H[s] / 6.0) * (bmv(EH[s], g0) + 4.0 * bmv(Eh[s], g1) + g2)
        a = lin + bmv(F1H[s], n0)
        n_a, _ = explicit_term(a, *args)
        x = a + bmv(G2H[s], n_a - n0)
        out[2 * p + 2] = x
    _, sup = explicit_term(x, *args)
    if not np.isfinite(sup):
        return out, NONFINITE, J - 1
    if sup > bound:
        return out, BLOWUP, J - 1
    return out, OK, -1
