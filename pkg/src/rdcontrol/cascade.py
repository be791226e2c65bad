"""Triangular change of variables turning the reaction system into a cascade.

With Z = P (U - U*) the uncontrolled species m+2..n lose their reaction term and
are driven only by the Laplacian of the previous component.
"""
from dataclasses import dataclass
import warnings

import numpy as np
from scipy.linalg import solve_triangular

from .errors import AssumptionViolation, DegenerateInput
from .reaction import common_rate, rate_jacobian


@dataclass(frozen=True)
class CascadeTransform:
    P: np.ndarray
    P_inv: np.ndarray
    D_J: np.ndarray
    A_J: np.ndarray
    gamma: int
    m: int
    u_star: np.ndarray

    @property
    def n(self):
        return self.P.shape[0]

    def __post_init__(self):
        for name in ("P", "P_inv", "D_J", "A_J", "u_star"):
            arr = np.array(getattr(self, name), float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def build_P(net, dist_tol=1e-8):
    n, m = net.n, net.m
    d = np.asarray(net.d)
    s = net.stoich
    scale = d.max()
    for k in range(m, n):
        for r in range(k + 1, n):
            if abs(d[k] - d[r]) < dist_tol * scale:
                raise AssumptionViolation(
                    f"diffusivities of species {k + 1} and {r + 1} coincide", species=[k + 1, r + 1])
    P = np.eye(n)
    for k in range(m, n):
        for l in range(m, k + 1):
            prod = s[l]
            for r in range(m, k + 1):
                if r != l:
                    prod *= d[l] - d[r]
            P[k, l] = 1.0 / prod
    cond = np.linalg.cond(P)
    if cond > 1e12:
        warnings.warn(f"change of variables is ill-conditioned (cond = {cond:.3e})", RuntimeWarning)
    return P


def invert_P(P, m):
    """Inverse by forward substitution on the lower-triangular uncontrolled block."""
    n = P.shape[0]
    P_inv = np.eye(n)
    P_inv[m:, m:] = solve_triangular(P[m:, m:], np.eye(n - m), lower=True)
    return P_inv


def build_D_J(net):
    D = np.diag(np.asarray(net.d, float))
    for i in range(net.m + 1, net.n):
        D[i, i - 1] = 1.0
    return D


def reciprocal_product_terms(a):
    a = np.asarray(a, float)
    s = len(a)
    if s < 2:
        raise DegenerateInput("need at least two entries")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    diff = a[:, None] - a[None, :]
    off = ~np.eye(s, dtype=bool)
    if np.min(np.abs(diff[off])) <= 1e-14 * scale:
        raise DegenerateInput("entries are not pairwise distinct", values=a.tolist())
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def reciprocal_product_identity(a):
    """sum_i prod_{j != i} 1/(a_i - a_j), which vanishes for distinct a."""
    return float(np.sum(reciprocal_product_terms(a)))


def column_identity_residuals(P, net):
    """|sum_{l=m+1}^{k} P_kl (beta_l - alpha_l)| for k = m+2..n."""
    m, n = net.m, net.n
    s = net.stoich
    return np.array([abs(np.dot(P[k, m:k + 1], s[m:k + 1])) for k in range(m + 1, n)])


def column_identity_check(transform, net):
    res = column_identity_residuals(transform.P, net)
    return float(res.max()) if res.size else 0.0


def nonlinear_weights(net):
    """v such that G(z) = v R(P^-1 z + u*): (beta_i - alpha_i) on controlled rows, 1 on row m+1."""
    v = np.zeros(net.n)
    v[:net.m] = net.stoich[:net.m]
    v[net.m] = 1.0
    return v


def transformed_nonlinearity(transform, net, z):
    """G(z) for z of shape (n, ...); rows m+2..n are exactly zero."""
    z = np.asarray(z, float)
    flat = z.reshape(net.n, -1)
    u = transform.P_inv @ flat + transform.u_star[:, None]
    r = common_rate(net, u)
    return (nonlinear_weights(net)[:, None] * r[None, :]).reshape(z.shape)


def build_A_J(P_inv, net, u_star, tol=1e-12):
    m = net.m
    grad_rows = rate_jacobian(net, u_star) @ P_inv
    A = np.zeros((net.n, net.n))
    A[:m] = grad_rows[:m]
    A[m] = grad_rows[m] / net.stoich[m]
    if abs(A[m, m - 1]) <= tol:
        raise AssumptionViolation(
            f"species {m} does not drive species {m + 1} at the stationary state", a=float(A[m, m - 1]))
    return A


def make_transform(net, u_star):
    u_star = np.asarray(u_star, float)
    P = build_P(net)
    P_inv = invert_P(P, net.m)
    return CascadeTransform(P=P, P_inv=P_inv, D_J=build_D_J(net), A_J=build_A_J(P_inv, net, u_star),
                            gamma=net.gamma, m=net.m, u_star=u_star)


def stationary_coeffs(u_star, n_modes, L):
    """Cosine coefficients of the constant field u*."""
    c = np.zeros((len(u_star), n_modes))
    c[:, 0] = np.sqrt(L) * np.asarray(u_star, float)
    return c


def to_z(u_coeffs, transform, L):
    u = np.asarray(u_coeffs, float)
    shift = stationary_coeffs(transform.u_star, u.shape[-1], L)
    return np.einsum("ij,...jk->...ik", transform.P, u - shift)


def from_z(z_coeffs, transform, L):
    z = np.asarray(z_coeffs, float)
    shift = stationary_coeffs(transform.u_star, z.shape[-1], L)
    return np.einsum("ij,...jk->...ik", transform.P_inv, z) + shift


def roundtrip_error(u_coeffs, transform, L):
    return float(np.max(np.abs(from_z(to_z(u_coeffs, transform, L), transform, L) - u_coeffs)))
