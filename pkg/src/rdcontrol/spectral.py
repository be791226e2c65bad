"""Cosine-basis Galerkin discretization on (0, L) with Neumann ends.

Fields are coefficient arrays of shape (n, N+1) in the orthonormal basis
e_0 = 1/sqrt(L), e_k = sqrt(2/L) cos(k pi x / L). Time grids are made of pairs
of equal intervals; inputs are integrated with Simpson's rule against the exact
per-mode propagator, so a grid node t_j carries the quadrature weight w_j and

    z(T) = exp(T M) z0 + sum_j w_j exp((T - t_j) M) g_j

holds exactly for the discrete model (M acts mode by mode).
"""
from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np
from scipy.linalg import expm

from . import kernels
from .cascade import nonlinear_weights, stationary_coeffs
from .errors import BlowupDetected, ConfigInvalid, NonfiniteState, ShapeMismatch
from .reaction import rate_jacobian


@dataclass(frozen=True)
class SpectralDomain:
    L: float
    N: int
    omega: tuple
    quad_points: int

    def __post_init__(self):
        object.__setattr__(self, "omega", (float(self.omega[0]), float(self.omega[1])))
        a, b = self.omega
        if not (self.L > 0):
            raise ConfigInvalid("domain_length", "must be positive")
        if not (0 <= a < b <= self.L):
            raise ConfigInvalid("omega", f"need 0 <= a < b <= L, got {self.omega}")
        if self.N < 1:
            raise ConfigInvalid("N", "need at least one nonconstant mode")
        if self.quad_points <= self.N:
            raise ConfigInvalid("quad_points", "need more collocation points than modes")

    @classmethod
    def for_degree(cls, L, N, omega, gamma):
        """Domain whose collocation grid integrates products of degree gamma exactly."""
        return cls(L, N, omega, dealiased_points(N, gamma))

    @property
    def n_modes(self):
        return self.N + 1

    @cached_property
    def eigenvalues(self):
        return (np.arange(self.N + 1) * np.pi / self.L) ** 2

    @cached_property
    def grid(self):
        """Cell-midpoint collocation points; the midpoint rule is exact for cos(p pi x/L), p < 2Q."""
        Q = self.quad_points
        return (np.arange(Q) + 0.5) * self.L / Q

    def basis(self, x):
        """Basis values, shape (N+1, len(x))."""
        x = np.atleast_1d(np.asarray(x, float))
        k = np.arange(self.N + 1)[:, None]
        vals = np.sqrt(2.0 / self.L) * np.cos(k * np.pi * x[None, :] / self.L)
        vals[0] = 1.0 / np.sqrt(self.L)
        return vals

    @cached_property
    def synth(self):
        """Collocation values from coefficients: values = coeffs @ synth.T."""
        return self.basis(self.grid).T.copy()

    @cached_property
    def anal(self):
        """Coefficients from collocation values (midpoint quadrature)."""
        return self.basis(self.grid) * (self.L / self.quad_points)

    @cached_property
    def W(self):
        return localization_matrix(self)

    def to_physical(self, coeffs, x=None):
        basis = self.synth.T if x is None else self.basis(x)
        return np.asarray(coeffs) @ basis


def dealiased_points(N, gamma):
    return (gamma + 1) * N // 2 + 1


def _cos_integral(p, a, b, L):
    """Integral of cos(p pi x / L) over (a, b), vectorized in p."""
    p = np.asarray(p, float)
    out = np.empty_like(p)
    zero = p == 0
    out[zero] = b - a
    q = p[~zero] * np.pi / L
    out[~zero] = (np.sin(q * b) - np.sin(q * a)) / q
    return out


def localization_matrix(dom):
    """W_jk = integral over omega of e_j e_k, in closed form."""
    a, b = dom.omega
    L = dom.L
    k = np.arange(dom.N + 1)
    j, kk = np.meshgrid(k, k, indexing="ij")
    c = np.full(dom.N + 1, np.sqrt(2.0 / L))
    c[0] = 1.0 / np.sqrt(L)
    cc = np.outer(c, c)
    W = 0.5 * cc * (_cos_integral(np.abs(j - kk).ravel(), a, b, L).reshape(j.shape)
                    + _cos_integral((j + kk).ravel(), a, b, L).reshape(j.shape))
    return 0.5 * (W + W.T)


def project_low_modes(z, lambda_cut, dom):
    """Split z into modes with eigenvalue <= lambda_cut and the complement."""
    z = np.asarray(z, float)
    keep = dom.eigenvalues <= lambda_cut
    low = np.where(keep, z, 0.0)
    return low, z - low


def l2_norm(z):
    return float(node_norms(np.asarray(z, float)[None])[0])


def node_norms(values):
    """Euclidean norm of each values[j], scaled first so tiny entries do not underflow when squared."""
    v = np.asarray(values, float).reshape(len(values), -1)
    big = np.max(np.abs(v), axis=1) if v.shape[1] else np.zeros(len(v))
    safe = np.where(big > 0, big, 1.0)
    return big * np.sqrt(np.sum((v / safe[:, None]) ** 2, axis=1))


def spatial_std(coeffs, L):
    """Per-species standard deviation over (0, L)."""
    c = np.asarray(coeffs)
    return np.sqrt(np.sum(c[..., 1:] ** 2, axis=-1) / L)


def sup_norm(coeffs, dom):
    """Collocation sup-norm, the discrete stand-in for L-infinity."""
    return float(np.max(np.abs(dom.to_physical(coeffs))))


# --------------------------------------------------------------------------- time grids

def pair_grid(t0, t1, npairs):
    return np.linspace(t0, t1, 2 * int(npairs) + 1)


def check_pair_grid(times):
    t = np.asarray(times, float)
    if t.ndim != 1 or len(t) < 3 or len(t) % 2 == 0:
        raise ShapeMismatch("time grid needs an odd number (>= 3) of nodes")
    if np.any(np.diff(t) <= 0):
        raise ShapeMismatch("time grid must be strictly increasing")
    H = t[2::2] - t[:-2:2]
    slack = 1e-10 * H + 8 * np.finfo(float).eps * np.abs(t[2::2])
    if np.any(np.abs(t[1::2] - 0.5 * (t[:-2:2] + t[2::2])) > slack):
        raise ShapeMismatch("odd nodes must be exact midpoints of their pair")
    return t


def simpson_weights(times):
    t = check_pair_grid(times)
    w = np.zeros_like(t)
    H = t[2::2] - t[:-2:2]
    w[:-2:2] += H / 6.0
    w[1::2] += 4.0 * H / 6.0
    w[2::2] += H / 6.0
    return w


def refine_pairs(times, values, factor):
    """Split every pair into ``factor`` pairs, interpolating values quadratically."""
    t = check_pair_grid(times)
    if factor == 1:
        return t, values
    v = np.asarray(values)
    s = np.linspace(0.0, 1.0, 2 * factor + 1)
    l0 = 2.0 * (s - 0.5) * (s - 1.0)
    l1 = -4.0 * s * (s - 1.0)
    l2 = 2.0 * s * (s - 0.5)
    new_t, new_v = [t[:1]], [v[:1]]
    for p in range(len(t) // 2):
        t0, t2 = t[2 * p], t[2 * p + 2]
        new_t.append(t0 + (t2 - t0) * s[1:])
        new_v.append(np.tensordot(l0[1:], v[2 * p], 0) + np.tensordot(l1[1:], v[2 * p + 1], 0)
                     + np.tensordot(l2[1:], v[2 * p + 2], 0))
    return np.concatenate(new_t), np.concatenate(new_v)


def pair_kinds(times, rel=1e-12):
    """Group pairs by length; returns (kind index per pair, distinct lengths)."""
    t = check_pair_grid(times)
    H = t[2::2] - t[:-2:2]
    # node rounding perturbs lengths by a few ulps of t
    ulp = 8 * np.finfo(float).eps * np.max(np.abs(t))
    lengths, kinds = [], np.empty(len(H), dtype=np.intp)
    for p, h in enumerate(H):
        for s, ref in enumerate(lengths):
            if abs(h - ref) <= rel * ref + ulp:
                kinds[p] = s
                break
        else:
            lengths.append(h)
            kinds[p] = len(lengths) - 1
    return kinds, np.array(lengths)


# --------------------------------------------------------------------------- propagators

class ModalOperator:
    """Per-mode generator M_k = -lambda_k D + A with cached exponentials."""

    def __init__(self, eigenvalues, D, A):
        self.D = np.asarray(D, float)
        self.A = np.asarray(A, float)
        self.blocks = -np.asarray(eigenvalues)[:, None, None] * self.D[None] + self.A[None]
        self.n = self.D.shape[0]
        self._exp = {}
        self._etd = {}

    @staticmethod
    def _key(h):
        return float(f"{h:.14e}")

    def exp(self, h):
        key = self._key(h)
        if key not in self._exp:
            self._exp[key] = expm(h * self.blocks)
        return self._exp[key]

    def etd(self, h):
        """(F1, F2/h) with F1 = int_0^h e^{(h-s)M} ds, F2 = int_0^h s e^{(h-s)M} ds."""
        key = self._key(h)
        if key not in self._etd:
            n = self.n
            K = self.blocks.shape[0]
            X = np.zeros((K, 3 * n, 3 * n))
            X[:, :n, :n] = self.blocks
            X[:, :n, n:2 * n] = np.eye(n)
            X[:, n:2 * n, 2 * n:] = np.eye(n)
            big = expm(h * X)
            self._exp.setdefault(key, big[:, :n, :n].copy())
            self._etd[key] = (big[:, :n, n:2 * n].copy(), big[:, :n, 2 * n:] / h)
        return self._etd[key]

    def stacks(self, lengths, nonlinear=False):
        EH = np.stack([self.exp(H) for H in lengths])
        Eh = np.stack([self.exp(0.5 * H) for H in lengths])
        Eq = np.stack([self.exp(0.25 * H) for H in lengths])
        if not nonlinear:
            return EH, Eh, Eq
        F1H, G2H = map(np.stack, zip(*[self.etd(H) for H in lengths]))
        F1h, G2h = map(np.stack, zip(*[self.etd(0.5 * H) for H in lengths]))
        return EH, Eh, Eq, F1H, G2H, F1h, G2h

    def to_final(self, times):
        """Psi_j = exp((t_last - t_j) M) for every node, shape (J, K, n, n)."""
        t = np.asarray(times, float)
        J = len(t)
        K = self.blocks.shape[0]
        out = np.empty((J, K, self.n, self.n))
        out[-1] = np.eye(self.n)
        for j in range(J - 2, -1, -1):
            out[j] = out[j + 1] @ self.exp(t[j + 1] - t[j])
        return out


def linear_operator(dom, transform):
    return ModalOperator(dom.eigenvalues, transform.D_J, transform.A_J)


# --------------------------------------------------------------------------- signals

@dataclass
class ControlSignal:
    """Node values of a time-dependent coefficient array.

    For controls, ``values`` has shape (J, m, N+1) and holds the modal
    coefficients before localization; sources use shape (J, n, N+1).
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 3 or self.values.shape[0] != len(self.times):
            raise ShapeMismatch("signal values must have shape (len(times), rows, modes)")

    @classmethod
    def zeros(cls, times, rows, n_modes):
        return cls(times, np.zeros((len(times), rows, n_modes)))

    def energy(self, dom, weight=None):
        """Quadrature of |1_omega H|^2 over time (optionally times weight(t))."""
        w = simpson_weights(self.times)
        if weight is not None:
            w = w * weight
        per_node = np.einsum("jik,kl,jil->j", self.values, dom.W, self.values)
        return float(np.sum(w * per_node))

    def sample(self, t):
        """Values at arbitrary times by pairwise quadratic interpolation."""
        t = np.atleast_1d(np.asarray(t, float))
        times = self.times
        npairs = len(times) // 2
        p = np.clip(np.searchsorted(times[2::2], t, side="left"), 0, npairs - 1)
        t0, t2 = times[2 * p], times[2 * p + 2]
        s = (t - t0) / (t2 - t0)
        l0 = 2.0 * (s - 0.5) * (s - 1.0)
        l1 = -4.0 * s * (s - 1.0)
        l2 = 2.0 * s * (s - 0.5)
        v = self.values
        return (l0[:, None, None] * v[2 * p] + l1[:, None, None] * v[2 * p + 1]
                + l2[:, None, None] * v[2 * p + 2])


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self):
        return self.states[-1]

    @property
    def initial(self):
        return self.states[0]


def _resolve_grid(T, dt, signals):
    signals = [s for s in signals if s is not None]
    if signals:
        times = check_pair_grid(signals[0].times)
        for s in signals[1:]:
            if len(s.times) != len(times) or np.max(np.abs(s.times - times)) > 1e-12 * max(1.0, times[-1]):
                raise ShapeMismatch("control and source must share a time grid")
        if T is not None:
            if T > times[-1] * (1 + 1e-12):
                raise ShapeMismatch("horizon exceeds the signal grid")
            if T < times[-1] * (1 - 1e-12):
                idx = np.flatnonzero(np.isclose(times[::2], T, rtol=1e-12, atol=0))
                if not len(idx):
                    raise ShapeMismatch("horizon must coincide with a pair boundary of the signal grid")
                stop = 2 * idx[0] + 1
                times = times[:stop]
                signals = [ControlSignal(times, s.values[:stop]) for s in signals]
        factor = 1
        if dt is not None:
            H = np.max(times[2::2] - times[:-2:2])
            factor = max(1, int(math.ceil(H / dt - 1e-9)))
        return times, signals, factor
    if T is None or dt is None:
        raise ShapeMismatch("need T and dt when no signal fixes the grid")
    npairs = max(1, int(math.ceil(T / dt - 1e-9)))
    return pair_grid(0.0, T, npairs), [], 1


def _assemble_inputs(dom, n, times, control, source, factor):
    K = dom.n_modes
    g = np.zeros((len(times), n, K))
    if control is not None:
        m = control.values.shape[1]
        if control.values.shape[2] != K or m > n:
            raise ShapeMismatch("control shape does not match the domain")
        g[:, :m, :] += control.values @ dom.W
    if source is not None:
        if source.values.shape[1:] != (n, K):
            raise ShapeMismatch("source shape does not match the state")
        g += source.values
    if factor > 1:
        times, g = refine_pairs(times, g, factor)
    return times, g


def _check_state(z, n, K):
    z = np.asarray(z, float)
    if z.shape != (n, K):
        raise ShapeMismatch(f"state must have shape ({n}, {K}), got {z.shape}")
    return z


def run_linear(op, z0, times, g):
    kinds, lengths = pair_kinds(times)
    EH, Eh, Eq = op.stacks(lengths)
    states, status, _ = kernels.integrate_linear(np.ascontiguousarray(z0), kinds, lengths, EH, Eh, Eq,
                                                 np.ascontiguousarray(g))
    if not np.all(np.isfinite(states[-1])):
        raise NonfiniteState("linear integration overflowed")
    return Trajectory(times, states)


def simulate_linear(dom, transform, z0, control=None, source=None, T=None, dt=None, op=None):
    """Linear Z-system with optional localized control and additive source."""
    n = transform.n
    z0 = _check_state(z0, n, dom.n_modes)
    times, signals, factor = _resolve_grid(T, dt, [control, source])
    if control is not None:
        control = signals.pop(0)
    if source is not None:
        source = signals.pop(0)
    times, g = _assemble_inputs(dom, n, times, control, source, factor)
    op = op or linear_operator(dom, transform)
    return run_linear(op, z0, times, g)


def simulate_adjoint(dom, transform, phi_T, times=None, T=None, dt=None, op=None):
    """Backward flow of -phi' = (-lambda D_J^T + A_J^T) phi from phi(T) = phi_T, sampled at nodes."""
    phi_T = _check_state(phi_T, transform.n, dom.n_modes)
    if times is None:
        times, _, _ = _resolve_grid(T, dt, [])
    times = np.asarray(times, float)
    op = op or linear_operator(dom, transform)
    out = np.empty((len(times),) + phi_T.shape)
    out[-1] = phi_T
    for j in range(len(times) - 2, -1, -1):
        E = op.exp(times[j + 1] - times[j])
        out[j] = np.einsum("kji,jk->ik", E, out[j + 1])
    return Trajectory(times, out)


# --------------------------------------------------------------------------- nonlinear

def _stability_factor(H_max, jac_norm):
    return max(1, int(math.ceil(H_max * jac_norm / 0.5)))


def _run_nonlinear(dom, op, x0, times, g, pinv, ustar, v, a_lin, net, bound, jac_norm):
    kinds, lengths = pair_kinds(times)
    factor = _stability_factor(lengths.max(), jac_norm)
    if factor > 1:
        times, g = refine_pairs(times, g, factor)
        kinds, lengths = pair_kinds(times)
    mats = op.stacks(lengths, nonlinear=True)
    states, status, where = kernels.integrate_nonlinear(
        np.ascontiguousarray(x0), kinds, lengths, *mats, np.ascontiguousarray(g),
        dom.synth, dom.anal, np.ascontiguousarray(pinv), np.asarray(ustar, float), np.asarray(v, float),
        np.ascontiguousarray(a_lin), np.asarray(net.alpha, np.intp), np.asarray(net.beta, np.intp), float(bound))
    if status == kernels.BLOWUP:
        raise BlowupDetected(f"sup-norm exceeded {bound:g} at t = {times[where]:.6g}", t=float(times[where]))
    if status == kernels.NONFINITE:
        raise NonfiniteState(f"non-finite state at t = {times[where]:.6g}", t=float(times[where]))
    return times, states


def _reaction_jac_norm(net, u_values):
    """Largest Jacobian 2-norm of the reaction term over collocation values (n, Q)."""
    best = 0.0
    for q in range(u_values.shape[1]):
        best = max(best, np.linalg.norm(rate_jacobian(net, u_values[:, q]), 2))
    return best


def simulate_nonlinear(dom, net, u_star, u0, control=None, T=None, dt=None, bound=1e6, source=None):
    """Mass-action system in the original variables (exact diffusion, explicit reaction remainder)."""
    n, K = net.n, dom.n_modes
    u0 = _check_state(u0, n, K)
    u_star = np.asarray(u_star, float)
    times, signals, factor = _resolve_grid(T, dt, [control, source])
    if control is not None:
        control = signals.pop(0)
    if source is not None:
        source = signals.pop(0)
    times, g = _assemble_inputs(dom, n, times, control, source, factor)
    jac = rate_jacobian(net, u_star)
    op = ModalOperator(dom.eigenvalues, np.diag(net.d), jac)
    shift = stationary_coeffs(u_star, K, dom.L)
    jn = _reaction_jac_norm(net, dom.to_physical(u0))
    times, states = _run_nonlinear(dom, op, u0 - shift, times, g, np.eye(n), u_star, net.stoich, jac, net,
                                   bound, jn)
    return Trajectory(times, states + shift)


def simulate_nonlinear_z(dom, transform, net, z0, control=None, T=None, dt=None, bound=1e6, source=None):
    """Cascade form dZ/dt - D_J Lap Z = G(Z) + localized control."""
    n, K = net.n, dom.n_modes
    z0 = _check_state(z0, n, K)
    times, signals, factor = _resolve_grid(T, dt, [control, source])
    if control is not None:
        control = signals.pop(0)
    if source is not None:
        source = signals.pop(0)
    times, g = _assemble_inputs(dom, n, times, control, source, factor)
    op = linear_operator(dom, transform)
    u_vals = transform.P_inv @ dom.to_physical(z0) + transform.u_star[:, None]
    jn = _reaction_jac_norm(net, u_vals)
    times, states = _run_nonlinear(dom, op, z0, times, g, transform.P_inv, transform.u_star,
                                   nonlinear_weights(net), transform.A_J, net, bound, jn)
    return Trajectory(times, states)
