"""Explicit null control of one Galerkin mode, y' = A y + B h with A = -lam D_J + A_J.

The state is built backwards along the cascade from a smooth cutoff of the free
solution, and the control is whatever makes the ODE hold. Every time derivative
is evaluated exactly through Taylor-jet arithmetic and the Leibniz rule.
"""
from dataclasses import dataclass
from math import comb, factorial

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm

from .errors import AssumptionViolation, LambdaZeroUnsupported, OrderTooHigh
from .spectral import pair_grid, simpson_weights

_X_LOW, _X_HIGH = 0.0015, 0.9985


def _jet_reciprocal(a):
    """Taylor coefficients of 1/a given those of a (first axis = order)."""
    b = np.zeros_like(a)
    b[0] = 1.0 / a[0]
    for k in range(1, len(a)):
        b[k] = -np.sum(a[1:k + 1] * b[k - 1::-1][:k], axis=0) / a[0]
    return b


def _jet_exp(s):
    e = np.zeros_like(s)
    e[0] = np.exp(s[0])
    for k in range(1, len(s)):
        j = np.arange(1, k + 1).reshape((-1,) + (1,) * (s.ndim - 1))
        e[k] = np.sum(j * s[1:k + 1] * e[k - 1::-1][:k], axis=0) / k
    return e


def smooth_step_jet(x, order):
    """Derivatives d^p/dx^p of the C-infinity step falling from 1 (x <= 0) to 0 (x >= 1), p = 0..order.

    Phi(x) = 1 / (1 + exp(1/(1-x) - 1/x)) on (0, 1). Returns an array (order+1, len(x)).
    """
    x = np.atleast_1d(np.asarray(x, float))
    out = np.zeros((order + 1, x.size))
    out[0] = np.where(x <= _X_LOW, 1.0, 0.0)
    mid = (x > _X_LOW) & (x < _X_HIGH)
    if np.any(mid):
        xm = x[mid]
        var = np.zeros((order + 1, xm.size))
        var[0] = xm
        if order >= 1:
            var[1] = 1.0
        one_minus = -var
        one_minus[0] += 1.0
        s = _jet_reciprocal(one_minus) - _jet_reciprocal(var)
        denom = _jet_exp(s)
        denom[0] += 1.0
        taylor = _jet_reciprocal(denom)
        fact = np.array([factorial(p) for p in range(order + 1)], float)
        out[:, mid] = taylor * fact[:, None]
    return out


@dataclass(frozen=True)
class SmoothCutoff:
    """eta = 1 on [0, tau/3], 0 on [2 tau/3, tau], smooth in between."""
    tau: float
    order_max: int

    def jet(self, t, order=None):
        """eta and its derivatives up to ``order`` at t: array (order+1, len(t))."""
        order = self.order_max if order is None else order
        if order > self.order_max:
            raise OrderTooHigh(f"derivative order {order} exceeds {self.order_max}", order=order)
        third = self.tau / 3.0
        t = np.atleast_1d(np.asarray(t, float))
        raw = smooth_step_jet((t - third) / third, order)
        return raw / third ** np.arange(order + 1)[:, None]

    def __call__(self, t, p=0):
        return self.jet(t, p)[p]

    def derivative_constants(self, samples=4001):
        """max_t |eta^(p)| tau^p for p = 0..order_max, measured on a dense grid."""
        t = np.linspace(0.0, self.tau, samples)
        jet = self.jet(t)
        return np.max(np.abs(jet), axis=1) * self.tau ** np.arange(self.order_max + 1)


def cutoff_eval(cutoff, t, p):
    return cutoff(t, p)


@dataclass(frozen=True)
class ModeSystem:
    A: np.ndarray
    B: np.ndarray
    lam: float
    tau: float
    m: int

    @classmethod
    def from_cascade(cls, D_J, A_J, lam, tau, m):
        D_J = np.asarray(D_J, float)
        n = D_J.shape[0]
        if lam < 0:
            raise ValueError("eigenvalue must be nonnegative")
        if not 0 < tau:
            raise ValueError("horizon must be positive")
        B = np.zeros((n, m))
        B[:m, :m] = np.eye(m)
        return cls(-lam * D_J + np.asarray(A_J, float), B, float(lam), float(tau), int(m))

    @property
    def n(self):
        return self.A.shape[0]


def free_solution_derivatives(system, y0, t, order):
    """A^l e^{tA} y0 for l = 0..order at every t: array (order+1, n, len(t))."""
    t = np.atleast_1d(np.asarray(t, float))
    base = np.stack([expm(ti * system.A) @ y0 for ti in t], axis=1)
    out = [base]
    for _ in range(order):
        out.append(system.A @ out[-1])
    return np.array(out)


def _top_row(system, y0, tol):
    """Last row of the chain: n-1 in general, m when lam = 0 (the cascade rows are then frozen)."""
    m, n = system.m, system.n
    if system.lam == 0.0:
        if np.any(np.abs(y0[m + 1:]) > tol * max(np.max(np.abs(y0)), 1e-300)):
            raise LambdaZeroUnsupported("zero mode data must vanish beyond the first m+1 species",
                                        values=y0[m + 1:].tolist())
        return m
    return n - 1


def construction_jets(system, y0, t, coupling_tol=1e-12):
    """State jets Y (2, n, len(t)) holding y and y' at t, built by the backward cascade."""
    A, m, n = system.A, system.m, system.n
    y0 = np.asarray(y0, float)
    if abs(A[m, m - 1]) <= coupling_tol * max(1.0, np.max(np.abs(A))):
        raise AssumptionViolation("controlled block does not drive the first uncontrolled species",
                                  a=float(A[m, m - 1]))
    top = _top_row(system, y0, 1e-14)
    order = top - m + 2
    cut = SmoothCutoff(system.tau, order).jet(t)
    free = free_solution_derivatives(system, y0, t, order)
    # jets of eta * free solution by Leibniz
    damped = np.zeros_like(free)
    for l in range(order + 1):
        for j in range(l + 1):
            damped[l] += comb(l, j) * cut[j][None, :] * free[l - j]
    jets = {i: damped[:, i] for i in list(range(m - 1)) + [top]}
    for i in range(top + 1, n):
        jets[i] = np.zeros_like(damped[:, i])
    # row r of the ODE solved for y_{r-1}
    for r in range(top, m - 1, -1):
        have = jets[r].shape[0] - 1
        rhs = jets[r][1:have + 1].copy()
        for s in range(n):
            if s != r - 1 and A[r, s] != 0.0:
                if s not in jets:
                    raise AssumptionViolation("coupling row is not lower-triangular", row=r, column=s)
                rhs -= A[r, s] * jets[s][:have]
        jets[r - 1] = rhs / A[r, r - 1]
    Y = np.zeros((2, n, len(np.atleast_1d(t))))
    for i in range(n):
        Y[:, i] = jets[i][:2]
    return Y


@dataclass
class BrunovskyResult:
    times: np.ndarray
    y: np.ndarray        # (J, n)
    h: np.ndarray        # (J, m)
    residual: np.ndarray  # ODE residual in the uncontrolled rows, (J, n - m)
    system: ModeSystem

    def control_energy(self):
        return float(simpson_weights(self.times) @ np.sum(self.h ** 2, axis=1))


def control_at(system, y0, t):
    """Control values at arbitrary times: array (len(t), m)."""
    Y = construction_jets(system, y0, t)
    full = Y[1] - system.A @ Y[0]
    return full[:system.m].T


def brunovsky_control(system, y0, npairs=1000):
    """State and control on a uniform grid of 2 npairs + 1 points over [0, tau]."""
    times = pair_grid(0.0, system.tau, npairs)
    Y = construction_jets(system, y0, times)
    full = Y[1] - system.A @ Y[0]
    m = system.m
    return BrunovskyResult(times, Y[0].T, full[:m].T.copy(), full[m:].T.copy(), system)


def terminal_state_oracle(system, y0, h_func=None, epsabs=1e-14):
    """y(tau) from the variation-of-constants formula with adaptive quadrature."""
    h_func = h_func or (lambda s: control_at(system, y0, [s])[0])
    tau = system.tau

    def integrand(s):
        return expm((tau - s) * system.A) @ (system.B @ h_func(s))

    third = tau / 3.0
    forced, _ = quad_vec(integrand, third, 2 * third, epsabs=epsabs, epsrel=1e-13, limit=2000)
    # the control vanishes identically on [0, tau/3] and [2 tau/3, tau]
    return expm(tau * system.A) @ np.asarray(y0, float) + forced


def cost_exponent_fit(D_J, A_J, m, y0, taus, lams, lam_fixed=None, tau_fixed=1.0, npairs=2000):
    """Slopes of log ||h||^2 against log(1/tau) (lam fixed) and log(lam) (tau fixed)."""
    taus = np.asarray(taus, float)
    lams = np.asarray(lams, float)
    lam_fixed = float(lams[0] if lam_fixed is None else lam_fixed)
    e_tau = [brunovsky_control(ModeSystem.from_cascade(D_J, A_J, lam_fixed, t, m), y0, npairs).control_energy()
             for t in taus]
    e_lam = [brunovsky_control(ModeSystem.from_cascade(D_J, A_J, l, tau_fixed, m), y0, npairs).control_energy()
             for l in lams]
    p1 = np.polyfit(np.log(1.0 / taus), np.log(e_tau), 1)[0]
    p2 = np.polyfit(np.log(lams), np.log(e_lam), 1)[0]
    n = np.asarray(D_J).shape[0]
    return {"p1": float(p1), "p2": float(p2), "bound": 2.0 * (n - m + 0.5),
            "energy_tau": list(map(float, e_tau)), "energy_lam": list(map(float, e_lam))}
