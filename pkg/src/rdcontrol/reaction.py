"""Mass-action reaction networks, constant stationary states and conserved mass differences."""
from dataclasses import dataclass
import itertools

import numpy as np

from .errors import ConfigInvalid


@dataclass(frozen=True)
class ReactionNetwork:
    """Single reversible reaction sum(alpha_i X_i) <-> sum(beta_i X_i) with Fick diffusion.

    Species are ordered so that the controlled ones come first (indices 0..m-1).
    Distinctness of the uncontrolled diffusivities is not enforced here; it is
    reported by :func:`check_assumptions` and required by the change of variables.
    """

    n: int
    m: int
    alpha: tuple
    beta: tuple
    d: tuple

    def __post_init__(self):
        alpha = tuple(int(a) for a in self.alpha)
        beta = tuple(int(b) for b in self.beta)
        d = tuple(float(x) for x in self.d)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "d", d)
        if not (1 <= self.m < self.n):
            raise ConfigInvalid("m", f"need 1 <= m < n, got m={self.m}, n={self.n}")
        for name, seq in (("alpha", alpha), ("beta", beta), ("d", d)):
            if len(seq) != self.n:
                raise ConfigInvalid(name, f"expected {self.n} entries, got {len(seq)}")
        if any(a < 0 for a in alpha) or any(b < 0 for b in beta):
            raise ConfigInvalid("alpha", "stoichiometric exponents must be nonnegative")
        if any(a == b for a, b in zip(alpha, beta)):
            raise ConfigInvalid("beta", "alpha_i and beta_i must differ for every species")
        if any(not np.isfinite(x) or x <= 0 for x in d):
            raise ConfigInvalid("d", "diffusivities must be positive")

    @property
    def stoich(self):
        """beta - alpha as a float array."""
        return np.asarray(self.beta, float) - np.asarray(self.alpha, float)

    @property
    def gamma(self):
        """Maximal total degree of the two monomials."""
        return max(sum(self.alpha), sum(self.beta))

    def permuted(self, order):
        order = list(order)
        return ReactionNetwork(self.n, self.m, [self.alpha[i] for i in order],
                               [self.beta[i] for i in order], [self.d[i] for i in order])


def _monomial(u, exps):
    out = np.ones(u.shape[1:])
    for k, e in enumerate(exps):
        if e:
            out = out * u[k] ** e
    return out


def common_rate(net, u):
    """R(u) = prod u^alpha - prod u^beta; u has shape (n, ...)."""
    u = np.asarray(u, float)
    return _monomial(u, net.alpha) - _monomial(u, net.beta)


def reaction_rate(net, u):
    """f_i(u) = (beta_i - alpha_i) R(u), vectorized over trailing axes."""
    u = np.asarray(u, float)
    r = common_rate(net, u)
    return net.stoich.reshape((-1,) + (1,) * r.ndim) * r


def _monomial_gradient(u, exps):
    n = len(exps)
    grad = np.zeros(n)
    for j, e in enumerate(exps):
        if e == 0:
            continue
        val = e * u[j] ** (e - 1)
        for k, ek in enumerate(exps):
            if k != j and ek:
                val *= u[k] ** ek
        grad[j] = val
    return grad


def rate_gradient(net, u):
    """Gradient of the common factor R at a single point u."""
    u = np.asarray(u, float)
    return _monomial_gradient(u, net.alpha) - _monomial_gradient(u, net.beta)


def rate_jacobian(net, u):
    """Analytic Jacobian of f at u (exponent 0 contributes nothing, even at u_j = 0)."""
    return np.outer(net.stoich, rate_gradient(net, u))


def is_stationary(net, u_star, tol=1e-12):
    u = np.asarray(u_star, float)
    return bool(np.all(u >= 0) and abs(common_rate(net, u)) <= tol)


def find_constant_stationary_states(net, box, grid_density, tol=1e-12, dedup=1e-8, max_iter=60):
    """Grid-seeded damped Newton on R(u) = 0 inside a nonnegative box.

    ``box`` is a sequence of (lo, hi) pairs, one per species. Returns a list of
    arrays sorted lexicographically.
    """
    box = np.asarray(box, float)
    if box.shape != (net.n, 2) or np.any(box[:, 0] < 0) or np.any(box[:, 1] < box[:, 0]):
        raise ConfigInvalid("box", "need n nonnegative (lo, hi) intervals")
    axes = [np.linspace(lo, hi, grid_density) if grid_density > 1 else np.array([lo]) for lo, hi in box]
    found = []
    for seed in itertools.product(*axes):
        u = np.array(seed)
        for _ in range(max_iter):
            r = common_rate(net, u)
            if abs(r) <= tol:
                break
            g = rate_gradient(net, u)
            gg = g @ g
            if gg == 0.0:
                break
            step = r / gg * g
            # damping: halve until the residual decreases
            theta = 1.0
            while theta > 1e-6:
                trial = np.clip(u - theta * step, box[:, 0], box[:, 1])
                if abs(common_rate(net, trial)) < abs(r):
                    break
                theta *= 0.5
            u = trial
        if abs(common_rate(net, u)) <= tol:
            if not any(np.max(np.abs(u - v)) <= dedup for v in found):
                found.append(u)
    found.sort(key=tuple)
    return found


def check_assumptions(net, u_star, dist_tol=1e-8, witness_tol=1e-12):
    """Distinct uncontrolled diffusivities, and a controlled species driving species m+1.

    Returns a dict with ``distinct_diffusion``, ``has_witness`` and the 1-based
    ``witness_j`` (largest |d f_{m+1} / d u_j| over j <= m; ties go to the larger j).
    """
    m = net.m
    d_low = np.asarray(net.d[m:])
    scale = max(net.d)
    distinct = all(abs(d_low[i] - d_low[j]) >= dist_tol * scale
                      for i in range(len(d_low)) for j in range(i + 1, len(d_low)))
    row = rate_jacobian(net, u_star)[m, :m]
    mags = np.abs(row)
    witness = None
    if mags.max() > witness_tol:
        witness = int(max(range(m), key=lambda j: (mags[j], j))) + 1
    return {"distinct_diffusion": bool(distinct), "has_witness": witness is not None, "witness_j": witness}


def witness_order(net, u_star):
    """Species order placing the assumption-2 witness in the last controlled slot."""
    rep = check_assumptions(net, u_star)
    order = list(range(net.n))
    j = rep["witness_j"]
    if j is not None and j != net.m:
        order[j - 1], order[net.m - 1] = order[net.m - 1], order[j - 1]
    return order


def species_integrals(coeffs, L):
    """Integral of each species over (0, L) from its mode-0 coefficient."""
    return np.sqrt(L) * np.asarray(coeffs)[:, 0]


def invariant_functionals(net, u_star, coeffs, L):
    """Mass differences for species m+2..n relative to species m+1 (length n-m-1)."""
    v = (species_integrals(coeffs, L) - L * np.asarray(u_star, float)) / net.stoich
    return v[net.m + 1:] - v[net.m]
