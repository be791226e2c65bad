"""Time weights rho_0, rho_S and null control of the linear cascade with a decaying source.

The horizon is cut at T_k = T (1 - q^-k). On each interval the state reached at
T_k is steered to zero by the dyadic low-mode driver while the source acts on
top of it, so what arrives at T_{k+1} is (up to the driver's residual) the
response to the source alone. The weights decay like exp(-c / (T - t)) and
underflow long before T; they are evaluated as logarithms throughout.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import logsumexp

from .errors import (ConfigInvalid, MassConditionViolated, NoDecayDetected, RankDeficient, ScheduleExhausted,
                     WeightedSourceUnbounded, ZeroDenominator)
from .lebeau_robbiano import check_invariant_subspace, lr_drive, stage_layout, uncontrollable_mask
from .spectral import (ControlSignal, Trajectory, l2_norm, linear_operator, node_norms, pair_grid,
                       run_linear, simpson_weights, simulate_adjoint)

LOG10 = math.log(10.0)


@dataclass(frozen=True)
class WeightFamily:
    M: float
    T: float
    q: float = 1.2
    p: float = 4.0

    def __post_init__(self):
        if not self.M > 0:
            raise ConfigInvalid("M", "weight constant must be positive")
        if not self.T > 0:
            raise ConfigInvalid("T", "horizon must be positive")
        if not 1.0 < self.q < math.sqrt(2.0):
            raise ConfigInvalid("q", "q must lie in (1, sqrt 2)")
        if not 2.0 * self.p > (1.0 + self.p) * self.q ** 2:
            raise ConfigInvalid("p", "p too small for q: need 2p > (1+p) q^2")

    def _gap(self, t):
        t = np.asarray(t, float)
        return np.where(t < self.T, self.T - t, np.nan)

    def log_rho0(self, t):
        """log rho_0; -inf at and beyond T."""
        gap = self._gap(t)
        out = -self.p * math.log(self.M) - self.M * self.p / ((self.q - 1.0) * gap)
        return np.where(np.isnan(gap), -np.inf, out)

    def log_rhoS(self, t):
        gap = self._gap(t)
        out = (-(1.0 + self.p) * math.log(self.M)
               - (1.0 + self.p) * self.q ** 2 * self.M / ((self.q - 1.0) * gap))
        return np.where(np.isnan(gap), -np.inf, out)

    def rho0(self, t):
        return np.exp(self.log_rho0(t))

    def rhoS(self, t):
        return np.exp(self.log_rhoS(t))

    def schedule(self, k):
        return self.T * (1.0 - self.q ** (-np.asarray(k, float)))


def weight_eval(w, t, which):
    if which == "rho0":
        return w.rho0(t)
    if which == "rhoS":
        return w.rhoS(t)
    raise ValueError(f"unknown weight {which!r}")


def log_weighted_sup(norms, log_weight):
    """log of max_t norms(t) / weight(t) over nodes with a positive weight.

    Norms below the smallest normal double count as zero and are skipped: a
    subnormal carries no relative precision, so its ratio to the weight means nothing.
    """
    norms = np.asarray(norms, float)
    ok = np.isfinite(log_weight) & (norms >= np.finfo(float).tiny)
    if not np.any(ok):
        return -np.inf
    return float(np.max(np.log(norms[ok]) - log_weight[ok]))


@dataclass
class SourceTermResult:
    control: ControlSignal
    trajectory: Trajectory
    report: dict
    plan: dict = field(default_factory=dict)


def _source_samples(source, times, n, K):
    if source is None:
        return np.zeros((len(times), n, K))
    if isinstance(source, ControlSignal):
        # nodes of this interval taken verbatim when they appear in the signal's grid
        idx = np.clip(np.searchsorted(source.times, times - 1e-13 * times[-1]), 0, len(source.times) - 1)
        if np.allclose(source.times[idx], times, rtol=0, atol=1e-13 * times[-1]):
            return np.array(source.values[idx], float)
        return source.sample(times)
    return np.array([source(t) for t in times], float)


def _intervals(T, q, dt_min):
    """Schedule boundaries T_0 = 0 < T_1 < ... < T; the last interval absorbs the truncated tail."""
    bounds = [0.0]
    k = 1
    while True:
        nxt = T * (1.0 - q ** (-k))
        if T - nxt < dt_min or nxt - bounds[-1] < dt_min:
            break
        bounds.append(nxt)
        k += 1
    bounds.append(T)
    return bounds


def _probe_state(n, m, K, seed=0):
    z = np.random.default_rng(seed).standard_normal((n, K))
    z[uncontrollable_mask(n, m, K)] = 0.0
    return z / l2_norm(z)


def plan_schedule(weights, dom, transform, probe_tol=1e-9, dt_min_rel=1e-4, passive_pairs=12, op=None):
    """Driver structure for every schedule interval, decided on a fixed probe state.

    An interval is steered only if the dyadic driver brings the probe below
    ``probe_tol`` there; from the first interval where it cannot (they only get
    shorter) the rest of the horizon is left uncontrolled. The plan does not
    depend on the data, so runs sharing it share their time grid.
    """
    op = op or linear_operator(dom, transform)
    n, m, K = transform.n, transform.m, dom.n_modes
    bounds = _intervals(weights.T, weights.q, dt_min_rel * weights.T)
    probe = _probe_state(n, m, K)
    entries = []
    steerable = True
    for a, b in zip(bounds[:-1], bounds[1:]):
        entry = None
        if steerable:
            try:
                res = lr_drive(probe, b - a, dom, transform, op=op, passive_pairs=passive_pairs, full=True)
                if res.report["final_norm"] <= probe_tol:
                    entry = {"M": res.report["M_used"], "layout": stage_layout(res.report)}
            except (NoDecayDetected, RankDeficient):
                pass
            steerable = entry is not None
        entries.append(entry)
    return {"bounds": bounds, "entries": entries, "passive_pairs": passive_pairs}


def sourceterm_control(z0, source, weights, dom, transform, tol=1e-6, plan=None, source_bound=1e12, op=None):
    """Steer z0 to zero under an additive source S with ||S / rho_S|| finite.

    ``source`` is None, a callable t -> (n, N+1) array or a ControlSignal on the
    run's grid. ``plan`` (see plan_schedule) fixes which intervals are steered
    and how; passing the plan of a previous run reproduces its time grid.
    """
    n, m, K = transform.n, transform.m, dom.n_modes
    op = op or linear_operator(dom, transform)
    z0 = np.asarray(z0, float)
    check_invariant_subspace(z0, m)
    plan = plan or plan_schedule(weights, dom, transform, op=op)
    bounds, entries, passive_pairs = plan["bounds"], plan["entries"], plan["passive_pairs"]
    frozen = uncontrollable_mask(n, m, K)

    state = z0.copy()
    t_parts, u_parts, z_parts, s_parts = [], [], [], []
    per_interval = []
    steered_until = 0.0
    for k, entry in enumerate(entries):
        a, b = bounds[k], bounds[k + 1]
        if entry is not None:
            res = lr_drive(state, b - a, dom, transform, op=op, t0=a, passive_pairs=passive_pairs,
                           M_fixed=entry["M"], layout=entry["layout"])
            control, cost = res.control, res.report["control_l2"]
            steered_until = b
        else:
            control, cost = ControlSignal.zeros(pair_grid(a, b, passive_pairs), m, K), 0.0
        times = control.times
        S = _source_samples(source, times, n, K)
        if np.any(S[:, frozen] != 0.0):
            raise MassConditionViolated("source has nonzero mean in an uncontrolled cascade species")
        g = S.copy()
        g[:, :m] += control.values @ dom.W
        traj = run_linear(op, state, times, g)
        pre = l2_norm(state)
        state = traj.final
        src_norm = node_norms(S)
        per_interval.append({"k": k, "start": a, "len": b - a, "steered": entry is not None, "pre_norm": pre,
                             "post_norm": l2_norm(state), "control_norm": cost,
                             "log10_source_over_rhoS": log_weighted_sup(src_norm, weights.log_rhoS(times)) / LOG10})
        sl = slice(0 if k == 0 else 1, None)
        t_parts.append(times[sl])
        u_parts.append(control.values[sl])
        z_parts.append(traj.states[sl])
        s_parts.append(src_norm[sl])

    times = np.concatenate(t_parts)
    values = np.concatenate(u_parts)
    states = np.concatenate(z_parts)
    src_norm = np.concatenate(s_parts)

    # past the last steered interval the weights fall below anything a double can track
    span = times <= steered_until
    log_src = log_weighted_sup(src_norm[span], weights.log_rhoS(times[span]))
    if log_src > math.log(source_bound):
        raise WeightedSourceUnbounded("source is not dominated by rho_S on the grid",
                                      log10_ratio=log_src / LOG10)
    z_norm = node_norms(states)
    h_norm = np.sqrt(np.maximum(np.einsum("jik,kl,jil->j", values, dom.W, values), 0.0))
    log_rho0 = weights.log_rho0(times)
    log_z = log_weighted_sup(z_norm[span], log_rho0[span])
    log_h = log_weighted_sup(h_norm, log_rho0)
    src_scale = _safe_exp(log_src) if np.isfinite(log_src) else 0.0
    scale = l2_norm(z0) + src_scale
    final = l2_norm(states[-1])
    report = {
        "intervals": [float(x) for x in bounds],
        "per_interval": per_interval,
        "final_norm": final,
        "scale": scale,
        "source_over_rhoS": src_scale,
        "steered_until": steered_until,
        "tail_sup_norm": float(np.max(z_norm[~span])) if np.any(~span) else 0.0,
        "tail_source_sup_norm": float(np.max(src_norm[~span])) if np.any(~span) else 0.0,
        "certificates": {
            "log10_sup_Z_over_rho0": log_z / LOG10,
            "log10_sup_H_over_rho0": log_h / LOG10,
            "sup_Z_over_rho0": _safe_exp(log_z),
            "sup_H_over_rho0": _safe_exp(log_h),
        },
    }
    result = SourceTermResult(ControlSignal(times, values), Trajectory(times, states), report, plan)
    if final > tol * scale:
        err = ScheduleExhausted(f"final norm {final:.3e} above {tol:.1e} x scale {scale:.3e}",
                                final_norm=final, scale=scale)
        err.result = result
        raise err
    return result


def _safe_exp(x):
    if x > 700:
        return math.inf
    return math.exp(x)


def strong_observability_ratio(samples, weights, dom, transform, npairs=400, op=None):
    """Max over adjoint terminal data of (|phi(0)|^2 + int |rho_S phi|^2) / sum_i<m int int_omega |rho_0 phi_i|^2.

    Returns (max ratio, per-sample ratios); ratios are formed from logarithms so
    that underflowing weights do not lose the quotient.
    """
    op = op or linear_operator(dom, transform)
    times = pair_grid(0.0, weights.T, npairs)
    w = simpson_weights(times)
    log_rho0 = weights.log_rho0(times)
    log_rhoS = weights.log_rhoS(times)
    m = transform.m
    ratios = []
    for phi_T in samples:
        phi = simulate_adjoint(dom, transform, phi_T, times=times, op=op).states
        full = np.sum(phi ** 2, axis=(1, 2))
        obs = np.einsum("jik,kl,jil->j", phi[:, :m], dom.W, phi[:, :m])
        keep = w > 0
        terms = [math.log(full[0])] if full[0] > 0 else []
        pos = keep & (full > 0) & np.isfinite(log_rhoS)
        if np.any(pos):
            terms.append(logsumexp(2 * log_rhoS[pos] + np.log(w[pos] * full[pos])))
        pos = keep & (obs > 0) & np.isfinite(log_rho0)
        if not np.any(pos):
            raise ZeroDenominator("adjoint vanishes on the control region")
        log_den = logsumexp(2 * log_rho0[pos] + np.log(w[pos] * obs[pos]))
        if not terms:
            ratios.append(0.0)
            continue
        ratios.append(math.exp(logsumexp(terms) - log_den))
    return max(ratios), ratios
