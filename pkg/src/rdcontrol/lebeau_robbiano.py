"""Localized null controls for the linear cascade: low-mode minimal-energy steering and the
active/passive dyadic time splitting.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import MassConditionViolated, NoDecayDetected, RankDeficient
from .spectral import (ControlSignal, Trajectory, l2_norm, linear_operator, pair_grid, run_linear,
                       simpson_weights)


def uncontrollable_mask(n, m, n_modes):
    """True for coordinates frozen by the dynamics: mode 0 of species m+2..n."""
    mask = np.zeros((n, n_modes), dtype=bool)
    mask[m + 1:, 0] = True
    return mask


def check_invariant_subspace(z0, m, tol=1e-12):
    """Raise if mode 0 of an uncontrolled cascade species is nonzero."""
    z0 = np.asarray(z0)
    frozen = z0[m + 1:, 0]
    scale = max(l2_norm(z0), 1e-300)
    if np.any(np.abs(frozen) > tol * scale):
        raise MassConditionViolated(
            "initial state has nonzero mean in an uncontrolled cascade species",
            frozen_means=frozen.tolist())


@dataclass
class LowFreqResult:
    control: ControlSignal
    cost: float
    rank: int
    target_dim: int
    cond: float


def taper_profile(times, tau):
    """sin^2 window vanishing at both ends of [0, tau]."""
    return np.sin(np.pi * np.asarray(times) / tau) ** 2


def lowfreq_control(z0, tau, lambda_cut, dom, transform, npairs=16, op=None, rcond=1e-12, taper=True, refine=2):
    """Localized control on [0, tau] zeroing every mode with eigenvalue <= lambda_cut.

    The control is theta(t) B^T phi(t), phi being the adjoint flow from the
    multiplier that solves the (pseudo-inverted) Gramian system. With
    ``taper=False`` theta = 1 and this is the minimal L2 energy control; the
    default sin^2 taper minimizes the energy weighted by 1/theta and makes the
    control vanish at both ends, so stages can be concatenated continuously.
    """
    op = op or linear_operator(dom, transform)
    n, m, K = transform.n, transform.m, dom.n_modes
    z0 = np.asarray(z0, float)
    times = pair_grid(0.0, tau, npairs)
    active = np.flatnonzero(dom.eigenvalues <= lambda_cut)
    ka = len(active)
    if ka == 0:
        return LowFreqResult(ControlSignal.zeros(times, m, K), 0.0, 0, 0, 1.0)
    theta = taper_profile(times, tau) if taper else np.ones(len(times))
    w = simpson_weights(times) * theta
    psi = op.to_final(times)[:, active]                     # (J, ka, n, n)
    drive = psi[:, :, :, :m] * np.sqrt(w)[:, None, None, None]
    flat = drive.transpose(1, 2, 0, 3).reshape(ka * n, -1)
    gram = (flat @ flat.T).reshape(ka, n, ka, n) * dom.W[np.ix_(active, active)][:, None, :, None]
    target = ~uncontrollable_mask(n, m, K)[:, active].T     # (ka, n)
    idx = np.flatnonzero(target.ravel())
    G = gram.reshape(ka * n, ka * n)[np.ix_(idx, idx)]
    G = 0.5 * (G + G.T)
    free_final = np.einsum("kab,bk->ka", psi[0], z0[:, active])
    rhs = -free_final.ravel()[idx]
    # symmetric diagonal scaling removes the lambda-dependent units of the cascade rows
    diag = np.diag(G)
    if np.any(diag <= 0):
        raise RankDeficient("a target coordinate receives no control energy", target_dim=int(len(idx)))
    scale = 1.0 / np.sqrt(diag)
    evals, evecs = np.linalg.eigh(G * scale[:, None] * scale[None, :])
    smax = evals[-1]
    keep = evals > rcond * smax
    rank = int(keep.sum())
    if rank < len(idx):
        raise RankDeficient(
            f"low-mode Gramian has numerical rank {rank} < {len(idx)}",
            rank=rank, target_dim=int(len(idx)), lambda_cut=float(lambda_cut), tau=float(tau))

    def control_values(r):
        mu = scale * (evecs @ ((evecs.T @ (scale * r)) / evals))
        mult = np.zeros(ka * n)
        mult[idx] = mu
        vals = np.zeros((len(times), m, K))
        vals[:, :, active] = theta[:, None, None] * np.einsum("jkai,ka->jik", psi[:, :, :, :m], mult.reshape(ka, n))
        return vals

    values = control_values(rhs)
    # iterative refinement against the discrete flow recovers the digits lost to conditioning
    g = np.zeros((len(times), n, K))
    for _ in range(refine):
        g[:, :m] = values @ dom.W
        final = run_linear(op, z0, times, g).final
        values = values + control_values(-final[:, active].T.ravel()[idx])
    control = ControlSignal(times, values)
    return LowFreqResult(control, control.energy(dom), rank, len(idx), float(smax / max(evals[0], 1e-300)))


@dataclass
class LRSchedule:
    T: float
    M: float
    intervals: list = field(default_factory=list)   # (a_k, T_k)
    mu: list = field(default_factory=list)

    @classmethod
    def build(cls, T, M, n_stages):
        sched = cls(T, M)
        a = 0.0
        for k in range(n_stages):
            Tk = T / 2 ** (k + 2)
            sched.intervals.append((a, Tk))
            sched.mu.append(M * 4.0 ** k)
            a += 2 * Tk
        return sched


@dataclass
class DriveResult:
    control: ControlSignal
    trajectory: Trajectory
    report: dict


def _concat(parts):
    times = np.concatenate([parts[0][0]] + [p[0][1:] for p in parts[1:]])
    values = np.concatenate([parts[0][1]] + [p[1][1:] for p in parts[1:]])
    return times, values


def _stage_pairs(lambda_cut, tau, dmax, base):
    """Pairs per active interval so that the fastest steered mode is resolved in time."""
    return int(max(base, math.ceil(min(lambda_cut, 1e12) * dmax * tau / 2.0)))


def _feasible_steer(state, Tk, cut, dom, transform, npairs, op):
    """Steer the modes up to ``cut``; if that Gramian is numerically singular, lower the cut level by level."""
    levels = dom.eigenvalues[dom.eigenvalues <= cut][::-1]
    for level in levels:
        try:
            return lowfreq_control(state, Tk, level, dom, transform, npairs=npairs, op=op), float(level)
        except RankDeficient:
            continue
    raise RankDeficient("no steerable low-mode block on this interval", tau=float(Tk))


def _drive_once(z0, T, dom, transform, M, op, tol, base_pairs, passive_pairs, max_pairs, t0, max_stages,
                full=False, layout=None, full_repeats=3):
    n, m, K = transform.n, transform.m, dom.n_modes
    lam_N = dom.eigenvalues[-1]
    dmax = float(np.max(np.diag(transform.D_J)))
    state = np.asarray(z0, float).copy()
    norm0 = l2_norm(state)
    stages = []
    parts = []
    traj_parts = []
    a = 0.0
    k = 0
    n_all = 0
    done = norm0 == 0.0 and not full and layout is None
    while not done:
        Tk = T / 2 ** (k + 2)
        mu = M * 4.0 ** k
        cut = lam_N if mu > lam_N else mu
        pre = l2_norm(state)
        if layout is not None:
            used, npairs = layout[k]
            low = lowfreq_control(state, Tk, used, dom, transform, npairs=npairs, op=op)
        else:
            npairs = min(max_pairs, _stage_pairs(cut, Tk, dmax, base_pairs))
            low, used = _feasible_steer(state, Tk, cut, dom, transform, npairs, op)
        t_act = low.control.times
        g = np.zeros((len(t_act), n, K))
        g[:, :m] = low.control.values @ dom.W
        tr_a = run_linear(op, state, t_act, g)
        t_pas = pair_grid(0.0, Tk, passive_pairs)
        tr_p = run_linear(op, tr_a.final, t_pas, np.zeros((len(t_pas), n, K)))
        parts.append((t0 + a + t_act, low.control.values))
        parts.append((t0 + a + Tk + t_pas, np.zeros((len(t_pas), m, K))))
        traj_parts.append((t0 + a + t_act, tr_a.states))
        traj_parts.append((t0 + a + Tk + t_pas, tr_p.states))
        state = tr_p.final
        post = l2_norm(state)
        steered_all = used >= lam_N
        n_all += steered_all
        stages.append({"k": k, "mu_k": float(mu), "cut_used": float(used), "saturated": bool(used < cut),
                       "active_cost": low.cost, "pre_norm": pre, "post_norm": post,
                       "active_len": Tk, "pairs": int(npairs), "steered_all": bool(steered_all)})
        a += 2 * Tk
        k += 1
        if layout is not None:
            done = k >= len(layout)
        else:
            # a full steer that left residue from conditioning is repeated on the next stage; in
            # full mode the stage count must not depend on the data, so it stops after a few
            done = k >= max_stages or T / 2 ** (k + 2) < 1e-9 * T
            done = done or (n_all >= full_repeats if full else post <= tol * norm0)
    # free evolution over whatever is left of [0, T]
    rest = T - a if parts else T
    if rest > 1e-14 * T:
        t_rest = pair_grid(0.0, rest, passive_pairs)
        tr_r = run_linear(op, state, t_rest, np.zeros((len(t_rest), n, K)))
        parts.append((t0 + a + t_rest, np.zeros((len(t_rest), m, K))))
        traj_parts.append((t0 + a + t_rest, tr_r.states))
    times, values = _concat(parts)
    _, states = _concat(traj_parts)
    return times, values, states, stages


def _decays(stages, factor=0.5, noise=1e-13):
    if not stages:
        return True
    floor = noise * stages[0]["pre_norm"]
    return all(s["post_norm"] <= factor * s["pre_norm"] or s["steered_all"] or s["pre_norm"] <= floor
               for s in stages)


def stage_layout(report):
    """Per-stage (cut, pairs) of a drive, reusable to rebuild the identical time grid."""
    return [(s["cut_used"], s["pairs"]) for s in report["stages"]]


def lr_drive(z0, T, dom, transform, M_init=None, tol=1e-9, base_pairs=12, passive_pairs=6, max_pairs=400,
             max_doublings=20, op=None, t0=0.0, M_fixed=None, max_stages=40, full=False, layout=None):
    """Alternate low-mode steering and free decay over the dyadic tiling of [0, T].

    The cut on stage k is M 4^k. M starts at max(lambda_1, 8 / T^2) unless
    ``M_init`` is given and is doubled until every stage contracts the state by
    at least 1/2 (``M_fixed`` skips the search). With ``full`` the stages run
    until the whole truncation is steered instead of stopping at ``tol``, and
    ``layout`` (see stage_layout) replays a previous stage structure exactly.
    A stage whose Gramian is numerically singular at the requested cut steers
    the largest feasible block instead and is flagged ``saturated``. Returns the
    control on the concatenated grid, the trajectory and a report.
    """
    op = op or linear_operator(dom, transform)
    z0 = np.asarray(z0, float)
    check_invariant_subspace(z0, transform.m)
    if M_init is None:
        lam1 = dom.eigenvalues[1] if len(dom.eigenvalues) > 1 else 1.0
        M_init = max(lam1, 8.0 / T ** 2)
    M = float(M_fixed if M_fixed is not None else M_init)
    attempts = 0
    while True:
        times, values, states, stages = _drive_once(z0, T, dom, transform, M, op, tol, base_pairs,
                                                    passive_pairs, max_pairs, t0, max_stages, full, layout)
        if M_fixed is not None or layout is not None or _decays(stages):
            break
        attempts += 1
        if attempts > max_doublings:
            raise NoDecayDetected(f"no stage-wise decay after {max_doublings} doublings of M", M=M)
        M *= 2.0
    control = ControlSignal(times, values)
    norm0 = l2_norm(z0)
    report = {"stages": stages, "final_norm": l2_norm(states[-1]), "initial_norm": norm0, "M_used": M,
              "control_l2": math.sqrt(control.energy(dom)) if len(times) > 2 else 0.0}
    return DriveResult(control, Trajectory(times, states), report)


def cost_blowup_sweep(z0, T_list, dom, transform, **kwargs):
    """Control L2 cost of lr_drive for each horizon, with the fit cost ~ c1 exp(c2 / T)."""
    rows = []
    for T in T_list:
        res = lr_drive(z0, T, dom, transform, **kwargs)
        rows.append({"T": float(T), "cost": res.report["control_l2"], "final_norm": res.report["final_norm"],
                     "M_used": res.report["M_used"]})
    fit = fit_exponential_cost([r["T"] for r in rows], [r["cost"] for r in rows])
    return rows, fit


def fit_exponential_cost(T, cost):
    """Least squares of log(cost) = log(c1) + c2 / T; returns c1, c2 and R^2."""
    x = 1.0 / np.asarray(T, float)
    y = np.log(np.asarray(cost, float))
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return {"c1": float(np.exp(coef[0])), "c2": float(coef[1]), "r2": float(r2)}
