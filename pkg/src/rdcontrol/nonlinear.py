"""Local null control of the full mass-action system around a constant stationary state.

In cascade variables the nonlinear system is the linear one plus the source
Q(Z) = G(Z) - A_J Z, which is quadratically small. A Picard iteration feeds the
remainder of the previous iterate to the source-term controller until the
trajectories stop moving, then the control is replayed on the original system.
"""
from dataclasses import dataclass
import math

import numpy as np

from .cascade import from_z, nonlinear_weights, stationary_coeffs, to_z
from .errors import AssumptionViolation, ConfigInvalid, MassConditionViolated, NotConverged, RDControlError
from .lebeau_robbiano import uncontrollable_mask
from .reaction import common_rate, invariant_functionals, species_integrals
from .sourceterm import log_weighted_sup, plan_schedule, sourceterm_control
from .spectral import (ControlSignal, Trajectory, l2_norm, linear_operator, node_norms, simulate_nonlinear,
                       sup_norm)

LOG10 = math.log(10.0)


def q_remainder(transform, net, dom, z):
    """Q(z) = G(z) - A_J z by collocation, for z of shape (n, K) or (J, n, K)."""
    z = np.asarray(z, float)
    single = z.ndim == 2
    zs = z[None] if single else z
    u = np.einsum("ij,tjk,qk->tiq", transform.P_inv, zs, dom.synth) + transform.u_star[None, :, None]
    rate = np.stack([common_rate(net, ut) for ut in u])              # (J, Q)
    out = nonlinear_weights(net)[None, :, None] * (rate @ dom.anal.T)[:, None, :]
    out -= np.einsum("ij,tjk->tik", transform.A_J, zs)
    return out[0] if single else out


@dataclass
class NonlinearResult:
    control: ControlSignal       # acts on the first m species of U
    trajectory: Trajectory       # validated run in U coefficients
    z_trajectory: Trajectory     # last Picard iterate in cascade variables
    report: dict


def mass_condition(u0, net, transform, dom, tol=1e-10):
    """Cascade state of u0, with its frozen means checked and then set exactly to zero."""
    z0 = to_z(u0, transform, dom.L)
    frozen = uncontrollable_mask(net.n, net.m, dom.n_modes)
    if np.any(np.abs(z0[frozen]) > tol * max(l2_norm(z0), 1e-300)):
        raise MassConditionViolated(
            "initial data changes the conserved mass differences",
            invariant_mismatch=invariant_functionals(net, transform.u_star, u0, dom.L).tolist(),
            frozen_means=z0[frozen].tolist())
    z0[frozen] = 0.0
    return z0


def invariant_drift(net, u_star, states, L):
    """max_t |I(U(t)) - I(U(0))| relative to the largest species mass at t = 0."""
    vals = np.array([invariant_functionals(net, u_star, s, L) for s in states])
    if vals.shape[1] == 0:
        return 0.0
    scale = max(np.max(np.abs(species_integrals(states[0], L))), 1e-300)
    return float(np.max(np.abs(vals - vals[0])) / scale)


def validate_control(u0, control, net, dom, transform, dt=None, bound=1e6, refine=8):
    """Run the original system under the control; returns (trajectory, terminal sup error).

    Without ``dt`` every pair of the control grid is split ``refine`` times, enough
    for the terminal error to stop depending on the step.
    """
    if dt is None:
        t = control.times
        dt = float(np.max(t[2::2] - t[:-2:2])) / refine
    traj = simulate_nonlinear(dom, net, transform.u_star, u0, control=control, dt=dt, bound=bound)
    shift = stationary_coeffs(transform.u_star, dom.n_modes, dom.L)
    return traj, sup_norm(traj.final - shift, dom)


def fixed_point_control(u0, net, weights, dom, transform, max_iter=30, contraction_tol=1e-10, radius=None,
                        tol=1e-6, plan=None, validate=True, op=None):
    """Picard iteration S^0 = 0, Z^j = control(z0, S^j), S^{j+1} = Q(Z^j).

    The iterate distance is max_t |Z^j(t) - Z^{j-1}(t)| relative to |z0|. The
    weighted distance (divided by rho_0 over the steered span) is reported
    alongside. Raises NotConverged with the iterate history on failure.
    """
    if max_iter < 1:
        raise ConfigInvalid("max_iter", "need at least one iteration")
    if not contraction_tol > 0:
        raise ConfigInvalid("contraction_tol", "must be positive")
    K = dom.n_modes
    u0 = np.asarray(u0, float)
    z0 = mass_condition(u0, net, transform, dom)
    shift = stationary_coeffs(transform.u_star, K, dom.L)
    size = sup_norm(u0 - shift, dom)
    if radius is not None and sup_norm(z0, dom) > radius:
        raise ConfigInvalid("radius", f"initial deviation {sup_norm(z0, dom):.3e} exceeds the radius {radius:.3e}")
    op = op or linear_operator(dom, transform)
    plan = plan or plan_schedule(weights, dom, transform, op=op)
    z_scale = max(l2_norm(z0), 1e-300)

    source = None
    prev = None
    history = []
    converged = False
    for j in range(max_iter):
        res = sourceterm_control(z0, source, weights, dom, transform, tol=tol, plan=plan, op=op)
        states = res.trajectory.states
        entry = {"j": j, "final_norm": res.report["final_norm"],
                 "source_norm": 0.0 if source is None else float(np.max(node_norms(source.values)))}
        if prev is not None:
            gap = node_norms(states - prev)
            entry["distance"] = float(np.max(gap) / z_scale)
            span = res.trajectory.times <= res.report["steered_until"]
            entry["log10_weighted_distance"] = log_weighted_sup(
                gap[span], weights.log_rho0(res.trajectory.times[span])) / LOG10
            last = history[-1].get("distance")
            entry["contraction"] = entry["distance"] / last if last else None
        history.append(entry)
        if not np.all(np.isfinite(states)):
            raise NotConverged("Picard iterate is not finite", iterations=history)
        if prev is not None and entry["distance"] <= contraction_tol:
            converged = True
            break
        nxt = q_remainder(transform, net, dom, states)
        if np.array_equal(nxt, np.zeros_like(nxt) if source is None else source.values):
            converged = True        # the source is reproduced exactly: Z^{j+1} = Z^j
            break
        prev = states
        source = ControlSignal(res.trajectory.times, nxt)
    if not converged:
        raise NotConverged(f"no fixed point within {max_iter} iterations", iterations=history)

    control = ControlSignal(res.control.times, res.control.values.copy())
    report = {"iterations": history, "converged": True, "radius": size, "z_radius": sup_norm(z0, dom),
              "certificates": res.report["certificates"]}
    traj = None
    if validate:
        traj, err = validate_control(u0, control, net, dom, transform)
        threshold = 1e-5 * size + 1e-9
        report.update(terminal_error=err, terminal_threshold=threshold,
                      invariant_drift=invariant_drift(net, transform.u_star, traj.states, dom.L))
        if not err <= threshold:
            exc = NotConverged(f"validated terminal error {err:.3e} above {threshold:.3e}", iterations=history,
                               terminal_error=err)
            exc.result = NonlinearResult(control, traj, res.trajectory, report)
            raise exc
    return NonlinearResult(control, traj, res.trajectory, report)


def perturbation_in_linv(net, transform, dom, rng, modes=4):
    """Random smooth deviation from u* with unit sup-norm whose cascade image lies in L_inv."""
    z = np.zeros((net.n, dom.n_modes))
    z[:, :modes] = rng.standard_normal((net.n, modes)) / (1.0 + np.arange(modes)) ** 2
    z[uncontrollable_mask(net.n, net.m, dom.n_modes)] = 0.0
    du = from_z(z, transform, dom.L) - stationary_coeffs(transform.u_star, dom.n_modes, dom.L)
    return du / sup_norm(du, dom)


def radius_probe(net, weights, dom, transform, direction, radii, bisect=2, max_iter=30, plan=None, op=None):
    """Run the controller at u* + r * direction for increasing r and locate the edge of convergence.

    ``direction`` is a deviation in U coefficients with unit sup-norm. After the
    sweep the gap between the last converged and first failed radius is bisected
    ``bisect`` times. Numerical failures are recorded, never raised.
    """
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    op = op or linear_operator(dom, transform)
    plan = plan or plan_schedule(weights, dom, transform, op=op)
    shift = stationary_coeffs(transform.u_star, dom.n_modes, dom.L)

    def attempt(r):
        row = {"radius": r}
        try:
            res = fixed_point_control(shift + r * direction, net, weights, dom, transform, max_iter=max_iter,
                                      plan=plan, op=op)
            its = res.report["iterations"]
            row.update(converged=True, iterations=len(its), terminal_error=res.report["terminal_error"])
        except (AssumptionViolation, ConfigInvalid):
            raise
        except RDControlError as exc:
            its = exc.details.get("iterations", [])
            row.update(converged=False, iterations=len(its), error=type(exc).__name__)
        row["first_contraction"] = its[2]["contraction"] if len(its) > 2 else None
        return row

    rows = [attempt(r) for r in radii]
    good = [r["radius"] for r in rows if r["converged"]]
    bad = [r["radius"] for r in rows if not r["converged"] and (not good or r["radius"] > max(good))]
    lo = max(good) if good else 0.0
    hi = min(bad) if bad else None
    if hi is not None:
        for _ in range(bisect):
            mid = 0.5 * (lo + hi)
            row = attempt(mid)
            rows.append(row)
            lo, hi = (mid, hi) if row["converged"] else (lo, mid)
    rows.sort(key=lambda r: r["radius"])
    return {"rows": rows, "basin_edge": lo, "first_failure": hi}
