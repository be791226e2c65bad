"""Command-line entry point: ``rdcontrol <subcommand> [--config PATH] [--out DIR] [--seed N] [--quiet]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 violated
structural assumption.
"""
import argparse
import json
from pathlib import Path
import sys

import numpy as np

from . import io
from .cascade import column_identity_check, make_transform, reciprocal_product_identity, roundtrip_error, \
    stationary_coeffs
from .errors import ConfigInvalid, RDControlError
from .finite_dim import ModeSystem, brunovsky_control, terminal_state_oracle
from .lebeau_robbiano import cost_blowup_sweep, lr_drive, uncontrollable_mask
from .nonlinear import fixed_point_control, perturbation_in_linv
from .penalized import epsilon_sweep
from .reaction import witness_order
from .sourceterm import WeightFamily
from .spectral import SpectralDomain, l2_norm, simulate_nonlinear

SUBCOMMANDS = ("verify-identities", "simulate", "control-linear", "control-nonlinear", "penalized-hum",
               "sweep-cost", "fdcontrol")


class Context:
    def __init__(self, setup, out, seed):
        order = witness_order(setup.net, setup.u_star)
        if order != list(range(setup.net.n)):
            setup.net = setup.net.permuted(order)
            setup.u_star = setup.u_star[order]
        self.species_order = order
        self.setup = setup
        self.net = setup.net
        self.out = out
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.transform = make_transform(self.net, setup.u_star)
        self.dom = SpectralDomain.for_degree(setup.domain_length, setup.modes, setup.omega, self.net.gamma)

    def opt(self, section, key, default, kind=float):
        val = self.setup.section(section).get(key, default)
        try:
            return [kind(v) for v in val] if isinstance(val, list) else kind(val)
        except (TypeError, ValueError):
            raise ConfigInvalid(f"{section}.{key}", f"expected {kind.__name__}") from None

    def random_linv(self):
        z = self.rng.standard_normal((self.net.n, self.dom.n_modes))
        z[uncontrollable_mask(self.net.n, self.net.m, self.dom.n_modes)] = 0.0
        return z

    def path(self, name):
        return self.out / name


def _positive(ctx, section, key, val):
    if not val > 0:
        raise ConfigInvalid(f"{section}.{key}", "must be positive")
    return val


def cmd_verify_identities(ctx):
    tuples = [ctx.rng.permutation(np.linspace(-4.0, 4.0, 41))[:s] for s in ctx.rng.integers(2, 9, size=200)]
    u = stationary_coeffs(ctx.setup.u_star, ctx.dom.n_modes, ctx.dom.L) + 0.1 * ctx.rng.standard_normal(
        (ctx.net.n, ctx.dom.n_modes))
    report = {"column_identity_max": column_identity_check(ctx.transform, ctx.net),
              "reciprocal_identity_max": max(abs(reciprocal_product_identity(a)) for a in tuples),
              "roundtrip_max": roundtrip_error(u, ctx.transform, ctx.dom.L)}
    io.write_json(ctx.path("identities.json"), report)
    return report


def cmd_simulate(ctx):
    T = _positive(ctx, "simulate", "T", ctx.opt("simulate", "T", 1.0))
    dt = _positive(ctx, "simulate", "dt", ctx.opt("simulate", "dt", 0.01))
    amp = ctx.opt("simulate", "amplitude", 0.1)
    every = ctx.opt("simulate", "save_every", 1, int)
    shift = stationary_coeffs(ctx.setup.u_star, ctx.dom.n_modes, ctx.dom.L)
    u0 = shift + amp * perturbation_in_linv(ctx.net, ctx.transform, ctx.dom, ctx.rng)
    traj = simulate_nonlinear(ctx.dom, ctx.net, ctx.setup.u_star, u0, T=T, dt=dt)
    keep = np.arange(0, len(traj.times), max(1, every))
    if keep[-1] != len(traj.times) - 1:
        keep = np.append(keep, len(traj.times) - 1)
    io.write_coefficients(ctx.path("trajectory.csv"), traj.times[keep], traj.states[keep])
    io.write_physical(ctx.path("trajectory_physical.csv"), traj.times[keep], traj.states[keep], ctx.dom)
    return {"T": T, "dt": dt, "nodes": len(traj.times), "final_deviation_l2": l2_norm(traj.final - shift)}


def cmd_control_linear(ctx):
    T = _positive(ctx, "control_linear", "T", ctx.opt("control_linear", "T", 0.5))
    z0 = ctx.random_linv()
    res = lr_drive(z0, T, ctx.dom, ctx.transform)
    io.write_coefficients(ctx.path("control.csv"), res.control.times, res.control.values)
    keys = ("k", "mu_k", "active_cost", "pre_norm", "post_norm", "cut_used", "pairs")
    report = {"stages": [{k: s[k] for k in keys} for s in res.report["stages"]],
              "final_norm": res.report["final_norm"], "initial_norm": res.report["initial_norm"],
              "M_used": res.report["M_used"], "control_l2": res.report["control_l2"]}
    io.write_json(ctx.path("report.json"), report)
    return {"final_norm": report["final_norm"], "initial_norm": report["initial_norm"], "M_used": report["M_used"]}


def cmd_control_nonlinear(ctx):
    sec = "control_nonlinear"
    T = _positive(ctx, sec, "T", ctx.opt(sec, "T", 1.0))
    weights = WeightFamily(M=ctx.opt(sec, "weight_M", 0.1), T=T)
    amp = ctx.opt(sec, "amplitude", 0.01)
    shift = stationary_coeffs(ctx.setup.u_star, ctx.dom.n_modes, ctx.dom.L)
    u0 = shift + amp * perturbation_in_linv(ctx.net, ctx.transform, ctx.dom, ctx.rng)
    res = fixed_point_control(u0, ctx.net, weights, ctx.dom, ctx.transform,
                              max_iter=ctx.opt(sec, "max_iter", 30, int),
                              contraction_tol=ctx.opt(sec, "contraction_tol", 1e-10))
    io.write_coefficients(ctx.path("control.csv"), res.control.times, res.control.values)
    every = max(1, ctx.opt(sec, "save_every", 8, int))
    io.write_coefficients(ctx.path("trajectory.csv"), res.trajectory.times[::every], res.trajectory.states[::every])
    rep = res.report
    report = {"iterations": [{"j": h["j"], "contraction": h.get("contraction"), "source_norm": h["source_norm"],
                              "distance": h.get("distance")} for h in rep["iterations"]],
              "terminal_error": rep["terminal_error"], "terminal_threshold": rep["terminal_threshold"],
              "radius": rep["radius"], "invariant_drift": rep["invariant_drift"],
              "certificates": rep["certificates"]}
    io.write_json(ctx.path("report.json"), report)
    return {"iterations": len(report["iterations"]), "terminal_error": report["terminal_error"],
            "radius": report["radius"]}


def cmd_penalized_hum(ctx):
    sec = "penalized_hum"
    T = _positive(ctx, sec, "T", ctx.opt(sec, "T", 1.0))
    weights = WeightFamily(M=ctx.opt(sec, "weight_M", 0.1), T=T)
    eps = ctx.opt(sec, "eps_list", [1e-2, 1e-4, 1e-6, 1e-8])
    if not isinstance(eps, list) or len(eps) < 4 or any(b >= a for a, b in zip(eps, eps[1:])) or eps[-1] <= 0:
        raise ConfigInvalid(f"{sec}.eps_list", "need at least four positive, strictly decreasing values")
    rows = epsilon_sweep(ctx.random_linv(), eps, weights, ctx.dom, ctx.transform,
                         npairs=ctx.opt(sec, "npairs", 200, int))
    cols = ["eps", "terminal_norm_sq_over_eps", "weighted_control_energy", "control_sup_norm", "terminal_norm"]
    io.write_rows(ctx.path("sweep.csv"), rows, cols)
    return {"rows": len(rows), "terminal_norm_last": rows[-1]["terminal_norm"]}


def cmd_sweep_cost(ctx):
    T_list = ctx.opt("sweep_cost", "T_list", [0.5, 0.35, 0.25, 0.18, 0.12])
    if not isinstance(T_list, list) or len(T_list) < 2 or min(T_list) <= 0:
        raise ConfigInvalid("sweep_cost.T_list", "need at least two positive horizons")
    rows, fit = cost_blowup_sweep(ctx.random_linv(), T_list, ctx.dom, ctx.transform)
    io.write_rows(ctx.path("cost.csv"), rows, ["T", "cost", "final_norm", "M_used"])
    io.write_json(ctx.path("fit.json"), fit)
    return fit


def cmd_fdcontrol(ctx):
    sec = "fdcontrol"
    raw = ctx.setup.section(sec)
    lam = ctx.opt(sec, "lam", 10.0)
    tau = _positive(ctx, sec, "tau", ctx.opt(sec, "tau", 0.5))
    n, m = ctx.net.n, ctx.net.m
    D_J = np.array(raw.get("D_J", ctx.transform.D_J), float)
    A_J = np.array(raw.get("A_J", ctx.transform.A_J), float)
    for name, mat in (("D_J", D_J), ("A_J", A_J)):
        if mat.shape != (n, n):
            raise ConfigInvalid(f"{sec}.{name}", f"expected a {n}x{n} matrix")
    y0 = np.array(raw["y0"], float) if "y0" in raw else ctx.rng.standard_normal(n)
    if y0.shape != (n,):
        raise ConfigInvalid(f"{sec}.y0", f"expected {n} entries")
    system = ModeSystem.from_cascade(D_J, A_J, lam, tau, m)
    res = brunovsky_control(system, y0, npairs=ctx.opt(sec, "npairs", 200, int))
    rows = []
    for j, t in enumerate(res.times):
        row = {"t": t}
        row.update({f"y{i + 1}": res.y[j, i] for i in range(n)})
        row.update({f"h{i + 1}": res.h[j, i] for i in range(m)})
        rows.append(row)
    cols = ["t"] + [f"y{i + 1}" for i in range(n)] + [f"h{i + 1}" for i in range(m)]
    io.write_rows(ctx.path("fdcontrol.csv"), rows, cols)
    terminal = float(np.linalg.norm(terminal_state_oracle(system, y0)))
    report = {"terminal_norm": terminal, "terminal_norm_relative": terminal / float(np.linalg.norm(y0)),
              "control_energy": res.control_energy(), "lam": lam, "tau": tau}
    io.write_json(ctx.path("report.json"), report)
    return report


COMMANDS = {
    "verify-identities": cmd_verify_identities,
    "simulate": cmd_simulate,
    "control-linear": cmd_control_linear,
    "control-nonlinear": cmd_control_nonlinear,
    "penalized-hum": cmd_penalized_hum,
    "sweep-cost": cmd_sweep_cost,
    "fdcontrol": cmd_fdcontrol,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rdcontrol", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="run configuration JSON (default: bundled demo network)")
    parser.add_argument("--out", default="rdcontrol_out", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quiet", action="store_true")
    return parser


def run(argv=None):
    """Parse arguments and execute; returns the exit status."""
    args = build_parser().parse_args(argv)
    try:
        setup = io.load_config(args.config)
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigInvalid("seed", "must fit in 64 unsigned bits")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(setup, out, args.seed)
        io.write_metadata(out, args.subcommand, setup, args.seed, {"species_order": ctx.species_order})
        summary = COMMANDS[args.subcommand](ctx)
    except RDControlError as exc:
        print(json.dumps(io.to_plain(exc.to_dict()), default=io.json_default), file=sys.stderr)
        return exc.exit_code
    if not args.quiet:
        print(json.dumps(io.to_plain(summary), sort_keys=True, default=io.json_default))
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
