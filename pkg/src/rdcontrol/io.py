"""Run configuration, CSV/JSON artifacts and the metadata sidecar."""
from dataclasses import dataclass, field
import csv
import hashlib
import json
from importlib import resources
from pathlib import Path
import platform

import numpy as np
import scipy

from .errors import ConfigInvalid
from .reaction import ReactionNetwork, check_assumptions, find_constant_stationary_states, is_stationary

REQUIRED = ("n", "m", "alpha", "beta", "d", "domain_length", "omega")
DEMO_CONFIG = "application.json"


@dataclass
class RunSetup:
    net: ReactionNetwork
    u_star: np.ndarray
    domain_length: float
    omega: tuple
    modes: int
    raw: dict
    options: dict = field(default_factory=dict)

    def section(self, name):
        sec = self.raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigInvalid(name, "must be an object")
        return sec


def _int_list(raw, name, n):
    vals = raw[name]
    if not isinstance(vals, list) or len(vals) != n:
        raise ConfigInvalid(name, f"expected a list of {n} entries")
    if any(isinstance(v, bool) or not isinstance(v, int) for v in vals):
        raise ConfigInvalid(name, "entries must be integers")
    return vals


def _num_list(raw, name, n):
    vals = raw[name]
    if not isinstance(vals, list) or len(vals) != n:
        raise ConfigInvalid(name, f"expected a list of {n} entries")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in vals):
        raise ConfigInvalid(name, "entries must be numbers")
    return [float(v) for v in vals]


def _pick_stationary(net):
    """First stationary state in [0, 2]^n, preferring all-ones, at which both structural assumptions hold."""
    ones = np.ones(net.n)
    candidates = [ones] if is_stationary(net, ones) else []
    candidates += find_constant_stationary_states(net, [(0.0, 2.0)] * net.n, 3)
    for u in candidates:
        rep = check_assumptions(net, u)
        if rep["distinct_diffusion"] and rep["has_witness"]:
            return u
    raise ConfigInvalid("u_star", "no admissible stationary state found in [0, 2]^n; give one explicitly")


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ConfigInvalid("config", "top level must be a JSON object")
    for name in REQUIRED:
        if name not in raw:
            raise ConfigInvalid(name, "missing")
    n, m = raw["n"], raw["m"]
    for name, val in (("n", n), ("m", m)):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigInvalid(name, "must be an integer")
    net = ReactionNetwork(n, m, _int_list(raw, "alpha", n), _int_list(raw, "beta", n), _num_list(raw, "d", n))
    L = raw["domain_length"]
    if isinstance(L, bool) or not isinstance(L, (int, float)) or not L > 0:
        raise ConfigInvalid("domain_length", "must be a positive number")
    omega = _num_list(raw, "omega", 2)
    if not 0 <= omega[0] < omega[1] <= L:
        raise ConfigInvalid("omega", "need 0 <= a < b <= domain_length")
    if "u_star" in raw:
        u_star = np.array(_num_list(raw, "u_star", n))
        if not is_stationary(net, u_star, tol=1e-10):
            raise ConfigInvalid("u_star", "not a nonnegative stationary state")
    else:
        u_star = _pick_stationary(net)
    modes = raw.get("modes", 16)
    if isinstance(modes, bool) or not isinstance(modes, int) or modes < 8:
        raise ConfigInvalid("modes", "must be an integer >= 8")
    return RunSetup(net, u_star, float(L), tuple(omega), modes, raw)


def load_config(path=None):
    """Parse a config file; the bundled demo when ``path`` is None."""
    if path is None:
        text = resources.files("rdcontrol").joinpath("data", DEMO_CONFIG).read_text()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigInvalid("config", f"file not found: {path}")
        text = p.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("config", f"not valid JSON ({exc})") from None
    return parse_config(raw)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=json_default)


def config_hash(raw):
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def to_plain(x):
    """Replace non-finite floats by strings so the output stays strict JSON."""
    if isinstance(x, dict):
        return {str(k): to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_plain(x.tolist())
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def write_json(path, obj):
    Path(path).write_text(json.dumps(to_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _fmt(x):
    return repr(float(x))


def write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) if isinstance(row[c], (float, np.floating)) else row[c] for c in columns])


def write_coefficients(path, times, states):
    """Long-format CSV ``t, species, mode, coeff``; species are 1-based."""
    states = np.asarray(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "species", "mode", "coeff"])
        for t, s in zip(times, states):
            for i in range(s.shape[0]):
                for k in range(s.shape[1]):
                    w.writerow([_fmt(t), i + 1, k, _fmt(s[i, k])])


def write_physical(path, times, states, dom, x=None):
    """Long-format CSV ``t, x, species, value``."""
    x = dom.grid if x is None else np.asarray(x, float)
    basis = dom.basis(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "species", "value"])
        for t, s in zip(times, np.asarray(states)):
            vals = s @ basis
            for i in range(vals.shape[0]):
                for q, xq in enumerate(x):
                    w.writerow([_fmt(t), _fmt(xq), i + 1, _fmt(vals[i, q])])


def read_coefficients(path):
    """Inverse of write_coefficients: (times, states)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    times = sorted({float(r["t"]) for r in rows})
    n = max(int(r["species"]) for r in rows)
    K = max(int(r["mode"]) for r in rows) + 1
    index = {t: j for j, t in enumerate(times)}
    out = np.zeros((len(times), n, K))
    for r in rows:
        out[index[float(r["t"])], int(r["species"]) - 1, int(r["mode"])] = float(r["coeff"])
    return np.array(times), out


def versions():
    from . import __version__, kernels
    return {"rdcontrol": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "kernels": kernels.BACKEND}


def write_metadata(out_dir, subcommand, setup, seed, extra=None):
    meta = {"subcommand": subcommand, "config_hash": config_hash(setup.raw), "config": setup.raw,
            "seed": seed, "versions": versions(),
            "domain": {"length": setup.domain_length, "omega": list(setup.omega), "modes": setup.modes},
            "u_star": setup.u_star.tolist()}
    if extra:
        meta.update(extra)
    write_json(Path(out_dir) / "metadata.json", meta)
    return meta
