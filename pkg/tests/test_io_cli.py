import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from rdcontrol import io
from rdcontrol.cli import run
from rdcontrol.errors import ConfigInvalid
from rdcontrol.spectral import SpectralDomain

BASE = {
    "n": 4, "m": 2, "alpha": [1, 0, 1, 0], "beta": [0, 1, 0, 1], "d": [1.0, 2.0, 3.0, 4.0],
    "u_star": [1.0, 1.0, 1.0, 1.0], "domain_length": 1.0, "omega": [0.3, 0.7], "modes": 8,
    "simulate": {"T": 0.1, "dt": 0.01, "amplitude": 0.1},
    "control_linear": {"T": 0.5},
    "fdcontrol": {"lam": 10.0, "tau": 0.5, "npairs": 50},
}


def write_config(tmp_path, **changes):
    cfg = json.loads(json.dumps(BASE))
    for key, val in changes.items():
        if val is None:
            cfg.pop(key)
        else:
            cfg[key] = val
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.mark.parametrize("field", ["n", "omega", "d", "domain_length"])
def test_missing_field(field):
    raw = dict(BASE)
    raw.pop(field)
    with pytest.raises(ConfigInvalid) as err:
        io.parse_config(raw)
    assert err.value.field == field


@pytest.mark.parametrize("field, value", [
    ("omega", [0.7, 0.3]), ("omega", [0.2, 1.5]), ("modes", 4), ("m", 4), ("alpha", [1, 0, 1]),
    ("u_star", [1.0, 2.0, 1.0, 1.0]), ("domain_length", -1.0), ("n", True),
])
def test_invalid_field(field, value):
    raw = dict(BASE, **{field: value})
    with pytest.raises(ConfigInvalid):
        io.parse_config(raw)


def test_default_config_and_stationary_pick():
    setup = io.load_config()
    assert setup.net.n == 4 and setup.modes >= 8
    raw = dict(BASE)
    raw.pop("u_star")
    np.testing.assert_array_equal(io.parse_config(raw).u_star, np.ones(4))


def test_exit_codes(tmp_path, capsys):
    assert run(["verify-identities", "--config", write_config(tmp_path, omega=None), "--out",
                str(tmp_path / "a")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == "config_invalid" and err["details"]["field"] == "omega"
    assert run(["verify-identities", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "b")]) == 2
    assert run(["verify-identities", "--config", write_config(tmp_path, d=[1.0, 2.0, 3.0, 3.0]), "--out",
                str(tmp_path / "c")]) == 4
    assert run(["simulate", "--config", write_config(tmp_path, simulate={"dt": -1}), "--out",
                str(tmp_path / "d")]) == 2


def test_verify_identities(tmp_path):
    out = tmp_path / "out"
    assert run(["verify-identities", "--config", write_config(tmp_path), "--out", str(out), "--quiet"]) == 0
    report = json.loads((out / "identities.json").read_text())
    assert max(report.values()) <= 1e-10
    meta = json.loads((out / "metadata.json").read_text())
    assert {"subcommand", "config_hash", "seed", "versions", "species_order"} <= set(meta)
    assert meta["config_hash"] == io.config_hash(json.loads(open(write_config(tmp_path)).read()))
    assert meta["versions"]["kernels"] in ("cython", "numpy")


def test_same_seed_same_bytes(tmp_path):
    cfg = write_config(tmp_path)
    for name in ("one", "two"):
        assert run(["simulate", "--config", cfg, "--out", str(tmp_path / name), "--seed", "7", "--quiet"]) == 0
    for f in ("trajectory.csv", "trajectory_physical.csv", "metadata.json"):
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "three"), "--seed", "8", "--quiet"]) == 0
    assert (tmp_path / "three" / "trajectory.csv").read_bytes() != (tmp_path / "one" / "trajectory.csv").read_bytes()


@pytest.mark.parametrize("sub, files", [
    ("control-linear", ["control.csv", "report.json"]),
    ("fdcontrol", ["fdcontrol.csv", "report.json"]),
])
def test_subcommand_outputs(tmp_path, sub, files):
    out = tmp_path / "out"
    assert run([sub, "--config", write_config(tmp_path), "--out", str(out), "--quiet"]) == 0
    for f in files + ["metadata.json"]:
        assert (out / f).stat().st_size > 0


def test_coefficient_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    times = np.array([0.0, 0.1, 0.3])
    states = rng.standard_normal((3, 2, 5))
    io.write_coefficients(tmp_path / "c.csv", times, states)
    t2, s2 = io.read_coefficients(tmp_path / "c.csv")
    np.testing.assert_array_equal(t2, times)
    np.testing.assert_array_equal(s2, states)


def test_physical_csv(tmp_path):
    dom = SpectralDomain.for_degree(1.0, 8, (0.3, 0.7), 2)
    states = np.zeros((1, 2, dom.n_modes))
    states[0, :, 0] = [2.0, 3.0]
    io.write_physical(tmp_path / "p.csv", [0.0], states, dom, x=[0.0, 0.5])
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert [r["species"] for r in rows] == ["1", "1", "2", "2"]
    # a constant mode-0 coefficient c is the field c / sqrt(L)
    assert [float(r["value"]) for r in rows] == pytest.approx([2.0, 2.0, 3.0, 3.0], rel=1e-14)


def test_json_strict_output(tmp_path):
    io.write_json(tmp_path / "r.json", {"a": float("inf"), "b": np.float64(1.5), "c": np.arange(2)})
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": "inf", "b": 1.5, "c": [0, 1]}


def test_module_entry_point(tmp_path):
    out = tmp_path / "out"
    proc = subprocess.run([sys.executable, "-m", "rdcontrol.cli", "fdcontrol", "--config", write_config(tmp_path),
                           "--out", str(out)], capture_output=True, text=True, env=dict(os.environ))
    assert proc.returncode == 0, proc.stderr
    assert "terminal_norm" in json.loads(proc.stdout)
