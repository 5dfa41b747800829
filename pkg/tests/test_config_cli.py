import csv
import json
import math
import os

import numpy as np
import pytest

from tclevy import cli
from tclevy.config import ConfigError, build, parse_config
from tclevy.timechange import WARMUP_TAIL

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
REFERENCE = os.path.join(ROOT, "configs", "reference.json")

MINIMAL = {"model": {"mu": 0.1, "beta": 0.2, "rho": -0.1, "vol": {"lam": 0.5, "a": 2.0, "b": 1.0}}}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def test_minimal_config_defaults():
    cfg = build(MINIMAL)
    vol = cfg.raw["model"]["vol"]
    assert vol["s_max"] == pytest.approx(math.log(1 / WARMUP_TAIL) / 0.5)
    assert vol["factor"] == {"mode": "independent", "lam": 0.5, "a": 2.0, "b": 1.0}
    assert cfg.raw["model"]["levy1"] == {"kind": "zero"}
    assert cfg.quad.radius is None
    assert cfg.params.delta == 1.0


@pytest.mark.parametrize("mutate, field", [
    (lambda c: c["model"]["vol"].__setitem__("b", -1.0), "model.vol.b"),
    (lambda c: c["model"].__setitem__("zeta", 1.0), "model.zeta"),
    (lambda c: c["model"].pop("beta"), "model.beta"),
    (lambda c: c["model"].__setitem__("levy1", {"kind": "gamma", "a": 1.0}), "model.levy1.b"),
    (lambda c: c.__setitem__("check", {"n_paths": 10}), "check.n_paths"),
])
def test_validation_errors_name_the_field(mutate, field):
    cfg = json.loads(json.dumps(MINIMAL))
    mutate(cfg)
    with pytest.raises(ConfigError) as info:
        build(cfg)
    assert info.value.path == field


def test_roundtrip_is_stable(tmp_path):
    once = parse_config(REFERENCE).to_json()
    twice = parse_config(write(tmp_path, json.loads(once))).to_json()
    assert once == twice


def test_data_delta_overrides_model(tmp_path):
    cfg = dict(MINIMAL, data={"path": "x.csv", "delta": 0.25})
    assert build(cfg).params.delta == 0.25


def test_check_reference_config_passes(tmp_path, capsys):
    status = cli.main(["check", "--config", REFERENCE, "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert status == 0
    assert "FAIL" not in out and out.count("PASS") == 5
    report = json.loads((tmp_path / "check.json").read_text())
    assert report["passed"] and report["schema_version"] == 1
    assert (tmp_path / "config.json").exists()


def test_density_shift_equivariance(tmp_path):
    c, delta = 0.7, 2.0
    base = json.loads(json.dumps(MINIMAL))
    base["model"]["delta"] = delta
    shifted = json.loads(json.dumps(base))
    shifted["model"]["mu"] += c
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["density", "--config", write(tmp_path, base, "a.json"), "--out", str(a),
                     "--grid", "-3:3:0.5"]) == 0
    assert cli.main(["density", "--config", write(tmp_path, shifted, "b.json"), "--out", str(b),
                     "--grid", f"{-3 + c * delta}:{3 + c * delta}:0.5"]) == 0
    _, da = read_csv(a / "density.csv")
    _, db = read_csv(b / "density.csv")
    assert da.shape == db.shape == (13, 2)
    assert np.allclose(db[:, 0] - da[:, 0], c * delta)
    assert np.max(np.abs(da[:, 1] - db[:, 1])) <= 1e-10
    diag = json.loads((a / "density.json").read_text())["diagnostics"]
    assert diag["max_im_re_ratio"] <= 1e-6


def test_simulate_is_reproducible(tmp_path):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["simulate"] = {"n": 3, "n_paths": 2000, "latents": True}
    path = write(tmp_path, cfg)
    cli.main(["simulate", "--config", path, "--out", str(tmp_path / "r1"), "--seed", "11"])
    cli.main(["simulate", "--config", path, "--out", str(tmp_path / "r2"), "--seed", "11", "--threads", "2"])
    first = (tmp_path / "r1" / "returns.csv").read_bytes()
    assert first == (tmp_path / "r2" / "returns.csv").read_bytes()
    header, table = read_csv(tmp_path / "r1" / "returns.csv")
    assert header[:4] == ["path", "x1", "x2", "x3"] and "tau1" in header and "eps3" in header
    # returns are the sum of their components
    col = {h: table[:, k] for k, h in enumerate(header)}
    ts = col["tau1"] + col["gamma1"]
    x1 = 0.1 + col["J11"] + col["J21"] + 0.2 * ts - 0.1 * col["gamma1"] + np.sqrt(ts) * col["eps1"]
    assert np.allclose(col["x1"], x1, atol=1e-12)


def test_loglik_exact_and_composite(tmp_path, capsys):
    data = tmp_path / "x.csv"
    for n, mode in ((2, "exact"), (4, "composite(block=2)")):
        data.write_text("r\n" + "\n".join(str(v) for v in np.linspace(-1, 1, n)) + "\n")
        cfg = dict(MINIMAL, data={"path": str(data), "column": "r"})
        out = tmp_path / f"ll{n}"
        assert cli.main(["loglik", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
        res = json.loads((out / "loglik.json").read_text())
        assert res["mode"] == mode and math.isfinite(res["loglik"])
    # three exact dimensions with slowly decaying clocks exceed the default budget
    data.write_text("r\n-1\n0\n1\n")
    cfg = dict(MINIMAL, data={"path": str(data), "column": "r"}, quad={"max_evals": 1000})
    assert cli.main(["loglik", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "ll3")]) == 2
    assert json.loads(capsys.readouterr().out)["error"] == "BudgetExceeded"


def test_errors_become_json(tmp_path, capsys):
    bad = json.loads(json.dumps(MINIMAL))
    bad["model"]["vol"]["b"] = -1
    status = cli.main(["density", "--config", write(tmp_path, bad), "--out", str(tmp_path)])
    err = json.loads(capsys.readouterr().out)
    assert status == 2
    assert err["schema_version"] == 1 and err["field"] == "model.vol.b" and err["error"] == "ConfigError"
    assert json.loads((tmp_path / "error.json").read_text()) == err


def test_missing_data_section_is_an_error(tmp_path, capsys):
    assert cli.main(["loglik", "--config", write(tmp_path, MINIMAL), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().out)["field"] == "data"
