import json
import subprocess
import sys

import pytest

from heatlab import __version__
from heatlab.cli import DEFAULTS, ConfigError, main, resolve_config

SMALL = {"grid": {"R": 2.5, "N": 16}}


def run_cli(tmp_path, sub, cfg=None, *extra):
    args = [sub, "--out", str(tmp_path / "out")]
    if cfg is not None:
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        args += ["--config", str(path)]
    return main(args + list(extra))


def outputs(tmp_path):
    return sorted(p.name for p in (tmp_path / "out").iterdir())


def test_kernel(tmp_path):
    cfg = dict(SMALL, kernel={"s": [0.5, 1.0]}, tau=[0.5, 1.0], plots=True)
    assert run_cli(tmp_path, "kernel", cfg) == 0
    names = outputs(tmp_path)
    for stem in ("H_tau0.5_s0.5", "H_tau1_s1"):
        assert f"{stem}.csv" in names and f"{stem}.csv.meta.json" in names and f"{stem}.svg" in names
    meta = json.loads((tmp_path / "out" / "H_tau1_s1.csv.meta.json").read_text())
    assert meta["version"] == __version__ and meta["config"]["grid"]["N"] == 16
    assert meta["config"]["tau"] == [0.5, 1.0]


def test_identities(tmp_path):
    assert run_cli(tmp_path, "identities", {"identities": {"draws": 50}}) == 0
    data = json.loads((tmp_path / "out" / "identities.json").read_text())
    assert set(data["checks"].values()) == {"pass"}
    assert data["exact_failures"] == []


@pytest.mark.parametrize("estimate", ["heat_H", "lemma"])
def test_bounds(tmp_path, estimate):
    cfg = {"grid": {"R": 5.0, "N": 32}, "bounds": {"estimate_id": estimate, "n_samples": 100}}
    with pytest.warns(UserWarning) if estimate != "lemma" else _nullcontext():
        assert run_cli(tmp_path, "bounds", cfg) == 0
    reports = [p for p in (tmp_path / "out").glob("bounds_*.json") if "meta" not in p.name]
    assert reports
    for p in reports:
        assert json.loads(p.read_text())["verdict"] == "pass"


def test_cancel_records_spread(tmp_path):
    cfg = {"cancel": {"grid": {"R": 3.0, "N": 48}, "factors": [0.5, 1.0]}}
    assert run_cli(tmp_path, "cancel", cfg) == 0
    data = json.loads((tmp_path / "out" / "cancel.json").read_text())
    sweep = data["sweeps"]["tau1"]
    assert sweep["pass"] == (sweep["max_over_min"] <= 3.0)


def test_factor(tmp_path):
    cfg = {"factor": {"grid": {"R": 2.5, "N": 10}, "n_points": 4}}
    assert run_cli(tmp_path, "factor", cfg) == 0
    data = json.loads((tmp_path / "out" / "factor.json").read_text())
    assert data["tau1"]["oracle_max_rel_err"] < 1e-6


def test_spectrum(tmp_path):
    cfg = dict(SMALL, spectrum={"k": 3, "tau": [1.0, 2.0]}, plots=True)
    assert run_cli(tmp_path, "spectrum", cfg) == 0
    assert "spectrum.svg" in outputs(tmp_path)
    lines = (tmp_path / "out" / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "variant,tau,index,eigenvalue" and len(lines) == 1 + 2 * 2 * 3


def test_model_failure_writes_error_and_cleans_up(tmp_path):
    cfg = dict(SMALL, model={"quadrature": {"tau_max": 0.5, "nodes": 17}, "on_tail": "raise"})
    assert run_cli(tmp_path, "model", cfg) == 1
    assert outputs(tmp_path) == ["error.json"]
    err = json.loads((tmp_path / "out" / "error.json").read_text())
    assert err["status"] == "error" and err["type"] == "TailError"


def test_model_success(tmp_path):
    cfg = {"model": {"t": [-1.0, 0.0, 1.0]}}
    assert run_cli(tmp_path, "model", cfg) == 0
    data = json.loads((tmp_path / "out" / "model.json").read_text())
    assert data["n_samples"] + data["dropped_tail"] == 3


def test_runs_are_deterministic(tmp_path):
    cfg = {"identities": {"draws": 30}}
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    run_cli(tmp_path / "a", "identities", cfg)
    run_cli(tmp_path / "b", "identities", cfg)
    a = (tmp_path / "a" / "out" / "identities.json").read_text()
    b = (tmp_path / "b" / "out" / "identities.json").read_text()
    assert a == b


def test_seed_flag_overrides(tmp_path):
    run_cli(tmp_path, "identities", {"identities": {"draws": 10}}, "--seed", "7")
    meta = json.loads((tmp_path / "out" / "identities.json.meta.json").read_text())
    assert meta["config"]["seed"] == 7


@pytest.mark.parametrize("raw, msg", [
    ({"bogus": 1}, "unknown"),
    ({"grid": {"R": -1.0}}, "grid"),
    ({"grid": 3}, "object"),
    ({"tau": [1.0, float("inf")]}, "non-finite"),
    ({"tau": []}, "tau"),
    ({"bounds": {"estimate_id": "nope"}}, "estimate_id"),
    ({"kernel": {"kind": "G"}}, "kernel.kind"),
])
def test_config_validation(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        resolve_config(raw)


def test_config_defaults_round_trip():
    cfg = resolve_config({})
    assert resolve_config(json.loads(json.dumps(cfg))) == cfg
    assert cfg["tau"] == [DEFAULTS["tau"]]


def test_bad_config_exit_status(tmp_path, capsys):
    assert run_cli(tmp_path, "kernel", {"grid": {"N": 2}}) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["type"] == "ConfigError"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["kernel", "--config", str(bad)]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "heatlab", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and res.stdout.strip() == __version__


class _nullcontext:
    def __enter__(self):
        return self

    def __exit__(self, *a):
        return False
