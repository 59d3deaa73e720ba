import json

import numba as nb
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hamplug import suites
from hamplug.cli import main
from hamplug.config import Config, ConfigError, dump_config, load_config
from hamplug.integrate import Field, integrate
from hamplug.report import (VerificationReport, append_reports, export_trajectory,
                            import_trajectory, read_reports, trajectory_csv)
from hamplug.suites import run_verify


@nb.njit(cache=True)
def _vertical(y, P):
    out = np.zeros(y.shape[0])
    out[-1] = 1.0
    return out


@pytest.fixture(autouse=True)
def run_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("HAMPLUG_RUN_DIR", str(tmp_path / "runs"))
    return tmp_path / "runs"


def test_defaults_valid():
    cfg = load_config()
    assert cfg["geometry.n"] == 3 and cfg["plug.lam"] == 0.5


@pytest.mark.parametrize("override, field", [
    ("geometry.n=2", "geometry.n"),
    ("plug.lam=1.0", "plug.lam"),
    ("trap.a=2", "trap.a"),
    ("tolerances.matching=0", "tolerances.matching"),
    ("host.orbit=7", "host.orbit"),
    ("plug.eps=-1", "plug.eps"),
    ("trap.ell_c=0.1", "trap.ell_c"),
    ("host.mu=2", "host.mu"),
])
def test_invalid_rejected_with_field(override, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        load_config(overrides=[override])


def test_unknown_and_malformed():
    with pytest.raises(ConfigError):
        load_config(overrides=["plug.nope=1"])
    with pytest.raises(ConfigError):
        load_config(overrides=["plug.delta"])
    with pytest.raises(ConfigError):
        load_config(overrides=["geometry.n=3.5"])


def test_file_roundtrip(tmp_path):
    cfg = load_config(overrides=["trap.k=0.03", "run.seed=7"])
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again.as_dict() == cfg.as_dict()
    bad = tmp_path / "bad.ini"
    bad.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_file_then_flags(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[trap]\nk = 0.02\n")
    assert load_config(path, ["trap.k=0.04"])["trap.k"] == 0.04


finite = st.floats(allow_nan=False, allow_infinity=False)


@given(st.dictionaries(st.text("abcxyz_", min_size=1, max_size=8), finite, max_size=5), st.booleans())
def test_report_roundtrip(res, passed):
    r = VerificationReport("s", passed, res, {"seed": 0}, {"list": [1.0, 2.0]}, wall_clock=1.5)
    back = VerificationReport.from_json(json.loads(json.dumps(r.to_json())))
    assert back == r


def test_report_ok_semantics():
    assert VerificationReport("s", True).ok
    assert not VerificationReport("s", False).ok
    assert VerificationReport("s", False, expected_fail=True).ok
    assert VerificationReport("s", False, {"x": 1.0}).line() == "[FAIL] s: x=1.000e+00"


def test_reports_append_only(tmp_path):
    path = tmp_path / "r.jsonl"
    reps = [VerificationReport("a", True), VerificationReport("b", False)]
    append_reports(path, reps)
    append_reports(path, reps)
    assert [r.suite for r in read_reports(path)] == ["a", "b", "a", "b"]


def test_trajectory_export(tmp_path):
    fld = Field(_vertical, [0.0], 5)
    tr = integrate(fld, [0.1, 0.2, 0.3, 0.4, -1.0], 3.0, t_eval=[0.0, 1.0, 2.0, 3.0])
    path = export_trajectory(tr, tmp_path / "a.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,y1,x2,y2,z" and len(lines) == 5
    back = import_trajectory(path)
    np.testing.assert_array_equal(back.y, tr.y)
    again = export_trajectory(back, tmp_path / "b.csv")
    assert again.read_bytes() == path.read_bytes()


def test_trajectory_extra_column():
    text = trajectory_csv([0.0], np.zeros((1, 6)), "u")
    assert text.splitlines()[0] == "t,x1,y1,x2,y2,z,u"


def test_run_verify_selection_and_errors(monkeypatch):
    cfg = load_config()
    with pytest.raises(ValueError):
        run_verify(cfg, ["nope"])

    def boom(cfg):
        raise RuntimeError("broken suite")

    monkeypatch.setitem(suites.RUNNERS, "volume.hiv", boom)
    reps = run_verify(cfg, ["volume.hiv", "plug.boundary"])
    assert [r.suite for r in reps] == ["volume.hiv", "plug.boundary"]
    assert not reps[0].passed and "broken suite" in reps[0].details["error"]
    assert reps[1].passed


def test_seed_changes_samples():
    a = run_verify(load_config(), ["volume.hiv"])[0]
    b = run_verify(load_config(overrides=["run.seed=5"]), ["volume.hiv"])[0]
    assert a.params["seed"] == 0 and b.params["seed"] == 5
    assert a.passed and b.passed


def test_flat_config_expected_fail():
    cfg = load_config(overrides=["trap.a=0", "run.trap_refine=0", "run.t_max=200", "run.trap_probe=50"])
    rep = run_verify(cfg, ["plug.trap"])[0]
    assert rep.expected_fail and not rep.passed and rep.ok
    assert rep.residuals["trapped"] == 0


def test_cli_verify(run_dir, tmp_path, capsys):
    out = tmp_path / "rep.json"
    code = main(["verify", "--suite", "volume.hiv", "--suite", "plug.boundary", "--report", str(out)])
    assert code == 0
    data = json.loads(out.read_text())
    assert [d["suite"] for d in data] == ["volume.hiv", "plug.boundary"]
    assert "wall_clock" not in data[0]
    assert len((run_dir / "reports.jsonl").read_text().splitlines()) == 2
    assert "[PASS] volume.hiv" in capsys.readouterr().out


def test_cli_failure_exit(monkeypatch):
    monkeypatch.setitem(suites.RUNNERS, "plug.boundary", lambda cfg: VerificationReport("x", False))
    assert main(["verify", "--suite", "plug.boundary"]) == 1


def test_cli_config_error(capsys):
    assert main(["verify", "--set", "geometry.n=2"]) == 2
    assert "geometry.n" in capsys.readouterr().err


def test_cli_orbit_and_traverse(run_dir):
    assert main(["orbit", "--start", "0.1,0,0,0,-1", "--T", "2", "--samples", "4"]) == 0
    rows = (run_dir / "orbit.csv").read_text().splitlines()
    assert len(rows) == 6
    assert main(["orbit", "--even", "--start", "0.1,0,0,0,-1,0.2", "--T", "1", "--samples", "2"]) == 0
    assert main(["traverse", "--x", "0.1,0,0.05,0", "--x", "0.7,0,0,0"]) == 0
    recs = (run_dir / "traverse.jsonl").read_text().splitlines()
    assert len(recs) == 2 and json.loads(recs[1])["status"] == "Traversed"


def test_cli_density_check(run_dir):
    assert main(["density-check", "--samples", "200"]) == 0


def test_config_object_direct():
    c = Config()
    c.set("run.seed", 3)
    assert c["run.seed"] == 3


def test_cli_traverse_grid_and_dump(run_dir, tmp_path):
    assert main(["traverse", "--grid", "3", "--tmax", "50", "--dump", str(tmp_path / "d"),
                 "--dump-samples", "20"]) == 0
    recs = (run_dir / "traverse.jsonl").read_text().splitlines()
    dumps = sorted((tmp_path / "d").glob("entry_*.csv"))
    assert len(dumps) == len(recs) > 0
    assert dumps[0].read_text().startswith("t,x1,y1,x2,y2,z\n")


def test_cli_trap_scan_region(run_dir):
    code = main(["trap-scan", "--region", "0.25,0.02,1", "--refine", "0", "--tmax", "100",
                 "--set", "run.trap_probe=50"])
    assert code == 0
    diag = json.loads((run_dir / "trap_scan.json").read_text())
    assert diag["probes"] == 1
    assert main(["trap-scan", "--region", "0.25"]) == 2


def test_cli_insert_demo_flags(run_dir, tmp_path):
    code = main(["insert-demo", "--orbit", "1", "--chart-delta", "0.45", "--chart-eps", "0.55",
                 "--nearby", "1", "--csv", str(tmp_path / "c"), "--csv-samples", "10",
                 "--set", "host.t_max=30"])
    assert code in (0, 1)
    for name in ("pre.csv", "post.csv"):
        assert len((tmp_path / "c" / name).read_text().splitlines()) == 12
    assert main(["insert-demo", "--orbit", "9"]) == 2
