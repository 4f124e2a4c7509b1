import json
import subprocess
import sys

import pytest

from fibered import cli
from fibered import scenarios as sc
from fibered.errors import ConfigError


def test_list_all(capsys):
    assert cli.main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) >= 7
    ids = [l.split("\t")[0] for l in lines]
    for sid in ("blwz-1d", "blwz-2d-fibered", "allen-cahn-kink", "p-laplacian-minimizer", "abg-counterexample",
                "manufactured-identity", "growth-and-cutoff"):
        assert sid in ids
    assert all(l.split("\t")[2].startswith("[") for l in lines)


def test_list_appendix_tag(capsys):
    assert cli.main(["list", "--tag", "appendix"]) == 0
    ids = sorted(l.split("\t")[0] for l in capsys.readouterr().out.strip().splitlines())
    assert ids == ["abg-counterexample", "p-laplacian-minimizer"]


def test_list_unknown_tag(capsys):
    assert cli.main(["list", "--tag", "no-such-tag"]) == 0
    assert capsys.readouterr().out == ""


@pytest.mark.parametrize("cfg, pointer", [
    ({"scenario": "nope"}, "/scenario"),
    ({"scenario": "blwz-1d", "seed": -1}, "/seed"),
    ({"scenario": "blwz-1d", "extra": 1}, "/"),
    ({"scenario": "blwz-1d", "params": {"L": "long"}}, "/params/L"),
    ({"scenario": "blwz-1d", "params": {"bogus": 1}}, "/params/bogus"),
    ({"scenario": "blwz-1d", "diagnostics": {"select": ["nothing"]}}, "/diagnostics/select/0"),
    ({"scenario": "blwz-1d", "diagnostics": {"tolerances": {"nothing": 1.0}}}, "/diagnostics/tolerances/nothing"),
])
def test_malformed_config(tmp_path, capsys, cfg, pointer):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["run", "--config", str(path)]) == 2
    assert f"{pointer}:" in capsys.readouterr().err


def test_unparseable_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("{not json")
    assert cli.main(["run", "--config", str(path)]) == 2


def test_manufactured_identity_run(tmp_path, capsys):
    assert cli.main(["run", "--scenario", "manufactured-identity", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "manufactured-identity\tRESULT\tpass" in out
    report = json.loads((tmp_path / "report.json").read_text())
    assert {d["name"] for d in report["diagnostics"]} == {"identities", "nonnegativity", "fd-refinement",
                                                         "sphere-curvature"}
    for rel in report["manifest"]:
        assert (tmp_path / rel).exists()


def test_abg_expected_failures():
    rep = cli.run({"scenario": "abg-counterexample"})
    by_name = {d["name"]: d for d in rep.diagnostics}
    assert by_name["abg-audit"]["outcome"] == "pass"
    for name in ("sign-hypothesis[+1,+1]", "sign-hypothesis[+1,-1]"):
        assert by_name[name]["verdict"] == "fail" and by_name[name]["outcome"] == "pass"
    assert not rep.failed


def test_select_and_tolerance_override():
    rep = cli.run({"scenario": "blwz-2d-fibered", "diagnostics": {"select": ["derived-residual"],
                                                                  "tolerances": {"derived-residual": 1e-30}}})
    assert [d["name"] for d in rep.diagnostics] == ["derived-residual"]
    assert rep.diagnostics[0]["verdict"] == "fail"


def test_digest_ignores_threads_and_out_dir(tmp_path):
    a = cli.run({"scenario": "blwz-2d-fibered", "seed": 5, "threads": 1, "out": str(tmp_path / "a")})
    b = cli.run({"scenario": "blwz-2d-fibered", "seed": 5, "threads": 4, "out": str(tmp_path / "b")})
    assert a.digest == b.digest
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    for r in (ra, rb):
        r.pop("timings")
        r["config"].pop("out", None)
    assert ra == rb


def test_seed_changes_digest():
    a = cli.run({"scenario": "manufactured-identity", "seed": 1})
    b = cli.run({"scenario": "manufactured-identity", "seed": 2})
    assert a.digest != b.digest


def test_resolve_params_type_check():
    s = sc.REGISTRY["blwz-1d"]
    assert sc.resolve_params(s, {"L": 20})["L"] == 20
    with pytest.raises(ConfigError):
        sc.resolve_params(s, {"L": [1]})


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "fibered", "list"], capture_output=True, text=True, check=True)
    assert "blwz-1d" in out.stdout
