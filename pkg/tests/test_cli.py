import json

import pytest

from euler_implosion.cli import EX_USAGE, cli_main
from euler_implosion.params import ParamSet, params_from_R

from conftest import R25


def run(argv):
    lines = []
    code = cli_main(argv, out=lines.append)
    return code, lines


def test_params_R9(tmp_path):
    code, lines = run(["params", "--R", "9", "--out", str(tmp_path)])
    assert code == 0
    assert "alpha = 0.25" in lines
    assert "delta = 0.5" in lines


def test_params_json_round_trip(tmp_path):
    code, _ = run(["params", "--R", "25.5", "--out", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "params.json").read_text())
    p = ParamSet.from_dict(doc["constants"]["params"])
    assert p == params_from_R("25.5", prec=p.prec)
    assert doc["config"]["command"] == "params"
    assert "version" in doc


def test_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        cli_main(["params", "--R", "9", "--r", "1.2"])
    assert e.value.code == EX_USAGE
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "USAGE"


def test_domain_error(capsys):
    code, _ = run(["params", "--r", "2.0"])
    assert code == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "OUT_OF_RANGE"


def test_shoot_even_N(capsys):
    code, _ = run(["shoot", "--N", "24"])
    assert code == 1


def test_series_output_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["series", "--R", "25.5", "--K", "40", "--out", str(d)])[0] == 0
    assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()
    assert (a / "series.json").read_bytes().replace(b"/a", b"/b") == (b / "series.json").read_bytes()


def test_sinfty_checkpoint(tmp_path):
    ck = tmp_path / "ck.npz"
    code, lines = run(["sinfty", "--K", "2000", "--checkpoint", str(ck), "--out", str(tmp_path)])
    assert ck.exists()
    verdict = lines[-1].split(":")[0]
    assert (code, verdict) in ((0, "PASS"), (2, "FAIL"))
    code2, lines2 = run(["sinfty", "--K", "2000", "--checkpoint", str(ck), "--out", str(tmp_path / "again")])
    assert lines2 == lines and code2 == code


def test_export(tmp_path):
    code, _ = run(["export", "--R", "25.5", "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "portrait" / "special_points.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:7]] == ["P1", "P2", "P3", "P4", "P5", "P5p"]


def test_verify_known_root(tmp_path):
    code, lines = run(["verify", "--R", R25, "--N", "25", "--samples", "256", "--out", str(tmp_path)])
    assert code == 0 and lines[-1] == "PASS"
    doc = json.loads((tmp_path / "verify_N25.json").read_text())
    assert doc["constants"]["ok"] is True


def test_profile_csv(tmp_path):
    code, _ = run(["profile", "--R", R25, "--N", "25", "--out", str(tmp_path)])
    assert code == 0
    head = (tmp_path / "profile_N25.csv").read_text().splitlines()[0]
    assert head == "x,sigma,w,sigma_prime,w_prime,Z,U_E,S_E,margin_ii,margin_iii"
