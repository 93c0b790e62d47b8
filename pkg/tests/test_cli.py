import math
import subprocess
import sys

import pytest

from lpjacobi.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_schedule_window(capsys):
    code, out, _ = run(capsys, "schedule", "--c1", "1", "--eta", "8")
    assert code == 0
    assert out.splitlines()[0] == "window (5, 5.8) eta0=5.4"
    assert "PASS gamma-check n=0" in out


def test_schedule_empty_window_fails(capsys):
    code, _, err = run(capsys, "schedule", "--c1", "1", "--eta", "7")
    assert code == 1 and "eta > 7" in err


@pytest.mark.parametrize("argv", [["schedule", "--c1", "1"], ["schedule", "--c1", "x", "--eta", "8"],
                                  ["nope"], ["bands"]])
def test_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_transport_csv_running_beta(capsys, tmp_path):
    out = tmp_path / "free.csv"
    code, stdout, _ = run(capsys, "transport", "--free", "4", "--p", "2", "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,moment_p,running_beta,residual" and len(lines) == 41
    t, _, beta, _ = map(float, lines[-1].split(","))
    assert t == 50.0
    assert beta == pytest.approx(math.log(5001) / (2 * math.log(50)), rel=1e-9)
    assert "INFO running_beta_final=" in stdout


def test_transport_expect_beta_uses_fit(capsys):
    code, out, _ = run(capsys, "transport", "--free", "4", "--expect-beta", "1", "--out", "-")
    assert code == 0 and "PASS fit-beta" in out


def test_json_lines(capsys, tmp_path):
    out = tmp_path / "s.jsonl"
    assert run(capsys, "schedule", "--c1", "1", "--eta", "8", "--format", "json-lines",
               "--out", str(out))[0] == 0
    import json

    row = json.loads(out.read_text().splitlines()[0])
    assert row["q_n"] == 4 and row["gamma_next"] < row["eps_tilde"]


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[common]\nformat = csv\n[schedule]\nc1 = 1\neta = 8\n")
    code, out, _ = run(capsys, "schedule", "--config", str(cfg))
    assert code == 0 and out.startswith("window (5, 5.8)")


def test_config_unknown_field_names_line(capsys, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[schedule]\nc1 = 1\nbogus = 3\n")
    code, _, err = run(capsys, "schedule", "--config", str(cfg))
    assert code == 2 and "line 3" in err and "bogus" in err


def test_missing_config(capsys, tmp_path):
    assert run(capsys, "schedule", "--config", str(tmp_path / "none.ini"))[0] == 2


def test_bands_and_badset(capsys):
    code, out, _ = run(capsys, "bands", "--free", "4", "--grid", "8")
    assert code == 0 and out.splitlines()[0] == "theta,k,lambda,slope,gap_to_next"
    code, out, _ = run(capsys, "badset", "--free", "4", "--eps", "1e-2,1e-4")
    assert code == 0 and "PASS lemma-bound" in out


def test_ec_build_round_trip(capsys, tmp_path):
    fam = tmp_path / "fam.json"
    assert run(capsys, "ec-build", "--eta", "2", "--q", "4,8", "--seed", "1", "--out", str(fam))[0] == 0
    code, out, _ = run(capsys, "qcheck", "--family", str(fam))
    assert code == 0 and "PASS kernel n=1" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lpjacobi", "schedule", "--c1", "1", "--eta", "8"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("window (5, 5.8)")
