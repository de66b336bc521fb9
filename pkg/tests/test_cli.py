import csv
import io
import json
import math
import subprocess
import sys

import pytest

from nslab import limit_at_infinity
from nslab.cli import EXIT_CONFIG, EXIT_GEOMETRY, main, verify_record


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out), err


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(path)


def test_stability_centred_at_zero_is_one_third(capsys):
    rec, _ = run_json(capsys, "stability", "--rho", "0", "--samples", "200000")
    mc = rec["results"]["mc"]
    assert abs(mc["value"] - 1 / 3) <= 4 * mc["std_error"]
    assert "quadrature" not in rec["results"]
    assert verify_record(rec)


def test_stability_half_planes(capsys, tmp_path):
    cfg = write(tmp_path, "c.json", {"partition": {"n": 2, "k": 2, "shift": [0, 0],
                                                    "directions": [[1, 0], [-1, 0]]}})
    rec, _ = run_json(capsys, "stability", "--config", cfg, "--samples", "200000")
    assert abs(rec["results"]["quadrature"]["value"] - 2 / 3) < 1e-6
    mc = rec["results"]["mc"]
    assert abs(mc["value"] - 2 / 3) <= 4 * mc["std_error"]


def test_malformed_json_reports_position(capsys, tmp_path):
    cfg = write(tmp_path, "bad.json", '{"rho": 0.5,\n  "seed": }')
    code, out, err = run(capsys, "stability", "--config", cfg)
    assert code == EXIT_CONFIG and out == ""
    assert "line 2" in err and "column" in err


@pytest.mark.parametrize("argv", [
    ["stability", "--rho", "1.0"],
    ["stability", "--samples", "10"],
    ["improve", "--rho", "0"],
    ["plurality", "--rho", "-0.2"],
])
def test_invalid_values_exit_two(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == EXIT_CONFIG and "config error" in err


def test_unknown_key_and_bad_partition(capsys, tmp_path):
    code, _, err = run(capsys, "stability", "--config", write(tmp_path, "a.json", {"rhoo": 0.5}))
    assert code == EXIT_CONFIG and "rhoo" in err
    bad = {"partition": {"n": 2, "shift": [0, 0], "directions": [[1, 0], [2, 0]]}}
    code, _, _ = run(capsys, "stability", "--config", write(tmp_path, "b.json", bad))
    assert code == EXIT_CONFIG


def test_non_adjacent_pair_exits_three(capsys, tmp_path):
    cfg = write(tmp_path, "p.json", {"partition": {"n": 2, "k": 3, "shift": [0, 0],
                                                    "directions": [[1, 0], [0, 0.5], [-1, 1]]},
                                      "pair": [0, 1]})
    code, out, err = run(capsys, "limits", "--config", cfg)
    assert code == EXIT_GEOMETRY and out == "" and "not facet-adjacent" in err


def test_limits_centred_plateaus(capsys):
    rec, _ = run_json(capsys, "limits")
    r = rec["results"]
    assert abs(r["c"]) < 1e-12
    assert abs(r["plateau_low"]) <= 1e-6 and abs(r["plateau_high"]) <= 1e-6


def test_limits_shifted_facet(capsys, tmp_path):
    # move the (0, 1) facet to offset c = 1 along its normal
    d = [[1.0, 0.0], [-0.5, math.sqrt(3) / 2], [-0.5, -math.sqrt(3) / 2]]
    nx, ny = d[1][0] - d[0][0], d[1][1] - d[0][1]
    s = math.hypot(nx, ny)
    part = {"n": 2, "k": 3, "shift": [nx / s, ny / s], "directions": d}
    cfg = write(tmp_path, "p.json", {"partition": part})
    rec, _ = run_json(capsys, "limits", "--config", cfg)
    r = rec["results"]
    assert abs(r["c"] - 1.0) < 1e-12
    assert abs(r["plateau_high"] - limit_at_infinity(1.0, 0.5)) < 1e-4
    assert abs(r["plateau_low"]) < 1e-4
    rec, _ = run_json(capsys, "limits", "--config", cfg, "--rho", "-0.5")
    r = rec["results"]
    assert abs(r["plateau_low"] - r["limit_minus_inf"]) < 1e-4 and abs(r["limit_minus_inf"]) > 0.1
    assert abs(r["plateau_high"]) < 1e-4


def test_limits_csv_curve(capsys):
    code, out, _ = run(capsys, "limits", "--format", "csv")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["t", "value"] and len(rows) == 514
    assert float(rows[1][0]) == -50.0 and float(rows[-1][0]) == 50.0


def test_improve_centred_reports_nothing(capsys, tmp_path):
    cfg = write(tmp_path, "c.json", {"partition": {"n": 2, "k": 3, "shift": [0, 0],
                                                    "directions": [[1, 0], [-0.5, 0.8660254037844386],
                                                                   [-0.5, -0.8660254037844386]]}})
    code, out, err = run(capsys, "improve", "--config", cfg, "--samples", "10000")
    assert code == 0 and "no improving direction detected" in err
    assert "improved" not in json.loads(out)["results"]


def test_improve_shifted(capsys):
    rec, _ = run_json(capsys, "improve", "--samples", "100000")
    r = rec["results"]
    assert r["improved"] > r["baseline"] and r["margin_se"] > 3


def test_plurality_single_voter(capsys, tmp_path):
    cfg = write(tmp_path, "c.json", {"n": 1, "alpha": 0.0, "beta": 0.0})
    rec, err = run_json(capsys, "plurality", "--config", cfg, "--samples", "10000")
    assert "warning" in err
    r = rec["results"]
    assert abs(r["plurality_exact"] - 2 / 3) < 1e-15
    assert r["crn_gap"] == 0.0


def test_bilinear(capsys, tmp_path):
    cfg = write(tmp_path, "c.json", {"challengers": 2})
    rec, _ = run_json(capsys, "bilinear", "--config", cfg, "--rho", "0", "--samples", "100000")
    r = rec["results"]
    assert abs(r["closed_form"] - 1 / 3) < 1e-12
    bad = write(tmp_path, "d.json", {"a": [0.5, 0.5, 0.0]})
    code, _, _ = run(capsys, "bilinear", "--config", bad)
    assert code == EXIT_CONFIG


def test_record_replay_and_digest(capsys, tmp_path):
    first = tmp_path / "first.json"
    assert main(["stability", "--samples", "50000", "--seed", "7", "--out", str(first)]) == 0
    capsys.readouterr()
    rec = json.loads(first.read_text())
    assert set(rec) == {"command", "config", "results", "version", "digest", "timestamps"}
    assert verify_record(rec)
    again, _ = run_json(capsys, "stability", "--config", str(first))
    assert again["digest"] == rec["digest"]
    assert json.dumps(again["results"], sort_keys=True) == json.dumps(rec["results"], sort_keys=True)
    rec["results"]["mc"]["value"] += 1e-12
    assert not verify_record(rec)
    code, _, err = run(capsys, "volumes", "--config", str(first))
    assert code == EXIT_CONFIG and "record is for command" in err


def test_thread_count_invariance(capsys, monkeypatch):
    monkeypatch.setenv("NS_LAB_THREADS", "1")
    a, _ = run_json(capsys, "volumes", "--samples", str(2**21 + 5))
    monkeypatch.setenv("NS_LAB_THREADS", "3")
    b, _ = run_json(capsys, "volumes", "--samples", str(2**21 + 5))
    assert a["digest"] == b["digest"]


def test_volumes_csv(capsys):
    code, out, _ = run(capsys, "volumes", "--format", "csv")
    assert code == 0
    rows = dict(list(csv.reader(io.StringIO(out)))[1:])
    assert any(k.startswith("exact") for k in rows)


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "nslab.cli", "volumes", "--samples", "1000"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert verify_record(json.loads(proc.stdout))
