import csv
import json
import subprocess
import sys
from pathlib import Path
from xml.etree import ElementTree

import pytest

from conftest import make_instance
from mcbap.cli import main
from mcbap.instgen import read_instance, read_solution, write_instance, write_solution
from mcbap.model import Assignment, Solution


@pytest.fixture
def one(tmp_path):
    assert main(["generate", "--ships", "4", "--external", "2", "--segment", "40", "--seed", "3",
                 "--out", str(tmp_path / "b")]) == 0
    return tmp_path / "b" / "4_2_40" / "seed3.json"


def test_generate_single_name(tmp_path, capsys):
    assert main(["generate", "--ships", "30", "--external", "10", "--segment", "10", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "30_10_10" / "seed1.json").exists()
    assert main(["generate", "--ships", "30", "--external", "10", "--segment", "10", "--seed", "1",
                 "--out", str(tmp_path)]) == 3


def test_generate_grid_main(tmp_path):
    assert main(["generate", "--grid", "main", "--out", str(tmp_path)]) == 0
    files = list((tmp_path / "main").glob("*/seed*.json"))
    assert len(files) == 240
    assert main(["generate", "--grid", "main", "--out", str(tmp_path)]) == 3
    assert main(["generate", "--grid", "main", "--out", str(tmp_path), "--force"]) == 0


def test_generate_bad_params(tmp_path):
    assert main(["generate", "--out", str(tmp_path)]) == 4
    assert main(["generate", "--ships", "0", "--out", str(tmp_path)]) == 4


def test_solve_writes_artifacts_and_reruns(one, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", str(one), "--time-limit", "5", "--max-iterations", "20", "--seed", "4",
                 "--out", str(out)]) == 0
    for name in ("manifest.json", "solution.json", "trace.csv", "operators.csv", "summary.json"):
        assert (out / name).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["params"]["seed"] == 4 and man["params"]["time_limit"] == 5
    out2 = tmp_path / "rerun"
    assert main(["solve", "--manifest", str(out / "manifest.json"), "--out", str(out2)]) == 0
    a = json.loads((out / "summary.json").read_text())["best_found"]
    b = json.loads((out2 / "summary.json").read_text())["best_found"]
    assert a == b
    assert (out / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    header = next(csv.reader(open(out / "trace.csv")))
    assert header == ["time", "iteration", "current", "best", "temperature", "removal", "insertion", "outcome"]


def test_solve_repeats_and_variant(one, tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["solve", str(one), "--time-limit", "5", "--max-iterations", "10", "--repeats", "3",
                 "--variant", "lns", "--ls-policy", "off", "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert [r["seed"] for r in s["runs"]] == [0, 1, 2]
    assert s["gap_best"] == 0.0 and s["gap_worst"] >= s["gap_avg"] >= 0
    assert "gap to best found" in capsys.readouterr().out
    ops = list(csv.DictReader(open(out / "run0" / "operators.csv")))
    assert {float(r["probability"]) for r in ops} == {0.25}


def test_solve_param_range(one, tmp_path):
    assert main(["solve", str(one), "--param", "lam=0.9", "--out", str(tmp_path / "x")]) == 4
    assert main(["solve", str(one), "--param", "lam=0.9", "--unsafe", "--time-limit", "1",
                 "--max-iterations", "2", "--out", str(tmp_path / "y")]) == 0
    assert main(["solve", str(one), "--param", "bogus=1", "--out", str(tmp_path / "z")]) == 4
    assert main(["solve", str(tmp_path / "missing.json"), "--out", str(tmp_path / "w")]) == 3


def test_evaluate_exit_codes(tmp_path, capsys):
    inst = make_instance([(1, "A", 0, 0, 5), (2, "A", 0, 0, 5)])
    ip = write_instance(inst, tmp_path / "i.json")
    good = write_solution(inst, Solution({0: Assignment(0, 0, 0), 1: Assignment(1, 50, 0)}), tmp_path / "g.json")
    bad = write_solution(inst, Solution({0: Assignment(0, 0, 0), 1: Assignment(1, 20, 0)}), tmp_path / "b.json")
    assert main(["evaluate", str(ip), str(good), "--best", "9000"]) == 0
    out = capsys.readouterr().out
    # second ship sits 50 m off its ideal spot: 10250 handling + 500 delay
    assert "10750.00" in out and "0.194444" in out  # (10750 - 9000) / 9000
    assert main(["evaluate", str(ip), str(bad)]) == 2
    assert "violation overlap" in capsys.readouterr().out
    (tmp_path / "t.json").write_text("{")
    assert main(["evaluate", str(ip), str(tmp_path / "t.json")]) == 3


def test_evaluate_construction_output(one, tmp_path):
    out = tmp_path / "r"
    assert main(["solve", str(one), "--time-limit", "0", "--out", str(out)]) == 0
    assert main(["evaluate", str(one), str(out / "solution.json")]) == 0


def test_plot(tmp_path, capsys):
    calls = [(s, "A", 25 * (s - 1), 0, 4) for s in range(1, 5)]
    inst = make_instance(calls, ships={s: 25 for s in range(1, 5)})
    ip = write_instance(inst, tmp_path / "i.json")
    sol = Solution({c: Assignment(c, 25 * c, 0) for c in range(4)})
    sp = write_solution(inst, sol, tmp_path / "s.json")
    assert main(["plot", str(ip), str(sp), "--out", str(tmp_path / "p")]) == 0
    root = ElementTree.parse(tmp_path / "p" / "A.svg").getroot()
    ns = "{http://www.w3.org/2000/svg}"
    rects = [r for r in root.iter(ns + "rect") if r.get("class") == "call"]
    assert len(rects) == 4
    boxes = [(float(r.get("x")), float(r.get("x")) + float(r.get("width"))) for r in rects]
    boxes.sort()
    assert all(a[1] <= b[0] + 1e-6 for a, b in zip(boxes, boxes[1:]))
    assert main(["plot", str(ip), "--out", str(tmp_path / "e")]) == 0
    empty = ElementTree.parse(tmp_path / "e" / "A.svg").getroot()
    assert not [r for r in empty.iter(ns + "rect") if r.get("class") == "call"]
    assert "href" not in (tmp_path / "e" / "A.svg").read_text()


def test_export_mip(tmp_path, capsys):
    inst = make_instance([(1, "A", 10, 0, 5)])
    ip = write_instance(inst, tmp_path / "i.json")
    sp = write_solution(inst, Solution({0: Assignment(0, 10, 0)}), tmp_path / "s.json")
    assert main(["export-mip", str(ip), "--out", str(tmp_path / "m.lp"), "--check", str(sp)]) == 0
    assert "violated 0" in capsys.readouterr().out
    sp2 = write_solution(inst, Solution({0: Assignment(0, 10, 200)}), tmp_path / "s2.json")
    assert main(["export-mip", str(ip), "--out", str(tmp_path / "m.lp"), "--check", str(sp2)]) == 2


def test_bench(tmp_path, monkeypatch):
    monkeypatch.setenv("MCBAP_DATA_DIR", str(tmp_path / "data"))
    for seed in (1, 2):
        assert main(["generate", "--ships", "3", "--external", "2", "--segment", "80", "--seed", str(seed)]) == 0
    assert main(["bench", "--root", str(tmp_path / "data"), "--time-limit", "2", "--max-iterations", "5",
                 "--repeats", "2", "--out", str(tmp_path / "res.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "res.csv")))
    assert [r["group"] for r in rows] == ["3_2_80"]
    assert rows[0]["instances"] == "2" and rows[0]["runs"] == "4"
    assert float(rows[0]["gap_best"]) == 0.0
    assert (tmp_path / "res_runs.csv").exists() and (tmp_path / "res_manifest.json").exists()


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mcbap.cli", "generate", "--ships", "2", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert read_instance(Path(r.stdout.strip())).n_calls >= 2
