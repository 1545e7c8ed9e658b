import csv
import json
import math

import numpy as np
import pytest

from nodalflow import cli


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def assert_curve_file(path, ncurves):
    header, rows = read_csv(path)
    assert header[0] == "atan_sigma" and len(header) == ncurves + 1
    assert rows[-1][0] == "inf"
    body = np.array([[float(v) for v in r] for r in rows[:-1]])
    assert np.all(np.isfinite(body))
    assert np.all(np.diff(body[:, 0]) > 0)
    for j in range(1, body.shape[1]):
        col = body[:, j]
        assert np.all(np.diff(col) >= -1e-8 * max(1.0, abs(col).max())), header[j]
    return header, body, [float(v) for v in rows[-1][1:]]


# ------------------------------------------------------------------ flow1d

def test_flow1d_k2(tmp_path):
    code, out = run(tmp_path, "flow1d", "--star", "2")
    assert code == 0
    header, body, limits = assert_curve_file(out / "curves.csv", 3)
    assert header[1:] == ["gamma_1", "gamma_2", "gamma_3"]
    assert body[0, 1] == pytest.approx(1, rel=1e-4) and limits[0] == pytest.approx(4, rel=1e-4)
    np.testing.assert_allclose(body[:, 2], 4, rtol=1e-4)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["constant"][:2] == [False, True]
    assert summary["sturm"]["ok"]
    assert summary["metadata"]["sigma_max"] == 1e3


def test_flow1d_k3(tmp_path):
    code, out = run(tmp_path, "flow1d", "--star", "3", "--sigma-count", "21")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["constant"][:3] == [False, False, True]
    np.testing.assert_allclose(summary["limits"][:3], 9, rtol=1e-4)


def test_flow1d_potential_file(tmp_path):
    pot = tmp_path / "q.csv"
    xs = np.linspace(0, math.pi, 50)
    pot.write_text("x,q\n" + "".join(f"{x},{5 * math.cos(2 * x)}\n" for x in xs))
    code, out = run(tmp_path, "flow1d", "--star", "3", "--potential", str(pot), "--sigma-count", "11")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["sturm"]["node_count"] == 2


# -------------------------------------------------------------------- rect

def test_rect_thin(tmp_path):
    code, out = run(tmp_path, "rect", "--alpha", "0.9", "--swap-axes", "--star", "1,3", "--sigma-count", "31")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert (rep["kstar"], rep["nodal_count"], rep["deficiency"], rep["morse_index"]) == (6, 3, 3, 3)
    assert [c["mode"] for c in rep["crossings"]] == [[2, 1], [2, 2], [3, 1]]
    header, _, _ = assert_curve_file(out / "curves.csv", len(read_csv(out / "curves.csv")[0]) - 1)
    assert "gamma_1_3" in header
    assert json.loads((out / "run.json").read_text())["axes"] == "y"


def test_rect_square(tmp_path):
    code, out = run(tmp_path, "rect", "--star", "1,3", "--sigma-count", "21")
    rep = json.loads((out / "report.json").read_text())
    assert code == 0
    assert (rep["deficiency"], rep["multiplicity"], rep["morse_index"]) == (2, 2, 3)
    code, out = run(tmp_path, "rect", "--star", "1,1", "--sigma-count", "21", name="o11")
    rep = json.loads((out / "report.json").read_text())
    assert rep["deficiency"] == 0 and rep["crossings"] == []


def test_report_round_trip(tmp_path, capsys):
    code, out = run(tmp_path, "rect", "--star", "1,3", "--sigma-count", "11")
    original = json.loads((out / "report.json").read_text())
    capsys.readouterr()
    assert cli.main(["report", str(out / "report.json")]) == 0
    parsed = json.loads(capsys.readouterr().out)
    for key in cli.INTEGER_FIELDS:
        assert parsed[key] == original[key]
    assert parsed["errors"] == []


def test_report_detects_inconsistency(tmp_path):
    code, out = run(tmp_path, "rect", "--star", "1,3", "--sigma-count", "11")
    data = json.loads((out / "report.json").read_text())
    data["deficiency"] = 5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert cli.main(["report", str(bad)]) == 3
    (tmp_path / "junk.json").write_text("{}")
    assert cli.main(["report", str(tmp_path / "junk.json")]) == 2


# ------------------------------------------------------------- verify-dtn

def test_verify_dtn_square_22(tmp_path):
    code, out = run(tmp_path, "verify-dtn", "--star", "2,2")
    assert code == 0
    body = json.loads((out / "verify.json").read_text())
    for g in body["grids"]:
        assert (g["schur_morse"], g["crossing_count"], g["lattice_morse"]) == (0, 0, 0)


def test_verify_dtn_thin(tmp_path):
    code, out = run(tmp_path, "verify-dtn", "--alpha", "0.9", "--swap-axes", "--star", "1,3")
    assert code == 0
    body = json.loads((out / "verify.json").read_text())
    assert all(g["agree"] and g["schur_morse"] == 3 for g in body["grids"])


def test_verify_dtn_grid_too_small(tmp_path):
    code, out = run(tmp_path, "verify-dtn", "--star", "2,2", "--grids", "8,16")
    assert code == 2 and not out.exists()


# ---------------------------------------------------------------- lattice

def lattice_marks(out):
    return json.loads((out / "lattice.json").read_text())


def test_lattice_square_13(tmp_path):
    code, out = run(tmp_path, "lattice", "--star", "1,3")
    assert code == 0
    body = lattice_marks(out)
    assert sorted(body["contributing"]) == [[2, 1], [2, 2]]
    assert body["on_ellipse"] == [[3, 1]]
    assert "@" in (out / "lattice.txt").read_text()


def test_lattice_thin(tmp_path):
    code, out = run(tmp_path, "lattice", "--alpha", "0.9", "--swap-axes", "--star", "1,3")
    body = lattice_marks(out)
    assert sorted(body["contributing"]) == [[2, 1], [2, 2], [3, 1]]
    assert body["on_ellipse"] == []
    assert "@" not in (out / "lattice.txt").read_text()


def test_lattice_ground(tmp_path):
    code, out = run(tmp_path, "lattice", "--star", "1,1")
    text = (out / "lattice.txt").read_text()
    assert "*" not in text and "@" not in text


# ------------------------------------------------------- config and errors

def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "rectangle", "alpha": 0.9, "swap_axes": True,
                               "star": [1, 3], "sigma_count": 11}))
    code, out = run(tmp_path, "lattice", "--config", str(cfg))
    assert code == 0
    assert lattice_marks(out)["on_ellipse"] == []


@pytest.mark.parametrize("content", ["{not json", json.dumps({"bogus": 1}), json.dumps([1, 2])])
def test_malformed_config(tmp_path, content):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(content)
    code, out = run(tmp_path, "flow1d", "--config", str(cfg))
    assert code == 2 and not out.exists()


@pytest.mark.parametrize("args", [
    ["flow1d", "--star", "2", "--grid", "4"],
    ["flow1d", "--star", "2", "--potential", "/nonexistent.csv"],
    ["rect", "--star", "1,3", "--alpha", "-1"],
    ["rect", "--star", "0,3"],
    ["rect", "--star", "x"],
])
def test_bad_arguments_exit_2(tmp_path, args):
    code, out = run(tmp_path, *args)
    assert code == 2 and not out.exists()


def test_gap_error_exit_4(tmp_path):
    code, out = run(tmp_path, "verify-dtn", "--star", "1,3", "--grids", "31,63", "--config",
                    str(_write(tmp_path / "c.json", {"align": False})))
    assert code == 4 and not out.exists()


def _write(path, data):
    path.write_text(json.dumps(data))
    return path


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("NODALFLOW_THREADS", "1")
    code, out = run(tmp_path, "rect", "--star", "2,2", "--sigma-count", "11")
    assert code == 0
