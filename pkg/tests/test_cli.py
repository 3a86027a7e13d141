import json

import pytest

from smoothcolloc.cli import main
from smoothcolloc.errors import CSV_HEADER
from smoothcolloc.geometry import dump_domain, get_domain


def _lines(capsys):
    return capsys.readouterr().out.splitlines()


def test_points_superconvergent(capsys):
    assert main(["points", "--p", "9", "--r", "4", "--k", "4", "--family", "superconvergent"]) == 0
    out = _lines(capsys)
    assert out[0].endswith("count=30")
    rows = out[1:]
    assert len(rows) == 30
    assert sum(r.endswith("removed-adjacent") for r in rows) == 2


def test_points_coarse_cases(capsys):
    assert main(["points", "--k", "0", "--family", "superconvergent"]) == 0
    assert len(_lines(capsys)) == 11
    assert main(["points", "--k", "1", "--family", "superconvergent"]) == 0
    assert any(r.split()[1] == "0.5" for r in _lines(capsys)[1:])


def test_points_unsupported(capsys):
    assert main(["points", "--p", "6", "--r", "2", "--k", "1", "--family", "superconvergent"]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["points", "--k", "1", "--family", "gauss"]) == 2


@pytest.mark.parametrize("args,dim", [
    (["--domain", "one-patch", "--k", "3"], 625),
    (["--domain", "l-shape", "--smoothness", "3", "--p", "8", "--r", "3", "--k", "3"], 1014),
])
def test_space(capsys, args, dim):
    assert main(["space"] + args) == 0
    out = _lines(capsys)
    assert f"dim={dim}" in out


def test_space_bad_combination(capsys):
    assert main(["space", "--domain", "three-patch", "--smoothness", "3", "--k", "3"]) == 2
    assert main(["space", "--p", "8", "--r", "4", "--k", "3"]) == 2


def test_solve_square(capsys, tmp_path):
    assert main(["solve", "--domain", "one-patch", "--k", "3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "matrix 625 x 625 (square)" in out
    csv = (tmp_path / "solve_one-patch_greville_k3.csv").read_text().splitlines()
    assert csv[0] == CSV_HEADER and len(csv) == 2


def test_solve_bad_domain(tmp_path, capsys):
    assert main(["solve", "--domain", str(tmp_path / "missing.json"), "--k", "3",
                 "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--domain", str(bad), "--k", "3", "--out", str(tmp_path)]) == 2
    assert not list(tmp_path.glob("*.csv"))


def test_solve_domain_file(tmp_path, capsys):
    f = tmp_path / "dom.json"
    f.write_text(dump_domain(get_domain("three-patch")))
    assert main(["solve", "--domain", str(f), "--k", "3", "--dump", "--no-condition",
                 "--out", str(tmp_path)]) == 0
    assert "matrix 1795 x 1309" in capsys.readouterr().out
    assert len(list(tmp_path.glob("solve_*"))) == 3


def test_solve_polynomial_solution(tmp_path, capsys):
    c = tmp_path / "c.json"
    C = [[0.0] * 5 for _ in range(5)]
    C[0][0], C[2][2], C[4][0], C[1][3] = 1.0, 1e-3, 2e-4, -3e-4
    c.write_text(json.dumps(C))
    assert main(["solve", "--k", "2", "--solution", f"poly:{c}", "--out", str(tmp_path)]) == 0
    assert "eL2" in capsys.readouterr().out
    # a quadratic has no third derivatives, so relative H3 errors are undefined
    c.write_text(json.dumps([[1.0, 0.0, 0.01], [0.0, 0.02, 0.0], [0.01, 0.0, 0.0]]))
    assert main(["solve", "--k", "2", "--solution", f"poly:{c}", "--out", str(tmp_path)]) == 2
    assert not list(tmp_path.glob("solve_*"))


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["study", "--levels", "4,x"]) == 2
    assert main(["solve", "--k", "3", "--family", "both"]) == 2


def test_thread_env(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("SMOOTHCOLLOC_THREADS", "many")
    assert main(["points", "--k", "1"]) == 2
    monkeypatch.setenv("SMOOTHCOLLOC_THREADS", "1")
    assert main(["points", "--k", "1"]) == 0


def test_study_files_and_determinism(tmp_path, capsys):
    args = ["study", "--domain", "one-patch", "--levels", "2,4,8", "--family", "both"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs == ["study_one-patch_greville.csv", "study_one-patch_plot.csv",
                    "study_one-patch_superconvergent.csv"]
    rows = 0
    for name in csvs:
        assert (a / name).read_bytes() == (b / name).read_bytes()
        if not name.endswith("plot.csv"):
            lines = (a / name).read_text().splitlines()
            assert lines[0] == CSV_HEADER
            rows += len(lines) - 1
    assert rows == 6
    plot = (a / "study_one-patch_plot.csv").read_text().splitlines()
    assert plot[0].startswith("family,log2h,") and len(plot) == 7
