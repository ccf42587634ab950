import hashlib
import json
import os

import numpy as np
import pytest

from fracma.cli import blob_hash, main

SMALL = """\
[problem]
dim = 2
s = 0.75
cone_matrix = 1 0; 0 1

[grid]
box_radius = 8.0
n_nodes = 24

[family]
rotations = 16
eig_levels = 4
coarse_factor = 2

[solver]
stages = 2
{extra}
[run]
seed = 3
"""


def write_config(path, extra="", check=""):
    text = SMALL.format(extra=extra) + (f"\n[check]\n{check}\n" if check else "")
    path.write_text(text)
    return str(path)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "small.ini")
    out = root / "out"
    code = main(["solve", "--config", cfg, "--out", str(out)])
    return root, cfg, out, code


def test_solve_outputs(solved):
    root, cfg, out, code = solved
    assert code == 0
    for name in ("barrier.csv", "solution.csv", "u.csv", "u.json", "report.json",
                 "manifest.json"):
        assert (out / name).exists(), name
    report = read_json(out / "report.json")
    assert report["residual"] <= 1e-3 and report["converged"] is True
    header = (out / "solution.csv").read_text().splitlines()[0].split(",")
    assert header == ["x0", "x1", "u", "phi", "u_minus_phi", "residual", "residual_dense",
                      "argmin_lambda_min"]
    assert (out / "barrier.csv").read_text().splitlines()[0] == "r,w1,barrier_offset"


def test_manifest(solved):
    root, cfg, out, code = solved
    man = read_json(out / "manifest.json")
    data = open(cfg, "rb").read()
    assert man["exit_code"] == 0 and man["seed"] == 3 and man["command"] == "solve"
    assert man["config_snapshot"] == data.decode()
    # independent git blob hash
    expect = hashlib.sha1(b"blob " + str(len(data)).encode() + b"\x00" + data).hexdigest()
    assert man["config_hash"] == expect == blob_hash(data)
    assert man["outputs"] and all(os.path.exists(p) for p in man["outputs"])


def test_solve_is_bit_reproducible(solved, tmp_path):
    root, cfg, out, code = solved
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    for name in ("solution.csv", "u.csv", "barrier.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


@pytest.mark.parametrize("name", ["comparison", "regularity", "positivity", "ellipticity"])
def test_checks_on_solution(solved, tmp_path, name):
    root, cfg, out, code = solved
    check_cfg = write_config(root / f"check_{name}.ini",
                             check=f"solution = out/u.csv\nsub = phi\nsuper = barrier\n"
                                   "samples = 40")
    code = main(["check", name, "--config", check_cfg, "--out", str(tmp_path)])
    report = read_json(tmp_path / f"check_{name}.json")
    assert code == 0 and report["passed"], report


def test_comparison_out_of_contract_exit(solved, tmp_path):
    root, cfg, out, code = solved
    # the barrier is not a subsolution
    bad = write_config(root / "swap.ini", check="sub = barrier\nsuper = phi\nsamples = 40")
    assert main(["check", "comparison", "--config", bad, "--out", str(tmp_path)]) == 2
    res = read_json(tmp_path / "check_comparison.json")["checks"]["comparison"]
    assert res["status"] == "out-of-contract"


def test_audit_checks(tmp_path):
    cfg = write_config(tmp_path / "a.ini", check="count_2d = 5\ncount_3d = 2\neps_count = 2")
    assert main(["check", "appendixA", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["check", "appendixB", "--config", cfg, "--out", str(tmp_path)]) == 0


def test_missing_solution_exit(tmp_path):
    cfg = write_config(tmp_path / "c.ini", check="solution = nowhere.csv")
    assert main(["check", "regularity", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_nonconvergence_exit(tmp_path, capsys):
    cfg = write_config(tmp_path / "n.ini", extra="max_iter = 1\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 2
    report = read_json(tmp_path / "report.json")
    assert report["converged"] is False and report["residual"] > 1e-3
    assert read_json(tmp_path / "manifest.json")["exit_code"] == 2


@pytest.mark.parametrize("extra, needle", [
    ("", "s = 0.4"),
    ("bogus = 1\n", "bogus"),
])
def test_config_errors_point_at_line(tmp_path, capsys, extra, needle):
    text = SMALL.format(extra=extra)
    if needle == "s = 0.4":
        text = text.replace("s = 0.75", "s = 0.4")
    path = tmp_path / "bad.ini"
    path.write_text(text)
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    line = next(i for i, l in enumerate(text.splitlines(), 1) if l.startswith(needle.split()[0]
                                                                             + " ="))
    assert f"bad.ini:{line}:" in err


def test_unknown_section(tmp_path):
    path = tmp_path / "u.ini"
    path.write_text("[nonsense]\nx = 1\n")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == 1


def test_limit_sweep(tmp_path):
    cfg = tmp_path / "l.ini"
    cfg.write_text("[problem]\ndim = 2\n[limit]\nfunction = affine\nbox_radius = 4.0\n"
                   "spacing = 0.1\n")
    assert main(["limit-sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = np.loadtxt(tmp_path / "limit.csv", delimiter=",", skiprows=1)
    assert rows.shape == (3, 2) and np.abs(rows[:, 1]).max() <= 1e-10
    cfg.write_text("[limit]\nfunction = nope\n")
    assert main(["limit-sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_eval_op(tmp_path, capsys):
    assert main(["eval-op", "--x", "0.5,0.25", "--out", str(tmp_path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["value"] > 0 and payload["argmin_lambda_min"] >= 0.25
    assert read_json(tmp_path / "eval_op.json")["value"] == payload["value"]
    assert main(["eval-op", "--x", "0.5", "--out", str(tmp_path)]) == 1
    assert main(["eval-op", "--x", "0,0", "--s", "1.2", "--out", str(tmp_path)]) == 1


def test_argument_errors(tmp_path):
    assert main(["solve", "--out", str(tmp_path)]) == 1
    cfg = write_config(tmp_path / "s.ini")
    assert main(["solve", "--config", cfg, "--seed", "-4", "--out", str(tmp_path)]) == 1
