import json
import os

import pytest

from svolterra import cli

CONFIG = """\
[classify]
kernel = circle
params = 0.5

[resolvent]
kernel = circle
params = 1.0
N = 32

[volterra]
kernel = constant
params = 1.0
N = 32
seed_function = one
g = 1.0

[sde]
scenario = ou-mild
N = 16
paths = 200

[fbm]
H = 0.7
N = 16
paths = 200
seed = 11
"""


def _csv_rows(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return lines[0], lines[1], [ln.split(",") for ln in lines[2:]]


def test_classify_circle_half(tmp_path):
    code, msg = cli.run("classify", CONFIG, str(tmp_path))
    assert code == 0, msg
    header, cols, rows = _csv_rows(tmp_path / "classify.csv")
    assert header.startswith("# " + cli.CSV_VERSION)
    assert cols.split(",") == cli.COLUMNS["classify"].split(",")
    assert rows[0][cols.split(",").index("verdict")] == "in-K-not-K0"


def test_volterra_constant_kernel(tmp_path):
    code, msg = cli.run("volterra", CONFIG, str(tmp_path))
    assert code == 0, msg
    _, cols, rows = _csv_rows(tmp_path / "volterra.csv")
    t, x = float(rows[-1][1]), float(rows[-1][2])
    # x = 1 + int_0^t x solves to exp(t); seeded trapezoid sweeps from the constant seed
    assert t == 1.0 and x == pytest.approx(2.718281828, rel=2e-4)


def test_bad_label_exits_2_and_writes_nothing(tmp_path):
    out = tmp_path / "o"
    code, msg = cli.run("classify", CONFIG.replace("circle\nparams = 0.5", "wobble\nparams = 1"),
                        str(out))
    assert code == 2 and "configuration error" in msg
    assert not out.exists()


def test_missing_section_and_bad_number_exit_2(tmp_path):
    assert cli.run("spde", CONFIG, str(tmp_path / "a"))[0] == 2
    assert cli.run("volterra", CONFIG.replace("N = 32\nseed_function", "N = abc\nseed_function"),
                   str(tmp_path / "b"))[0] == 2
    assert not os.listdir(tmp_path)


def test_nonconvergence_exits_3_and_writes_nothing(tmp_path):
    out = tmp_path / "o"
    code, msg = cli.run("resolvent", CONFIG, str(out))
    assert code == 3 and "numerical failure" in msg
    assert not out.exists()


def test_stochastic_command_needs_seed(tmp_path):
    out = tmp_path / "o"
    assert cli.run("sde", CONFIG, str(out))[0] == 2
    assert not out.exists()
    assert cli.run("sde", CONFIG, str(out), seed=1)[0] == 0


def test_same_config_twice_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.run("sde", CONFIG, str(tmp_path / name), seed=5, workers=2)[0] == 0
    for f in ("moments.csv", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_manifest_and_rerun(tmp_path, capsys):
    first = tmp_path / "first"
    assert cli.run("fbm", CONFIG, str(first))[0] == 0
    man = json.loads((first / "manifest.json").read_text())
    assert man["command"] == "fbm" and man["seed"] == 11 and man["config"] == CONFIG
    assert set(man["outputs"]) == {"fbm.csv"}
    assert {"numpy", "scipy", "python", "svolterra"} <= set(man["versions"])
    rc = cli.main(["rerun", "--manifest", str(first / "manifest.json"),
                   "--out", str(tmp_path / "again"), "--workers", "3"])
    assert rc == 0
    assert "outputs identical" in capsys.readouterr().out


def test_rerun_detects_changed_outputs(tmp_path):
    first = tmp_path / "first"
    assert cli.run("fbm", CONFIG, str(first))[0] == 0
    man = json.loads((first / "manifest.json").read_text())
    man["outputs"]["fbm.csv"] = "0" * 64
    (first / "manifest.json").write_text(json.dumps(man))
    assert cli.main(["rerun", "--manifest", str(first / "manifest.json"),
                     "--out", str(tmp_path / "again")]) == 3


def test_main_reads_config_file(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(CONFIG)
    assert cli.main(["classify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "classify.csv").exists()
    assert cli.main(["classify", "--out", str(tmp_path / "p")]) == 2
    assert cli.main(["classify", "--config", str(tmp_path / "missing.ini")]) == 2


@pytest.mark.parametrize("name", cli.SUBCOMMANDS)
def test_help_lists_columns(name, capsys):
    with pytest.raises(SystemExit):
        cli.main([name, "--help"])
    out = capsys.readouterr().out
    assert "CSV columns" in out
