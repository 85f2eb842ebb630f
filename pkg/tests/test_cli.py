import configparser
import itertools
import subprocess
import sys

import numpy as np
import pytest

from oracles import dense_first_eig

from fracopt.cli import ConfigError, main, read_config
from fracopt.eigensolve import first_eigenpair
from fracopt.geometry import Params, build_mesh, mask_from_cells, mask_from_intervals
from fracopt.io import read_csv
from fracopt.kernel import assemble_base, assemble_kernel

EIG = """\
[problem]
s = 0.5
p = 2
h = 0.05
[mask]
kind = intervals
intervals = -1 0 1 2
"""

TINY = """\
[problem]
s = 0.5
p = 2
alpha = 0.75
R = 1.5
h = 0.25
[mask]
kind = annulus
"""


def run_cli(tmp_path, text, sub="eig", out="out", extra=()):
    cfg = tmp_path / "run.ini"
    cfg.write_text(text)
    return main([sub, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


def table(path):
    header, rows = read_csv(path)
    return header, rows


def test_eig_matches_dense(tmp_path):
    assert run_cli(tmp_path, EIG) == 0
    header, rows = table(tmp_path / "out" / "eigen.csv")
    assert header == ["lambda", "iterations", "residual", "converged"]
    lam_cli = float(rows[0][0])
    assert rows[0][3] == "true"
    par = Params(1, 0.5, 2.0, 0.5, 2.0)
    mesh = build_mesh(("interval", 0, 1), par, 0.05)
    op = assemble_kernel(mesh, mask_from_intervals(mesh, [(-1, 0), (1, 2)]), 0.5, 2.0)
    free = op.free
    lam, _ = dense_first_eig(op.energy_matrix()[np.ix_(free, free)],
                             op.base.mass_matrix[np.ix_(free, free)])
    assert lam_cli == pytest.approx(lam, rel=1e-8)
    _, nodes = table(tmp_path / "out" / "nodes.csv")
    assert len(nodes) == op.ndof
    assert (tmp_path / "out" / "manifest.ini").is_file()


def test_manifest_contents(tmp_path):
    assert run_cli(tmp_path, EIG, extra=("--seed", "5")) == 0
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(tmp_path / "out" / "manifest.ini")
    assert cp["manifest"]["subcommand"] == "eig"
    assert cp["manifest"]["files"].split() == ["eigen.csv", "mask.csv", "nodes.csv"]
    assert cp["run"]["seed"] == "5" and cp["problem"]["s"] == "0.5"


def test_byte_reproducible(tmp_path):
    assert run_cli(tmp_path, EIG, out="a") == 0
    assert run_cli(tmp_path, EIG, out="b") == 0
    for name in ("eigen.csv", "nodes.csv", "mask.csv", "manifest.ini"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        if name == "manifest.ini":
            a, b = a.replace(b"/a", b""), b.replace(b"/b", b"")
        assert a == b


def test_invalid_s_exits_1(tmp_path, capsys):
    assert run_cli(tmp_path, EIG.replace("s = 0.5", "s = 1.2")) == 1
    assert "invalid params" in capsys.readouterr().err


def test_malformed_line_exits_1(tmp_path, capsys):
    assert run_cli(tmp_path, "[problem]\ns 0.3\n") == 1
    err = capsys.readouterr().err
    assert "malformed config line 2" in err and "s 0.3" in err


def test_unknown_keys_and_sections():
    with pytest.raises(ConfigError, match="unknown section"):
        read_config("[nope]\na = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        read_config("[problem]\nq = 1\n")
    with pytest.raises(ConfigError, match="malformed config line 1"):
        read_config("s = 0.5\n")
    vals = read_config("[problem]\ns = 0.25  # comment\n")
    assert vals["problem"]["s"] == "0.25" and vals["problem"]["p"] == "2"


def test_unknown_subcommand_exits_1(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(tmp_path, EIG, sub="frobnicate")
    assert exc.value.code == 1


def test_missing_config_exits_1(tmp_path):
    assert main(["eig", "--config", str(tmp_path / "missing.ini")]) == 1


def test_bad_mask_kind_exits_1(tmp_path):
    assert run_cli(tmp_path, EIG.replace("kind = intervals", "kind = blob")) == 1


def test_not_converged_exits_2(tmp_path):
    text = EIG.replace("p = 2", "p = 3") + "[solver]\ncap = 2\n"
    assert run_cli(tmp_path, text) == 2
    _, rows = table(tmp_path / "out" / "eigen.csv")
    assert rows[0][3] == "false"


def test_minimize_tiny_instance(tmp_path):
    assert run_cli(tmp_path, TINY, sub="minimize") == 0
    _, rows = table(tmp_path / "out" / "eigen.csv")
    lam_cli = float(rows[0][0])
    par = Params(1, 0.5, 2.0, 0.75, 1.5)
    mesh = build_mesh(("interval", 0, 1), par, 0.25)
    base = assemble_base(mesh, 0.5, 2.0)
    best = min(first_eigenpair(m, par, base.with_mask(m)).lam
               for m in (mask_from_cells(mesh, c)
                         for c in itertools.combinations(base.candidate_cells, 3)))
    assert lam_cli == pytest.approx(best, rel=1e-9)
    header, hist = table(tmp_path / "out" / "history.csv")
    assert header == ["iter", "lambda", "mask_hash"]


def test_maximize_and_surround(tmp_path):
    text = TINY.replace("s = 0.5", "s = 0.9") + "[maximize]\nrestarts = 1\n"
    assert run_cli(tmp_path, text, sub="maximize", out="m") == 0
    text += "[surround]\nsource = maximize\neps = 0.3\n"
    assert run_cli(tmp_path, text, sub="surround", out="s") == 0
    header, rows = table(tmp_path / "s" / "surround.csv")
    assert header == ["x", "measure", "covered"] and len(rows) == 2


def test_decay_rate_sweep(tmp_path):
    text = """\
[problem]
R = 9
h = 0.125
[decay]
r = 0.25
k = 4 8
"""
    assert run_cli(tmp_path, text, sub="decay", out="d") == 0
    _, rows = table(tmp_path / "d" / "decay.csv")
    assert [float(r[0]) for r in rows] == [4.0, 8.0]
    text = "[mask]\nintervals = 1.5 2\n[rate]\ns = 0.5 0.7\n"
    assert run_cli(tmp_path, text, sub="rate", out="r") == 0
    _, rows = table(tmp_path / "r" / "rate.csv")
    assert len(rows) == 2
    text = "[sweep]\ns = 0.5 0.6\nminimize = false\n[potential]\nkind = constant\nvalue = 1\n"
    assert run_cli(tmp_path, text, sub="sweep", out="w") == 0
    header, rows = table(tmp_path / "w" / "sweep.csv")
    assert header[0] == "s" and len(rows) == 2


def test_potential_table(tmp_path):
    (tmp_path / "v.csv").write_text("x,value\n0,1\n0.5,2\n")
    text = EIG + f"[potential]\nkind = table\nfile = {tmp_path / 'v.csv'}\n"
    assert run_cli(tmp_path, text.replace("kind = intervals", "kind = empty")) == 0
    _, rows = table(tmp_path / "out" / "eigen.csv")
    assert 1.0 <= float(rows[0][0]) <= 1.5


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "fracopt.cli", "--help"], capture_output=True,
                         text=True, check=True)
    assert "subcommand" in out.stdout
