import csv
import json
import math
import re

import numpy as np
import pytest

from loram.cli import main
from loram.npyio import read_npy, write_npy

from conftest import randn


@pytest.fixture
def wdir(tmp_path):
    def put(name, m):
        p = tmp_path / name
        write_npy(p, m)
        return str(p)
    put.dir = tmp_path
    return put


def test_init_loram_q(wdir):
    w = wdir("w.npy", randn(0, 64, 64))
    out = wdir.dir / "o"
    assert main(["init", "--weights", w, "--rank", "8", "--scheme", "loram", "--out-dir", str(out)]) == 0
    meta = json.loads((out / "meta.json").read_text())
    assert meta["q_used"] == pytest.approx(0.5, abs=1e-15)
    assert meta["format"] == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["rank"] == 8 and manifest["command"] == "init"
    A, B, R = (read_npy(out / f) for f in ("A.npy", "B.npy", "W_residual.npy"))
    W = read_npy(w)
    assert np.linalg.norm(R + B @ A - W) <= 1e-10 * np.linalg.norm(W)


def test_init_pissa_diagonal(wdir):
    w = wdir("d.npy", np.diag([4.0, 1.0]))
    out = wdir.dir / "p"
    assert main(["init", "--weights", w, "--rank", "1", "--scheme", "pissa", "--out-dir", str(out)]) == 0
    np.testing.assert_allclose(read_npy(out / "A.npy"), [[2.0, 0.0]], atol=1e-15)


@pytest.mark.parametrize("scheme", ["noise_zeros", "milora", "olora", "loram_tracking"])
def test_init_other_schemes_reconstruct(wdir, scheme):
    w = wdir("w.npy", randn(3, 10, 7))
    out = wdir.dir / scheme
    assert main(["init", "--weights", w, "--rank", "3", "--scheme", scheme, "--alpha", "2",
                 "--out-dir", str(out)]) == 0
    A, B, R = (read_npy(out / f) for f in ("A.npy", "B.npy", "W_residual.npy"))
    W = read_npy(w)
    assert np.linalg.norm(R + 2 * B @ A - W) <= 1e-10 * np.linalg.norm(W)


def test_init_rank_too_large(wdir, capsys):
    w = wdir("d.npy", np.diag([4.0, 1.0]))
    out = wdir.dir / "o3"
    assert main(["init", "--weights", w, "--rank", "3", "--out-dir", str(out)]) == 2
    err = capsys.readouterr().err
    assert "3" in err and "2" in err
    assert not out.exists()
    assert (wdir.dir / "o3.partial").exists()


def test_init_degenerate(wdir):
    w = wdir("z.npy", np.zeros((4, 4)))
    assert main(["init", "--weights", w, "--rank", "2", "--out-dir", str(wdir.dir / "z")]) == 3


def test_init_bad_inputs(wdir, tmp_path):
    assert main(["init", "--weights", str(tmp_path / "missing.npy"), "--rank", "1", "--out-dir",
                 str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.npy"
    bad.write_bytes(b"not an npy file")
    assert main(["init", "--weights", str(bad), "--rank", "1", "--out-dir", str(tmp_path / "y")]) == 2
    w = wdir("d.npy", np.eye(3))
    assert main(["init", "--weights", w, "--rank", "1", "--scheme", "lora_ga", "--out-dir",
                 str(tmp_path / "g")]) == 2


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_spectrum_identity(wdir, capsys):
    w = wdir("i.npy", np.eye(8))
    out = wdir.dir / "s.csv"
    assert main(["spectrum", "--weights", w, "--max-rank", "8", "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert [float(r["q"]) for r in rows] == pytest.approx([r / 8 for r in range(1, 9)], abs=1e-15)
    text = capsys.readouterr().out
    assert "nu_w=0.125" in text and "effective_rank=8" in text


def test_spectrum_diag(wdir):
    w = wdir("d.npy", np.diag([3.0, 1.0]))
    out = wdir.dir / "s.csv"
    assert main(["spectrum", "--weights", w, "--max-rank", "2", "--out", str(out)]) == 0
    assert [float(r["q"]) for r in _read_csv(out)] == pytest.approx([0.9, 0.8], abs=1e-15)


def test_spectrum_q_bounded(wdir):
    w = wdir("r.npy", randn(8, 30, 20))
    out = wdir.dir / "s.csv"
    assert main(["spectrum", "--weights", w, "--max-rank", "20", "--out", str(out)]) == 0
    assert all(0 <= float(r["q"]) <= 1 + 1e-12 for r in _read_csv(out))
    assert main(["spectrum", "--weights", w, "--max-rank", "21", "--out", str(out)]) == 2


def _config(tmp_path, **kw):
    cfg = dict(depth=2, width=12, rank=3, steps=5, batch_size=4, eta=1e-2, seed=3)
    cfg.update(kw)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_simulate_steps_zero(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["simulate", "--config", _config(tmp_path, steps=0), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,loss,layer,nu_A,nu_B,nu_W,nu_delta"
    assert len(lines) == 1 + 2 and all(l.startswith("0,") for l in lines[1:])


def test_simulate_deterministic(tmp_path):
    cfg = _config(tmp_path, init={"scheme": "loram"}, task={"kind": "linear"})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert b"\r" not in a.read_bytes()
    manifest = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert manifest["resolved"]["config"]["init"]["scheme"] == "loram"


@pytest.mark.parametrize("bad", [dict(depth="five"), dict(colour="red"), dict(init={"scheme": "nope"}),
                                 dict(optimizer="lbfgs"), dict(steps=True)])
def test_simulate_schema_errors(tmp_path, bad):
    assert main(["simulate", "--config", _config(tmp_path, **bad), "--out", str(tmp_path / "o.csv")]) == 2
    assert not (tmp_path / "o.csv").exists()


def test_simulate_divergence(tmp_path):
    cfg = _config(tmp_path, eta=1e4, steps=50, init={"scheme": "loram"})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o.csv")]) == 4
    assert "last good step" in (tmp_path / "o.csv.partial").read_text()


def test_verify_dst(tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert main(["verify", "--suite", "dst", "--report", str(rep)]) == 0
    body = json.loads(rep.read_text())
    suite = body["suites"][0]
    assert suite["pass"] and suite["claim"]
    assert all("measured" in c for c in suite["checks"])
    assert "dst: PASS" in capsys.readouterr().out


def test_verify_unknown_suite(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["verify", "--suite", "nope", "--report", str(tmp_path / "r.json")])
    assert info.value.code == 2


def test_unknown_flag(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["spectrum", "--weights", "x", "--max-rank", "1", "--out", "y", "--colour", "red"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        main(["spectrum", "--weight", "x", "--max-rank", "1", "--out", "y"])


def test_plot_two_points(tmp_path):
    src = tmp_path / "p.csv"
    src.write_text("x,y\n0,0\n1,1\n")
    out = tmp_path / "p.svg"
    assert main(["plot", "--input", str(src), "--x", "x", "--y", "y", "--out", str(out)]) == 0
    svg = out.read_text()
    pts = re.findall(r'<polyline[^>]*points="([^"]+)"', svg)
    assert pts == ["70.00,350.00 490.00,20.00"]


def test_plot_trajectory(tmp_path):
    cfg = _config(tmp_path)
    traj = tmp_path / "t.csv"
    assert main(["simulate", "--config", cfg, "--out", str(traj)]) == 0
    out = tmp_path / "t.svg"
    assert main(["plot", "--input", str(traj), "--x", "step", "--y", "nu_A,nu_B", "--out", str(out)]) == 0
    svg = out.read_text()
    assert svg.count("<polyline") == 2
    assert ">nu_A</text>" in svg and ">nu_B</text>" in svg
    again = tmp_path / "t2.svg"
    main(["plot", "--input", str(traj), "--x", "step", "--y", "nu_A,nu_B", "--out", str(again)])
    assert again.read_bytes() == out.read_bytes()


def test_plot_errors(tmp_path, capsys):
    src = tmp_path / "p.csv"
    src.write_text("x,y\n0,0\n1,1\n")
    out = tmp_path / "p.svg"
    assert main(["plot", "--input", str(src), "--x", "x", "--y", "y", "--logy", "--out", str(out)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert not out.exists()
    assert main(["plot", "--input", str(src), "--x", "x", "--y", "z", "--out", str(out)]) == 2
    assert "'z'" in capsys.readouterr().err


def test_init_cli_deterministic(wdir):
    w = wdir("w.npy", randn(1, 20, 12))
    outs = []
    for name in ("a", "b"):
        d = wdir.dir / name
        assert main(["init", "--weights", w, "--rank", "4", "--basis", "random_orthogonal", "--seed", "9",
                     "--out-dir", str(d)]) == 0
        outs.append({f: (d / f).read_bytes() for f in ("A.npy", "B.npy", "W_residual.npy", "meta.json")})
    assert outs[0] == outs[1]


def test_init_creates_missing_parent(wdir):
    w = wdir("w.npy", randn(0, 6, 6))
    out = wdir.dir / "deep" / "er" / "o"
    assert main(["init", "--weights", w, "--rank", "2", "--out-dir", str(out)]) == 0
    assert (out / "A.npy").exists()
    assert not [p for p in out.parent.iterdir() if p.name.startswith(".tmp")]
