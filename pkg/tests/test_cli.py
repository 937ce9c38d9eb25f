import json
import subprocess
import sys

import numpy as np
import pytest

from kpk import cli, io, kpcore


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_shapes_plan(capsys):
    code, out, _ = run(capsys, "shapes", "--rows", "154", "--cols", "164")
    assert code == 0
    assert "B 11x41 kron C 14x4" in out and "ratio 49.81" in out


def test_shapes_enumerate(capsys, tmp_path):
    csv_path = tmp_path / "e.csv"
    code, out, _ = run(capsys, "shapes", "--rows", "256", "--cols", "256", "--enumerate", "--csv", str(csv_path))
    assert code == 0
    levels = out.strip().splitlines()[-1]
    assert levels.startswith("levels: 128,") and len(levels.split(",")) == 8
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "factor 1,factor 2,params,ratio"
    assert "2x2,128x128,16388,3.99902" in rows


def test_shapes_hkp(capsys):
    code, out, _ = run(capsys, "shapes", "--rows", "472", "--cols", "128", "--hkp-target", "10")
    assert code == 0
    assert "hkp: r 43" in out and "ratio 10.11" in out


@pytest.mark.parametrize(
    "argv",
    [
        ("shapes", "--rows", "0", "--cols", "4"),
        ("shapes", "--rows", "1", "--cols", "4", "--enumerate"),
        ("shapes", "--rows", "4", "--cols", "4", "--hkp-target", "99"),
    ],
)
def test_shapes_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and "error" in err


def test_argparse_usage_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["shapes", "--rows", "x"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["bench", "--preset", "nope"])
    assert exc.value.code == 2


def test_verify_minimal(capsys, tmp_path):
    report = tmp_path / "v.json"
    code, out, _ = run(capsys, "verify", "--trials", "1", "--json", str(report))
    assert code == 0
    suites = json.loads(report.read_text())
    assert {s["name"] for s in suites} >= {"kp-oracle", "hkp-oracle", "kp-grad", "bptt-grad", "rank-product", "quant-codes"}
    assert all(s["ok"] for s in suites)


def test_verify_injected_fault(capsys, monkeypatch):
    real = kpcore.kp_matvec

    def broken(pair, x):
        y = real(pair, x)
        y[0] += 1.0
        return y

    monkeypatch.setattr(kpcore, "kp_matvec", broken)
    code, out, err = run(capsys, "verify", "--trials", "3")
    assert code == 1
    assert "FAIL" in out
    line = [l for l in err.splitlines() if l.startswith("kp-oracle counterexample:")][0]
    assert json.loads(line.split(":", 1)[1])["rel_err"] > 1e-10


def test_seed_env_override(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("KPK_SEED", "bad")
    code, _, err = run(capsys, "verify", "--trials", "1")
    assert code == 2 and "KPK_SEED" in err


def test_bench_preset(capsys, tmp_path):
    csv_path = tmp_path / "b.csv"
    code, out, _ = run(capsys, "bench", "--preset", "kws-lstm", "--iterations", "5", "--warmup", "1", "--csv", str(csv_path))
    assert code == 0
    rows = csv_path.read_text().splitlines()
    assert rows[0].startswith("preset,kernel,dims,params,flops")
    dense = [r for r in rows if ",dense," in r][0].split(",")
    kp = [r for r in rows if ",kp[" in r][0].split(",")
    assert dense[4] == "15104" and kp[4] == "1200"
    assert "| seq-kp |" in out


def test_bench_config(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"rows": 32, "cols": 48, "reps": ["kp", "lmf"], "trials": 5, "seed": 1}))
    code, out, _ = run(capsys, "bench", "--config", str(cfg), "--warmup", "0")
    assert code == 0
    assert "| lmf |" in out and "| csr" not in out
    cfg.write_text(json.dumps({"preset": "nope"}))
    assert run(capsys, "bench", "--config", str(cfg))[0] == 2
    cfg.write_text(json.dumps({"rows": 3}))
    assert run(capsys, "bench", "--config", str(cfg))[0] == 2
    cfg.write_text("{not json")
    assert run(capsys, "bench", "--config", str(cfg))[0] == 2


def test_sizes(capsys, tmp_path):
    csv_path = tmp_path / "s.csv"
    code, out, _ = run(capsys, "sizes", "--csv", str(csv_path))
    assert code == 0
    assert "note (usps-fastrnn)" in out
    rows = [r.split(",") for r in csv_path.read_text().splitlines()[1:]]
    kp = {r[0]: r for r in rows if r[1] == "kp"}
    assert kp["kws-gru"][5] == "38.44"
    base = {r[0]: r for r in rows if r[1] == "baseline"}
    assert base["mnist-lstm"][6] == "44.73"


def test_train_synth(capsys, tmp_path):
    out_dir = tmp_path / "run"
    argv = ["train", "--rep", "kp", "--epochs", "2", "--count", "64", "--val-count", "16", "--hidden", "8", "--out", str(out_dir)]
    code, out, _ = run(capsys, *argv)
    assert code == 0 and "val_acc" in out
    first = (out_dir / "metrics.csv").read_bytes()
    net = io.load_network(out_dir / "checkpoint.kpz")
    assert net.cell.kind == "fastrnn" and net.cell.hidden_dim == 8
    assert io.load_optimizer_state(out_dir / "checkpoint.kpz").t > 0
    run(capsys, *argv)
    assert (out_dir / "metrics.csv").read_bytes() == first


def test_train_lr_zero_flat(capsys, tmp_path):
    argv = ["train", "--lr", "0", "--epochs", "3", "--count", "32", "--val-count", "8", "--hidden", "4", "--out", str(tmp_path)]
    assert run(capsys, *argv)[0] == 0
    rows = (tmp_path / "metrics.csv").read_text().splitlines()[1:]
    assert len({r.split(",")[1] for r in rows}) == 1


def test_train_usage_errors(capsys, tmp_path):
    assert run(capsys, "train", "--rep", "lmf", "--out", str(tmp_path))[0] == 2
    assert run(capsys, "train", "--task", "idx", "--out", str(tmp_path))[0] == 2


def test_train_divergence_exit(capsys, tmp_path, monkeypatch):
    from kpk import train
    from kpk.errors import NumericError

    def explode(*a, **k):
        raise NumericError("loss is nan", step=4)

    monkeypatch.setattr(train, "train_loop", explode)
    code, _, err = run(capsys, "train", "--epochs", "1", "--count", "8", "--out", str(tmp_path))
    assert code == 3 and "diverged" in err


def test_train_idx(capsys, tmp_path, rng):
    images = rng.integers(0, 256, (20, 6, 5)).astype(np.uint8)
    labels = (images.mean(axis=(1, 2)) > 127).astype(np.uint8)
    io.save_idx(tmp_path / "img", images)
    io.save_idx(tmp_path / "lab", labels)
    argv = ["train", "--task", "idx", "--images", str(tmp_path / "img"), "--labels", str(tmp_path / "lab"),
            "--epochs", "1", "--hidden", "4", "--kind", "lstm", "--out", str(tmp_path / "o")]
    assert run(capsys, *argv)[0] == 0


def test_analyze(capsys, tmp_path):
    io.save_matrix(tmp_path / "b.kpm", np.diag([3.0, 1.0]))
    io.save_matrix(tmp_path / "c.csv", np.diag([2.0, 0.0]))
    code, out, _ = run(capsys, "analyze", "--kron", str(tmp_path / "b.kpm"), str(tmp_path / "c.csv"), "--singular-values")
    assert code == 0
    assert "4x4" in out and "singular values: 6 2 0 0" in out
    rank_line = [l for l in out.splitlines() if l.strip().startswith("rank")][0]
    assert rank_line.split()[-1] == "2"
    csv_path = tmp_path / "r.csv"
    assert run(capsys, "analyze", str(tmp_path / "b.kpm"), "--csv", str(csv_path))[0] == 0
    assert "condition_number,3.0" in csv_path.read_text()
    assert run(capsys, "analyze")[0] == 2
    (tmp_path / "bad.kpm").write_bytes(b"KPM1")
    assert run(capsys, "analyze", str(tmp_path / "bad.kpm"))[0] == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "kpk", "shapes", "--rows", "4", "--cols", "4"], capture_output=True, text=True)
    assert out.returncode == 0 and "B 2x2 kron C 2x2" in out.stdout
