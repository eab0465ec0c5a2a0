import json
import socket
import subprocess
import sys

import numpy as np
import pytest

from realrss import cli, datasets, sharing


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def lines(out):
    return [json.loads(l) for l in out.splitlines() if l.strip()]


def test_share_roundtrip(tmp_path, capsys):
    X, _, cols = datasets.load_builtin("iris")
    src = tmp_path / "block.csv"
    datasets.write_csv(src, cols[:2], X[:, :2])
    code, out, _ = run(capsys, "share", "--input", str(src), "--out", str(tmp_path / "sh"), "--seed", "1")
    assert code == 0
    recs = lines(out)
    assert [r["party"] for r in recs] == [0, 1, 2]
    views = [sharing.read_share_file(r["path"]) for r in recs]
    assert views[0].part_b.shape == (150, 2)
    assert np.allclose(views[0].part_a + views[1].part_a + views[2].part_a, X[:, :2], rtol=1e-12)


def test_share_reports_bad_line(tmp_path, capsys):
    src = tmp_path / "b.csv"
    src.write_text("a,b\n1,2\n3,oops\n")
    code, _, err = run(capsys, "share", "--input", str(src), "--out", str(tmp_path / "o"))
    assert code == 2
    assert "b.csv:3" in err


def test_analyze(capsys):
    code, out, _ = run(capsys, "analyze", "--lx", "0", "--rx", "1", "--lr", "0", "--rr", "50",
                       "--trials", "20000")
    rec = lines(out)[0]
    assert code == 0
    assert rec["theta"] == 100
    assert rec["closed_form"] == pytest.approx(0.9802, abs=1e-4)
    assert set(rec) == {"theta", "closed_form", "empirical", "ci95", "safe_interval"}


def test_bench_csv_is_reproducible(capsys):
    argv = ["bench", "--protocol", "relu", "--sizes", "10,50", "--repetitions", "2", "--seed", "5", "--csv"]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    rows = out.splitlines()
    head = rows[0].split(",")
    assert head[:8] == ["protocol", "n", "exponent_span", "mean_ms", "bytes", "bits", "rounds", "mre"]
    n50 = dict(zip(head, rows[2].split(",")))
    assert n50["n"] == "50" and n50["bits"] == "3040000" and n50["rounds"] == "5"
    _, again, _ = run(capsys, *argv)
    # Everything but wall time is reproducible.
    strip = lambda text: [r.split(",")[:3] + r.split(",")[4:] for r in text.splitlines()]
    assert strip(again) == strip(out)


def test_train_predict_checkpoint(tmp_path, capsys):
    ck = tmp_path / "ck"
    code, out, _ = run(capsys, "train", "--dataset", "iris", "--config", "reference", "--seed", "0",
                       "--epochs", "2", "--checkpoint", str(ck))
    assert code == 0
    recs = lines(out)
    assert [r["epoch"] for r in recs if "epoch" in r] == [1, 2]
    assert (ck / "manifest.json").exists()
    code, out, _ = run(capsys, "predict", "--dataset", "iris", "--seed", "0", "--checkpoint", str(ck))
    assert code == 0
    assert lines(out)[-1]["accuracy"] > 0.6


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "c.json"
    bad.write_text('{"layer_sizes": [4,\n 3,,]}')
    code, _, err = run(capsys, "train", "--dataset", "iris", "--config", str(bad))
    assert code == 2 and "c.json:2" in err
    code, _, err = run(capsys, "serve", "--job", "bench", "--party", "0", "--peers", "a:1,b:2")
    assert code == 2 and "three" in err


def free_ports(k):
    socks = [socket.socket() for _ in range(k)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def test_serve_three_processes_match_inprocess(capsys):
    peers = ",".join(f"127.0.0.1:{p}" for p in free_ports(3))
    job = ["--protocol", "softmax", "--sizes", "8", "--repetitions", "2", "--seed", "9"]
    procs = [subprocess.Popen([sys.executable, "-m", "realrss", "serve", "--job", "bench", "--party", str(i),
                               "--peers", peers, "--timeout", "30", *job],
                              stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True) for i in range(3)]
    outs = [p.communicate(timeout=60) for p in procs]
    assert [p.returncode for p in procs] == [0, 0, 0], [o[1] for o in outs]
    _, ref, _ = run(capsys, "bench", *job)
    solo, local = lines(outs[0][0])[0], lines(ref)[0]
    assert solo["mre"] == local["mre"]
    assert sum(lines(o[0])[0]["bytes"] for o in outs) == local["bytes"]
