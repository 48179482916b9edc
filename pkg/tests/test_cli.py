import json

import numpy as np
import pytest

from police import cli, data
from police.net import fold_bias, load_model, new_mlp, save_model
from police.region import box


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    box([-1, -1], [1, 1]).save(tmp_path / "r.json")
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_demo_datasets(workdir):
    assert run("demo", "classification", "--seed", 0, "--out", "c.csv") == 0
    X, y = data.load_csv("c.csv")
    assert X.shape == (1000, 2) and int(y.sum()) == 500
    run("demo", "classification", "--seed", 0, "--out", "c2.csv", "--quiet")
    assert (workdir / "c.csv").read_bytes() == (workdir / "c2.csv").read_bytes()
    run("demo", "regression", "--seed", 1, "--out", "g.csv")
    X, y = data.load_csv("g.csv")
    assert X.shape == (2000, 2) and np.abs(X).max() <= 3
    assert data.regression_target(np.zeros((1, 2)))[0] == 0.0


def test_train_verify_plot_fold(workdir, capsys):
    run("demo", "regression", "--out", "d.csv")
    cfg = workdir / "cfg.json"
    cfg.write_text(json.dumps({"steps": 30, "batch_size": 64, "lr": 0.01, "optimizer": "adam",
                               "checkpoint_steps": [5], "certify_samples": 200}))
    code = run("train", "--config", cfg, "--data", "d.csv", "--region", "r.json", "--out", "m.json",
               "--dims", "2,16,16,1", "--activation", "leaky_relu", "--seed", 3, "--quiet")
    assert code == 0
    out = capsys.readouterr().out
    assert "final certificate: pass" in out
    assert (workdir / "m_history.csv").read_text().startswith("step,loss,certificate_residual")

    assert run("verify", "--model", "m.json", "--region", "r.json", "--out", "cert.json") == 0
    assert json.loads((workdir / "cert.json").read_text())["status"] == "pass"
    assert run("verify", "--model", "m.json", "--region", "r.json", "--samples", 1) == 3

    assert run("plot", "--model", "m.json", "--region", "r.json", "--resolution", 20, "--out", "p") == 0
    assert (workdir / "p.pgm").read_bytes().startswith(b"P5")
    assert (workdir / "p_region.csv").exists() and not (workdir / "p_boundary.csv").exists()

    assert run("fold", "--model", "m.json", "--region", "r.json", "--out", "f.json") == 0
    a, b = load_model("m.json"), load_model("f.json")
    assert all(np.allclose(x, y, rtol=0, atol=1e-12) for x, y in zip(a.params(), b.params()))


def test_zero_step_run_is_folded_init(workdir, capsys):
    run("demo", "classification", "--out", "c.csv")
    assert run("train", "--preset", "fig1", "--data", "c.csv", "--steps", 0, "--out", "m.json", "--seed", 5,
               "--quiet") == 0
    init = new_mlp([2, 256, 256, 1], "leaky_relu", 5)
    folded = fold_bias(init, box([-1, -1], [1, 1]))
    got = load_model("m.json")
    for x, y in zip(folded.params(), got.params()):
        assert np.array_equal(x, y)
    assert "final certificate: pass" in capsys.readouterr().out


def test_presets_dims():
    assert cli.PRESETS["fig1"]["dims"] == [2, 256, 256, 1]
    assert cli.PRESETS["fig2"]["dims"] == [2, 256, 256, 256, 1]
    assert cli.PRESETS["fig3"]["config"]["checkpoint_steps"] == [5, 50, 10000]


def test_corrupted_model_fails_verify(workdir):
    region = box([-1, -1], [1, 1])
    net = fold_bias(new_mlp([2, 16, 1], "relu", 0), region)
    H = region.vertices @ net.layers[0].weight.T + net.layers[0].bias
    k = int(np.argmax(H.max(0) - H.min(0)))
    b = net.layers[0].bias.copy()
    b[k] -= H[:, k].mean()
    save_model(net.with_bias(0, b), workdir / "bad.json")
    assert run("verify", "--model", "bad.json", "--region", "r.json", "--quiet") == 2


def test_errors_exit_1(workdir, capsys):
    assert run("verify", "--model", "missing.json", "--region", "r.json") == 1
    (workdir / "broken.json").write_text('{"layers": [{"w": [[1, 2], [3]], "b": [0, 0], "act": "relu"}]}')
    assert run("verify", "--model", "broken.json", "--region", "r.json") == 1
    assert "$.layers[0].w[1]" in capsys.readouterr().err
    assert run("train", "--out", "m.json") == 1
    save_model(new_mlp([3, 4, 1]), workdir / "m3.json")
    assert run("plot", "--model", "m3.json", "--out", "p") == 1


def test_bad_domain_rejected(workdir):
    with pytest.raises(SystemExit):
        run("plot", "--model", "m.json", "--domain", "0,1,2", "--out", "p")


def test_bench_single_config(workdir, capsys):
    assert run("bench", "--config", "2,2,8", "--batch", 16, "--repeats", 10, "--warmup", 1, "--csv", "b.csv",
               "--quiet") == 0
    rows = (workdir / "b.csv").read_text().splitlines()
    assert rows[0].startswith("D,L,width,unconstrained_ms_mean") and rows[1].startswith("2,2,8,")
    assert "slow-down" in capsys.readouterr().out


def test_plot_deterministic(workdir):
    save_model(new_mlp([2, 8, 1], "relu", 0), workdir / "m.json")
    for prefix in ("a", "b"):
        run("plot", "--model", "m.json", "--region", "r.json", "--police", "--mode", "classification",
            "--resolution", 16, "--out", prefix, "--seed", 1)
    for suffix in (".csv", ".pgm", "_boundary.csv"):
        assert (workdir / f"a{suffix}").read_bytes() == (workdir / f"b{suffix}").read_bytes()
