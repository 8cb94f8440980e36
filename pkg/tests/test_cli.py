import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from tvpnet.artifacts import load_npz, save_npz
from tvpnet.cli import load_posterior, main

FIX = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--nodes", "5", "--periods", "6", "--seed", "1", "--output-dir", str(out)]) == 0
    return out


def _fit(sim, out, *extra):
    return main(["fit", "--network", str(sim / "network.csv"), "--covariates", str(sim / "covariates.csv"),
                 "--H", "2", "--n-iter", "30", "--n-burn", "10", "--seed", "3", "--holdout-last",
                 "--output-dir", str(out), *extra])


def test_save_load_npz_deterministic(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1, 2], dtype=np.int32)}
    save_npz(tmp_path / "x.npz", arrays, {"k": [1, 2]})
    save_npz(tmp_path / "y.npz", arrays, {"k": [1, 2]})
    assert (tmp_path / "x.npz").read_bytes() == (tmp_path / "y.npz").read_bytes()
    back, meta = load_npz(tmp_path / "x.npz")
    assert meta == {"k": [1, 2]}
    np.testing.assert_array_equal(back["a"], arrays["a"])
    assert back["b"].dtype == np.int32
    assert not list(tmp_path.glob("*.tmp"))


def test_simulate_outputs(sim):
    assert {p.name for p in sim.iterdir()} >= {"network.csv", "covariates.csv", "truth.npz", "manifest_simulate.json"}
    manifest = json.loads((sim / "manifest_simulate.json").read_text())
    assert manifest["seed"] == 1 and "numpy" in manifest["versions"] and len(manifest["config_hash"]) == 64


def test_fit_and_summarize(sim, tmp_path, capsys):
    out = tmp_path / "fit"
    assert _fit(sim, out) == 0
    samples, truth, period = load_posterior(out / "posterior.npz")
    assert samples.n_draws == 20 and truth.shape == (10,) and period == "0006"
    assert (out / "checkpoint.npz").exists() and not (out / ".tvpnet.lock").exists()
    manifest = json.loads((out / "manifest_fit.json").read_text())
    assert manifest["inputs"]["network"]["file"] == "network.csv"
    assert manifest["settings"]["model"]["H"] == 2

    assert main(["summarize", "--output-dir", str(out), "--edge", "n01,n00", "--window", "early=0001:0003"]) == 0
    rows = (out / "summary.csv").read_text().splitlines()
    assert rows[0] == "target,t,mean,hpd_lo,hpd_hi"
    assert len(rows) == 1 + 4 * 6  # mu, two betas, one edge
    assert len((out / "window_early.csv").read_text().splitlines()) == 1 + 10
    assert (out / "holdout_auc.txt").read_text().startswith("0006,")
    assert "holdout AUC" in capsys.readouterr().out


def test_resume_gives_identical_artifact(sim, tmp_path):
    assert _fit(sim, tmp_path / "a") == 0
    assert _fit(sim, tmp_path / "b", "--stop-after", "13", "--checkpoint-every", "4") == 0
    assert not (tmp_path / "b" / "posterior.npz").exists()
    assert _fit(sim, tmp_path / "b", "--resume") == 0
    for name in ("posterior.npz", "checkpoint.npz"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_pipeline_is_byte_identical(tmp_path):
    for run in ("r1", "r2"):
        d = tmp_path / run
        d.mkdir()
        for f in ("returns_3x4.csv", "events_pipeline.csv"):
            shutil.copy(FIX / f, d / f)
        cfg = {"paths": {"returns": "returns_3x4.csv", "events": "events_pipeline.csv",
                         "network": "out/network.csv", "covariates": "out/covariates.csv"},
               "model": {"H": 2, "n_iter": 40, "n_burn": 10}, "seed": 8, "output_dir": "out"}
        (d / "run.json").write_text(json.dumps(cfg))
        for cmd in ("ingest", "fit", "summarize"):
            assert main([cmd, "--config", str(d / "run.json")]) == 0
    a, b = tmp_path / "r1" / "out", tmp_path / "r2" / "out"
    names = sorted(p.name for p in a.iterdir())
    assert "summary.csv" in names and "posterior.npz" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_ingest_golden(tmp_path):
    with pytest.warns(UserWarning, match="no events file"):
        assert main(["ingest", "--returns", str(FIX / "returns_3x4.csv"), "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "network.csv").read_text() == (FIX / "network_3x4.csv").read_text()
    zero = (tmp_path / "covariates.csv").read_text().splitlines()
    assert len(zero) == 1 + 4 * 3 * 2 and all(r.endswith(",0.0") for r in zero[1:])


def test_empty_events_warns(tmp_path):
    ev = tmp_path / "ev.csv"
    ev.write_text("period,country_a,country_b,channel,cooperation,conflict\n")
    with pytest.warns(UserWarning, match="no rows"):
        rc = main(["ingest", "--returns", str(FIX / "returns_3x4.csv"), "--events", str(ev),
                   "--output-dir", str(tmp_path / "o")])
    assert rc == 0


def test_error_exit_codes(sim, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,i,q\n")
    assert main(["fit", "--network", str(bad), "--output-dir", str(tmp_path / "o")]) == 3
    assert "missing column(s) j, y" in capsys.readouterr().err
    assert main(["fit", "--network", str(tmp_path / "none.csv"), "--output-dir", str(tmp_path / "o")]) == 2
    # covariates on a grid that shares no period with the network
    cov = tmp_path / "cov.csv"
    cov.write_text("t,i,j,predictor,value\n9999,n01,n00,z1,1.0\n")
    assert main(["fit", "--network", str(sim / "network.csv"), "--covariates", str(cov),
                 "--output-dir", str(tmp_path / "o")]) == 4
    locked = tmp_path / "locked"
    locked.mkdir()
    (locked / ".tvpnet.lock").write_text("1")
    assert _fit(sim, locked) == 6


def test_summarize_errors(sim, tmp_path):
    out = tmp_path / "f"
    assert _fit(sim, out) == 0
    assert main(["summarize", "--output-dir", str(out), "--window", "late=0005:0009"]) == 2
    assert main(["summarize", "--output-dir", str(tmp_path / "nothing")]) == 2


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": {"H": 2, "sigma": 1}}))
    assert main(["simulate", "--config", str(p), "--output-dir", str(tmp_path)]) == 2
    p.write_text(json.dumps({"colour": "red"}))
    assert main(["simulate", "--config", str(p), "--output-dir", str(tmp_path)]) == 2
