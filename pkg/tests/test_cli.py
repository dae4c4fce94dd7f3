import csv
import json

import numpy as np
import pytest

from rieszrect.cli import EXIT_ERROR, EXIT_FAIL, EXIT_OK, main
from rieszrect.experiments import noisy_line
from rieszrect.measure import load_point_csv, save_point_csv


@pytest.fixture
def graph_csv(tmp_path):
    path = tmp_path / "g.csv"
    rc = main(["graph-gen", "--modes", '[{"freq": [2], "amp": [0.01]}]', "--h", "0.01", "--output", str(path)])
    assert rc == EXIT_OK
    return path


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_graph_gen_writes_points(graph_csv):
    mu = load_point_csv(graph_csv, 1)
    assert mu.size == 100
    np.testing.assert_allclose(mu.points[:, 1], 0.01 * np.sin(4 * np.pi * mu.points[:, 0]), atol=1e-15)


def test_transform_beta_alpha_pv(graph_csv, tmp_path):
    out = tmp_path / "t.csv"
    assert main(["transform", "--input", str(graph_csv), "--eps", "0.05", "--output", str(out)]) == EXIT_OK
    rows = _read(out)
    assert len(rows) == 100 and set(rows[0]) == {"target", "v1", "v2", "norm"}
    assert main(["transform", "--input", str(graph_csv), "--eps", "0.05", "--method", "tree",
                 "--output", str(tmp_path / "t2.csv")]) == EXIT_OK
    a = np.array([[float(r["v1"]), float(r["v2"])] for r in rows])
    b = np.array([[float(r["v1"]), float(r["v2"])] for r in _read(tmp_path / "t2.csv")])
    np.testing.assert_allclose(b, a, rtol=1e-8, atol=1e-10)
    assert main(["beta", "--input", str(graph_csv), "--levels", "2", "--p", "1",
                 "--output", str(tmp_path / "b.csv")]) == EXIT_OK
    assert all(float(r["beta1"]) >= 0 for r in _read(tmp_path / "b.csv"))
    assert main(["pv-oscillation", "--input", str(graph_csv), "--lower", "0.05", "--upper", "0.2",
                 "--output", str(tmp_path / "pv.csv")]) == EXIT_OK
    assert len(_read(tmp_path / "pv.csv")) == 100


def test_config_overrides_and_errors(graph_csv, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eps": 0.2, "variant": "trunc"}))
    out = tmp_path / "t.csv"
    assert main(["--config", str(cfg), "transform", "--input", str(graph_csv), "--eps", "1",
                 "--output", str(out)]) == EXIT_OK
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_option": 1}))
    assert main(["--config", str(bad), "transform", "--input", str(graph_csv), "--eps", "1"]) == EXIT_ERROR
    assert main(["transform", "--input", str(tmp_path / "missing.csv"), "--eps", "1"]) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


def test_corona_command(tmp_path):
    mu = noisy_line(count=2000)
    src = tmp_path / "line.csv"
    save_point_csv(src, mu)
    out = tmp_path / "cor"
    rc = main(["corona", "--input", str(src), "--ball", "0,0,1", "--delta0", "0.9", "--alpha", "0.3",
               "--eps", "0.025", "--t-min", "0.125", "--reference", "coordinate", "--output", str(out)])
    assert rc == EXIT_OK
    labels = _read(out / "labels.csv")
    assert labels and all(r["label"] == "Z" for r in labels)
    report = json.loads((out / "report.json").read_text())
    assert report["pass"] and report["coverage"] >= 0.9
    assert len(_read(out / "graph.csv")) == 512
    # an unreachable coverage demand is reported as an acceptance failure
    thin = mu.with_weights(np.asarray(mu.weights) * 0.3)
    save_point_csv(src, thin)
    rc = main(["corona", "--input", str(src), "--ball", "0,0,1", "--delta0", "0.9", "--alpha", "0.3",
               "--eps", "0.025", "--t-min", "0.125", "--output", str(tmp_path / "thin")])
    assert rc == EXIT_FAIL
    assert main(["corona", "--input", str(src), "--ball", "0,1"]) == EXIT_ERROR


def test_experiment_command(tmp_path):
    rc = main(["experiment", "fourier-check", "--output", str(tmp_path)])
    assert rc == EXIT_OK
    man = json.loads((tmp_path / "fourier-check.manifest.json").read_text())
    assert man["pass"] and len(man["config_hash"]) == 64
    assert main(["experiment", "no-such-thing"]) == EXIT_ERROR
