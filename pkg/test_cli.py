"""
Command-line tests, including an end-to-end train -> gen-vnnlib -> bench -> report run
"""

import os
import sys

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from utils.datasets import save_feature_csv
from utils.network import AffineLayer, Network, dump_model
from utils.preprocess import load_pgm
from utils.specgen import InputSpec
from utils.verdict import load_verdict
from utils.vnnlib import emit


@pytest.fixture
def identity_model(tmp_path):
    net = Network(input_dim=2, layers=[AffineLayer(weights=np.eye(2), bias=np.zeros(2))], num_classes=2)
    path = tmp_path / "identity.json"
    path.write_text(dump_model(net))
    return str(path)


def box_file(tmp_path, eps):
    x = np.array([1.0, 0.0])
    spec = InputSpec(x=x, lower=x - eps, upper=x + eps, epsilon=eps, mask="all", target=0)
    path = tmp_path / f"box_{eps}.vnnlib"
    path.write_text(emit(spec, 0, 2))
    return str(path)


def test_verify_prints_holds(tmp_path, identity_model, capsys):
    code = main(["--quiet", "verify", "--model", identity_model, "--vnnlib", box_file(tmp_path, 0.4)])
    assert code == EXIT_OK
    assert capsys.readouterr().out == "holds\n"


def test_verify_prints_violated_and_saves_verdict(tmp_path, identity_model, capsys):
    out = tmp_path / "verdict.json"
    code = main(["--quiet", "verify", "--model", identity_model, "--vnnlib", box_file(tmp_path, 0.6),
                 "--out", str(out)])
    assert code == EXIT_OK
    assert capsys.readouterr().out == "violated\n"
    verdict = load_verdict(str(out))
    assert verdict.counterexample is not None
    assert verdict.counterexample[1] >= verdict.counterexample[0]


def test_verify_from_dataset_row(tmp_path, identity_model, capsys):
    data = tmp_path / "rows.csv"
    save_feature_csv(str(data), np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]), [0, 1, 0])
    code = main(["--quiet", "verify", "--model", identity_model, "--data", str(data), "--index", "0",
                 "--eps", "0.0", "--method", "exact"])
    assert code == EXIT_OK
    assert capsys.readouterr().out == "holds\n"


def test_byteplot_two_bytes(tmp_path):
    binary = tmp_path / "sample.bin"
    binary.write_bytes(bytes([0x00, 0xFF]))
    out = tmp_path / "sample.pgm"
    assert main(["--quiet", "byteplot", str(binary), "--width", "2", "--out", str(out)]) == EXIT_OK
    img = load_pgm(str(out))
    assert (img.width, img.height) == (2, 1)
    assert img.to_array().tolist() == [[0, 255]]


def test_usage_errors_exit_one(capsys):
    assert main(["verify", "--bogus"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["bench", "--model", "m.json", "--data", "d.csv", "--out", "o"]) == EXIT_USAGE


def test_runtime_errors_exit_two(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    assert main(["--quiet", "verify", "--model", missing, "--vnnlib", "x.vnnlib"]) == EXIT_RUNTIME
    assert "verify failed" in capsys.readouterr().err


def test_vnnlib_shape_must_match_model(tmp_path, identity_model):
    path = tmp_path / "wide.vnnlib"
    x = np.zeros(3)
    path.write_text(emit(InputSpec(x=x, lower=x, upper=x, epsilon=0.0, mask="all", target=0), 0, 2))
    assert main(["--quiet", "verify", "--model", identity_model, "--vnnlib", str(path)]) == EXIT_RUNTIME


def test_end_to_end_pipeline(tmp_path, capsys):
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, size=80)
    X = rng.normal(scale=0.4, size=(80, 3)) + np.where(y[:, None] == 1, 1.0, -1.0)
    raw = tmp_path / "raw.csv"
    save_feature_csv(str(raw), X, y, ["size", "entropy", "imports"])

    scaled = tmp_path / "scaled.csv"
    schema = tmp_path / "schema.json"
    assert main(["--quiet", "scale", "--data", str(raw), "--out", str(scaled),
                 "--scaler-out", str(tmp_path / "scaler.json"), "--schema-out", str(schema)]) == EXIT_OK

    model = tmp_path / "mlp.json"
    assert main(["--quiet", "train", "--data", str(scaled), "--hidden", "4", "--epochs", "5",
                 "--batch-size", "16", "--lr", "0.01", "--out", str(model)]) == EXIT_OK

    specs = tmp_path / "specs"
    assert main(["--quiet", "gen-vnnlib", "--data", str(scaled), "--schema", str(schema), "--model", str(model),
                 "--samples", "3", "--mask", "all", "--eps", "0.5", "--eps", "1", "--out", str(specs)]) == EXIT_OK
    files = sorted(name for name in os.listdir(specs) if name.endswith(".vnnlib"))
    assert len(files) == 6
    assert main(["--quiet", "verify", "--model", str(model), "--vnnlib", str(specs / files[0]),
                 "--nr", "20"]) == EXIT_OK
    assert capsys.readouterr().out.strip() in {"holds", "violated", "timeout"}

    results = tmp_path / "results"
    assert main(["--quiet", "bench", "--model", str(model), "--data", str(scaled), "--schema", str(schema),
                 "--mask", "all", "--mask", "discrete", "--eps", "0.5", "--eps", "1", "--samples", "4",
                 "--nr", "20", "--out", str(results)]) == EXIT_OK
    for name in ("report.csv", "aggregate.csv", "per_class.csv"):
        assert (results / name).is_file()

    recomputed = tmp_path / "recomputed.csv"
    assert main(["--quiet", "report", str(results / "report.csv"), "--out", str(recomputed)]) == EXIT_OK
    assert recomputed.read_text() == (results / "aggregate.csv").read_text()
