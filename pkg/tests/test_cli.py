import json

import pytest

from gnntrack import io
from gnntrack.cli import main

FAST = ["--set", "dml.epochs=2", "--set", "dml.batches_per_epoch=2", "--set", "dml.kappa=4",
        "--set", "gnn.epochs=1", "--set", "gnn.L=2", "--set", "gnn.d_v=8", "--set", "gnn.d_e=8",
        "--set", "gnn.node_hidden=8", "--set", "gnn.classifier_widths=[8]"]


def _pipeline(root):
    data, model, out = root / "data", root / "model", root / "out"
    assert main(["synth", "--preset", "tiny", "--seed", "4", "--count", "2", "--out", str(data),
                 "--set", "synth.p_divide=0.1"]) == 0
    assert main(["train-dml", "--data", str(data), "--out", str(model / "dml")] + FAST) == 0
    assert main(["train-gnn", "--data", str(data / "seq_000"), "--embedder",
                 str(model / "dml" / "embedder.json"), "--out", str(model)] + FAST) == 0
    assert main(["infer", "--data", str(data / "seq_001"), "--model", str(model / "tracker.json"),
                 "--out", str(out), "--overlay"]) == 0
    assert main(["eval", "--pred", str(out / "tracks.txt"), "--gt", str(data / "seq_001" / io.GT_TRACKS),
                 "--edges", str(out / "edges.csv"), "--out", str(out / "metrics.json")]) == 0
    return out


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    return _pipeline(tmp_path_factory.mktemp("a")), _pipeline(tmp_path_factory.mktemp("b"))


def test_pipeline_outputs(two_runs):
    out = two_runs[0]
    for name in ("tracks.txt", "tracks_instances.csv", "edges.csv", "detections.csv",
                 "embeddings.csv", "overlay.png", "metrics.json"):
        assert (out / name).stat().st_size > 0
    m = io.read_json(out / "metrics.json")
    assert 0.0 <= m["aa"] <= 1.0 and 0.0 <= m["te"] <= 1.0
    edges = io.read_edges(out / "edges.csv")
    assert all(g is not None for g in edges["gt"])


def test_pipeline_is_byte_deterministic(two_runs):
    a, b = two_runs
    for name in ("tracks.txt", "tracks_instances.csv", "edges.csv", "metrics.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_eval_to_stdout(two_runs, capsys):
    out = two_runs[0]
    assert main(["eval", "--pred", str(out / "tracks.txt"), "--gt", str(out / "tracks.txt")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["aa"] == 1.0 and rep["te"] == 1.0


def test_exit_codes(tmp_path, capsys):
    assert main(["synth", "--preset", "nowhere", "--out", str(tmp_path)]) == 2
    assert main(["synth", "--out", str(tmp_path), "--set", "gnn.L=0"]) == 2
    assert main(["synth", "--out", str(tmp_path), "--count", "0"]) == 2
    assert main(["train-gnn", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2
    assert main(["eval", "--pred", str(tmp_path / "p.txt"), "--gt", str(tmp_path / "g.txt")]) == 1
    (tmp_path / "bad.json").write_text("{}")
    assert main(["infer", "--data", str(tmp_path), "--model", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path)]) in (1, 2)
    err = capsys.readouterr().err
    assert "gnntrack:" in err


def test_training_requires_ground_truth(tmp_path):
    assert main(["synth", "--preset", "tiny", "--out", str(tmp_path / "d")]) == 0
    (tmp_path / "d" / io.GT_TRACKS).unlink()
    assert main(["train-dml", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m")]) == 2
