import csv
import json

import pytest

from pathgnn.cli import main
from pathgnn.graph import build_graph, graph_to_record


@pytest.fixture
def triangle_file(tmp_path, triangle):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(graph_to_record(triangle)))
    return path


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen", "--structures", "30", "--nodes", "4:8", "--samplings", "2",
                 "--seed", "7", "--out", str(out)]) == 0
    return out


TINY_TRAIN = ["--layers", "2", "--width", "8", "--hidden", "4", "--lr", "1e-2", "--max-epochs", "2"]


def test_oracle_prints_path_and_cost(triangle_file, capsys):
    assert main(["oracle", "--in", str(triangle_file)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[:2] == ["path [0, 1, 2]", "cost 2"]


def test_oracle_unreachable_is_runtime_error(tmp_path, capsys):
    g = build_graph(4, [(0, 1, 1.0), (2, 3, 1.0)], 0, 3)
    path = tmp_path / "g.json"
    path.write_text(json.dumps(graph_to_record(g)))
    assert main(["oracle", "--in", str(path)]) == 1
    assert "unreachable" in capsys.readouterr().err


def test_invalid_graph_message_is_verbatim(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"version": "v1", "n": 3, "edges": [[0, 1, -1.0]],
                                "source": 0, "destination": 2}))
    assert main(["oracle", "--in", str(path)]) == 1
    assert "non-positive" in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["gen", "--bogus"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["eval", "--split", "test"])
    assert info.value.code == 2


def test_gen_writes_splits_and_manifest(data_dir):
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"):
        assert (data_dir / name).exists()
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["config"]["node_range"] == [4, 8]
    assert manifest["counts"]["train"] + manifest["counts"]["val"] + manifest["counts"]["test"] == 60


def test_gen_threads_do_not_change_files(tmp_path, data_dir):
    assert main(["--threads", "3", "gen", "--structures", "30", "--nodes", "4:8",
                 "--samplings", "2", "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_train_twice_gives_identical_metrics(tmp_path, data_dir):
    for run in ("a", "b"):
        assert main(["train", "--data", str(data_dir), "--seed", "7", "--out", str(tmp_path / run),
                     *TINY_TRAIN]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["model"]["n_layers"] == 2 and manifest["train"]["seed"] == 7


@pytest.fixture(scope="module")
def model_file(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(data_dir), "--out", str(out), *TINY_TRAIN]) == 0
    return out / "model.ckpt"


def test_eval_writes_report(tmp_path, data_dir, model_file, capsys):
    assert main(["eval", "--model", str(model_file), "--data", str(data_dir), "--seed", "3",
                 "--sweep", "4:5", "6:8", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("Path Accuracy")
    reports = list(tmp_path.glob("report-*-seed3.csv"))
    assert len(reports) == 1
    rows = list(csv.reader(open(reports[0])))
    assert rows[1][:2] == ["all", "all"]
    assert list(tmp_path.glob("manifest-*-seed3.json"))


def test_perturb_then_eval(tmp_path, data_dir, model_file):
    out = tmp_path / "p.jsonl"
    assert main(["perturb", "--data", str(data_dir), "--mode", "remove-random-edge",
                 "--seed", "1", "--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "p.jsonl.manifest.json").exists()
    assert main(["eval", "--model", str(model_file), "--data", str(out), "--out", str(tmp_path)]) == 0


def test_predict_outputs_probabilities(triangle_file, model_file, capsys):
    assert main(["predict", "--model", str(model_file), "--in", str(triangle_file)]) == 0
    body = json.loads(capsys.readouterr().out)
    assert len(body["node_probs"]) == 3 and len(body["edge_probs"]) == 3
    assert (body["path"] is None) == (body["failure"] is not None)


def test_predict_bad_checkpoint(tmp_path, triangle_file, capsys):
    bad = tmp_path / "x.ckpt"
    bad.write_bytes(b"garbage")
    assert main(["predict", "--model", str(bad), "--in", str(triangle_file)]) == 1
    assert "magic" in capsys.readouterr().err


def test_bench_small(tmp_path, model_file, capsys):
    out = tmp_path / "t.csv"
    assert main(["bench", "--model", str(model_file), "--nodes", "8", "--max-hops", "2",
                 "--per-bucket", "3", "--reps", "2", "--warmup", "1", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0][0] == "hops" and len(rows) == 3
    assert float(rows[1][4]) == 1.0 and float(rows[1][5]) == 1.0
