import json

import pytest

from budget_router.cli import main
from budget_router.core import EpisodeLog
from budget_router.ingest import DatasetManifest, load_manifest, write_manifest

from conftest import make_catalog, make_records


@pytest.fixture(scope="module")
def single_model_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "solo.jsonl"
    manifest = DatasetManifest(
        catalog=make_catalog(1),
        embedding_dimension=4,
        historical=make_records(25, n_models=1, dim=4, seed=0),
        test_queries=[r.as_query() for r in
                      make_records(10, n_models=1, dim=4, seed=1, prefix="t")],
    )
    write_manifest(manifest, path)
    return str(path)


@pytest.fixture(scope="module")
def three_model_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli3") / "trio.jsonl"
    manifest = DatasetManifest(
        catalog=make_catalog(3),
        embedding_dimension=4,
        historical=make_records(50, n_models=3, dim=4, seed=2),
        test_queries=[r.as_query() for r in
                      make_records(16, n_models=3, dim=4, seed=3, prefix="t")],
    )
    write_manifest(manifest, path)
    return str(path)


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_route_single_model(capsys, tmp_path, single_model_dataset):
    out = tmp_path / "episode.jsonl"
    code, stdout, _ = _run(capsys, "route", "--dataset", single_model_dataset,
                           "--epsilon", "0.2", "--k", "3", "--seed", "5",
                           "--search-beam", "25", "--out", str(out))
    assert code == 0
    payload = json.loads(stdout)
    assert payload["metrics"]["throughput"] >= 1
    log = EpisodeLog.load(out)
    assert all(r.model in (None, 0) for r in log.records)
    assert (tmp_path / "episode.jsonl.run.json").exists()


def test_route_is_deterministic(capsys, tmp_path, three_model_dataset):
    outs = []
    stdouts = []
    for name in ("a.jsonl", "b.jsonl"):
        out = tmp_path / name
        code, stdout, _ = _run(capsys, "route", "--dataset", three_model_dataset,
                               "--epsilon", "0.25", "--k", "3", "--seed", "11",
                               "--search-beam", "50", "--out", str(out))
        assert code == 0
        outs.append(out.read_bytes())
        stdouts.append(json.loads(stdout)["metrics"])
    assert outs[0] == outs[1]
    assert stdouts[0] == stdouts[1]


def test_route_rejects_unknown_admission(capsys, three_model_dataset):
    code, _, stderr = _run(capsys, "route", "--dataset", three_model_dataset,
                           "--epsilon", "0.25", "--admission", "optimism")
    assert code == 2
    err = json.loads(stderr)
    assert err["field"] == "admission"
    assert err["command"] == "route"


def test_route_small_epsilon_fails_cleanly(capsys, three_model_dataset):
    # 0.025 * 16 queries < 1 observation, a routing error, not a crash
    code, _, stderr = _run(capsys, "route", "--dataset", three_model_dataset)
    assert code == 1
    err = json.loads(stderr)
    assert err["error"] == "ValueError"
    assert "observation stage" in err["message"]


def test_ingest_summarizes_and_resplits(capsys, tmp_path, three_model_dataset):
    out = tmp_path / "resplit.jsonl"
    code, stdout, _ = _run(capsys, "ingest", "--dataset", three_model_dataset,
                           "--test-size", "20", "--seed", "3",
                           "--out", str(out))
    assert code == 0
    payload = json.loads(stdout)
    assert payload["test_queries"] == 20
    assert payload["historical"] == 46
    back = load_manifest(out)
    back.validate()
    assert len(back.test_queries) == 20
    run_manifest = json.loads((tmp_path / "resplit.jsonl.run.json").read_text())
    assert run_manifest["command"] == "ingest"
    assert len(run_manifest["config_sha256"]) == 64


def test_index_then_route_with_it(capsys, tmp_path, three_model_dataset):
    idx = tmp_path / "graph.npz"
    code, stdout, _ = _run(capsys, "index", "--dataset", three_model_dataset,
                           "--k", "3", "--search-beam", "50", "--out", str(idx))
    assert code == 0
    assert json.loads(stdout)["indexed"] == 50
    code, stdout, _ = _run(capsys, "route", "--dataset", three_model_dataset,
                           "--epsilon", "0.25", "--k", "3", "--index", str(idx))
    assert code == 0
    assert "metrics" in json.loads(stdout)


def test_oracle_payload(capsys, three_model_dataset):
    code, stdout, _ = _run(capsys, "oracle", "--dataset", three_model_dataset,
                           "--k", "3", "--search-beam", "50")
    assert code == 0
    payload = json.loads(stdout)
    assert payload["true_optimum"] > 0
    assert payload["method"] in ("milp", "lp")
    assert len(payload["budgets"]) == 3
    assert len(payload["binding_true"]) == 3


def test_experiment_full_grid(capsys, tmp_path, three_model_dataset):
    out = tmp_path / "report.json"
    algorithms = "ours,random,greedy_perf,greedy_cost,knn_perf,knn_cost,batch_split"
    code, stdout, _ = _run(capsys, "experiment", "--dataset", three_model_dataset,
                           "--algorithms", algorithms, "--epsilon", "0.25",
                           "--k", "3", "--search-beam", "50", "--split", "uniform",
                           "--out", str(out))
    assert code == 0
    payload = json.loads(stdout)
    assert payload["cells"] == 7
    assert payload["failed"] == 0
    report = json.loads(out.read_text())
    assert {r["algorithm"] for r in report["rows"]} == set(algorithms.split(","))
    assert len(report["oracle_rows"]) == 2
    kinds = sorted(r["kind"] for r in report["oracle_rows"])
    assert kinds == ["approx_optimum", "optimum"]
    assert (tmp_path / "report.summary.csv").exists()
    assert (tmp_path / "report.long.csv").exists()
    assert (tmp_path / "report.json.run.json").exists()


def test_report_regenerates_csvs(capsys, tmp_path, three_model_dataset):
    out = tmp_path / "rep.json"
    code, _, _ = _run(capsys, "experiment", "--dataset", three_model_dataset,
                      "--algorithms", "random", "--epsilon", "0.25",
                      "--k", "3", "--search-beam", "50", "--split", "uniform",
                      "--out", str(out))
    assert code == 0
    summary = tmp_path / "rep.summary.csv"
    long_csv = tmp_path / "rep.long.csv"
    summary_bytes = summary.read_bytes()
    long_bytes = long_csv.read_bytes()
    summary.unlink()
    long_csv.unlink()
    code, stdout, _ = _run(capsys, "report", "--dataset", str(out))
    assert code == 0
    assert summary.read_bytes() == summary_bytes
    assert long_csv.read_bytes() == long_bytes


def test_unknown_algorithm_is_config_error(capsys, tmp_path, three_model_dataset):
    code, _, stderr = _run(capsys, "experiment", "--dataset", three_model_dataset,
                           "--algorithms", "ours,quantum",
                           "--out", str(tmp_path / "r.json"))
    assert code == 2
    err = json.loads(stderr)
    assert err["field"] == "algorithms"
    assert "quantum" in err["message"]


def test_experiment_requires_out(capsys, three_model_dataset):
    code, _, stderr = _run(capsys, "experiment", "--dataset", three_model_dataset)
    assert code == 2
    assert json.loads(stderr)["field"] == "out"


def test_config_file_unknown_field(capsys, tmp_path, three_model_dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": three_model_dataset, "warp_speed": 9}))
    code, _, stderr = _run(capsys, "ingest", "--config", str(cfg))
    assert code == 2
    err = json.loads(stderr)
    assert err["field"] == "warp_speed"
    assert "warp_speed" in err["message"]


def test_config_file_type_check(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": "five"}))
    code, _, stderr = _run(capsys, "ingest", "--config", str(cfg))
    assert code == 2
    assert json.loads(stderr)["field"] == "k"


def test_flags_override_config(capsys, tmp_path, three_model_dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": "/nonexistent.jsonl"}))
    code, stdout, _ = _run(capsys, "ingest", "--config", str(cfg),
                           "--dataset", three_model_dataset)
    assert code == 0
    assert json.loads(stdout)["models"] == 3


def test_missing_dataset_file(capsys, tmp_path):
    code, _, stderr = _run(capsys, "ingest", "--dataset",
                           str(tmp_path / "absent.jsonl"))
    assert code == 1
    assert json.loads(stderr)["error"] in ("FileNotFoundError", "OSError")
