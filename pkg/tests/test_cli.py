import io
import json

import pytest

from midrank.cli import main

SMALL = ["--dim", "4", "--train-sequences", "30", "--train-length", "6", "--test-sequences", "8", "--test-length", "6"]
FAST_TRAIN = ["--cv-folds", "0", "--positives", "3", "--mu", "0.1", "--select-length", "6", "--trees", "2"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--out-dir", str(d), "--seed", "7", *SMALL]) == 0
    assert main(["train", "--train", str(d / "train.jsonl"), "--model", str(d / "m.json"), "--lambdas", "2-5", *FAST_TRAIN]) == 0
    return d


def test_negative_noise_is_a_usage_error(tmp_path, capsys):
    assert main(["generate", "--out-dir", str(tmp_path), "--noise-sigma", "-1"]) == 1
    assert "noise_sigma" in capsys.readouterr().err


def test_bad_lambda_range_is_a_usage_error(tmp_path, capsys):
    assert main(["train", "--train", str(tmp_path / "x.jsonl"), "--lambdas", "1-3"]) == 1


def test_missing_dataset_is_a_data_error(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    assert main(["train", "--train", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_required_option(capsys):
    assert main(["rank"]) == 1
    assert "--model" in capsys.readouterr().err


def test_generate_is_reproducible(tmp_path, workdir):
    assert main(["generate", "--out-dir", str(tmp_path), "--seed", "7", *SMALL]) == 0
    for name in ("train.jsonl", "test.jsonl"):
        assert (tmp_path / name).read_bytes() == (workdir / name).read_bytes()


def test_seed_from_environment(tmp_path, monkeypatch, workdir):
    monkeypatch.setenv("MIDRANK_SEED", "7")
    assert main(["generate", "--out-dir", str(tmp_path), *SMALL]) == 0
    assert (tmp_path / "train.jsonl").read_bytes() == (workdir / "train.jsonl").read_bytes()


def test_config_file_and_flag_precedence(tmp_path, workdir):
    cfg = tmp_path / "c.toml"
    cfg.write_text('seed = 7\n[generate]\ndim = 4\ntrain_sequences = 30\ntrain_length = 6\ntest_sequences = 8\ntest_length = 99\n')
    assert main(["generate", "--config", str(cfg), "--out-dir", str(tmp_path), "--test-length", "6"]) == 0
    assert (tmp_path / "test.jsonl").read_bytes() == (workdir / "test.jsonl").read_bytes()
    bad = tmp_path / "bad.toml"
    bad.write_text("[generate]\nbogus = 1\n")
    assert main(["generate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1


def test_train_writes_model_and_report(workdir):
    model = json.loads((workdir / "m.json").read_text())
    assert [r["lambda"] for r in model["rankers"]] == [2, 3, 4, 5]
    report = json.loads((workdir / "m.report.json").read_text())
    assert [e["lambda"] for e in report["lambdas"]] == [2, 3, 4, 5]
    assert all(e["epochs"] >= 1 and e["duality_gap"] >= 0 for e in report["lambdas"])
    assert model["best_single_lambda"] in (3, 4, 5)


def test_train_single_pair_ranker(tmp_path, workdir):
    out = tmp_path / "pair.json"
    assert main(["train", "--train", str(workdir / "train.jsonl"), "--model", str(out), "--lambdas", "2", *FAST_TRAIN]) == 0
    assert [r["lambda"] for r in json.loads(out.read_text())["rankers"]] == [2]


def test_rank_dataset_with_all_fusions(tmp_path, workdir):
    out = tmp_path / "ranked.json"
    args = ["rank", "--model", str(workdir / "m.json"), "--input", str(workdir / "test.jsonl"), "--all-fusions", "--output", str(out)]
    assert main(args) == 0
    results = json.loads(out.read_text())["results"]
    assert len(results) == 8
    for r in results:
        assert sorted(r["order"]) == list(range(6))
        assert set(r["fused"]) == {"weighted_majority", "winner_takes_all", "best_single"}
        assert [p["lambda"] for p in r["per_lambda"]] == [3, 4, 5]


def test_rank_from_stdin(monkeypatch, capsys, workdir):
    seq = {"id": "s", "items": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]}
    monkeypatch.setattr("sys.stdin", io.StringIO(json.dumps(seq)))
    assert main(["rank", "--model", str(workdir / "m.json"), "--input", "-"]) == 0
    res = json.loads(capsys.readouterr().out)["results"][0]
    assert res["id"] == "s" and sorted(res["order"]) == [0, 1, 2, 3]


def test_rank_too_short_sequence_reports_error(monkeypatch, capsys, workdir):
    seq = {"id": "short", "items": [[1, 0, 0, 0], [0, 1, 0, 0]]}
    monkeypatch.setattr("sys.stdin", io.StringIO(json.dumps(seq)))
    assert main(["rank", "--model", str(workdir / "m.json"), "--input", "-"]) == 0
    res = json.loads(capsys.readouterr().out)["results"][0]
    assert res["id"] == "short" and "error" in res


def test_rank_dimension_mismatch(monkeypatch, workdir):
    monkeypatch.setattr("sys.stdin", io.StringIO(json.dumps({"items": [[1, 0], [0, 1], [1, 1]]})))
    assert main(["rank", "--model", str(workdir / "m.json"), "--input", "-"]) == 2


def test_evaluate_with_ablation(tmp_path, capsys, workdir):
    prefix = tmp_path / "rep"
    args = ["evaluate", "--model", str(workdir / "m.json"), "--test", str(workdir / "test.jsonl"), "--output", str(prefix)]
    assert main([*args, "--all-fusions", "--ablate-lambda", "--compare-exhaustive", "--trees", "2"]) == 0
    data = json.loads(prefix.with_suffix(".json").read_text())
    methods = [r["method"] for r in data["rows"]]
    assert methods[0] == "midrank-weighted_majority"
    assert {"ranksvm", "lambda=2", "lambda=3", "lambda=4", "lambda=5"} <= set(methods)
    for r in data["rows"]:
        assert -1 <= r["kt"] <= 1 and r["pair_acc"] == pytest.approx(50 * (r["kt"] + 1))
    assert data["config"]["trees"] == 2
    assert 0 <= data["exhaustive"]["agreement"] <= 1
    csv = prefix.with_suffix(".csv").read_text().splitlines()
    assert csv[0].startswith("# config") and csv[1] == "method,ndcg,kt,pair_acc,n_sequences"


def test_evaluate_resampled(tmp_path, workdir):
    prefix = tmp_path / "rs"
    args = ["evaluate", "--model", str(workdir / "m.json"), "--test", str(workdir / "test.jsonl"), "--output", str(prefix)]
    assert main([*args, "--sample-length", "7", "--sample-count", "5", "--trees", "1"]) == 0
    rows = json.loads(prefix.with_suffix(".json").read_text())["rows"]
    assert rows[0]["n_sequences"] == 5
    assert main([*args, "--sample-length", "100"]) == 2
