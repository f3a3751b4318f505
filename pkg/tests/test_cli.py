import csv
import json
import os

import pytest

from grtm.cli import EXIT_DATA, EXIT_USAGE, main
from grtm.corpus import write_cites, write_content
from grtm.state import PosteriorEstimate
from grtm.synthetic import community_network

FAST = ["--k", "2", "--burn-in", "8", "--folds", "3", "--neg-ratio", "0.1", "--seed", "5",
        "--word-samples", "3", "--word-burn-in", "3"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    corpus = community_network(n_docs=30, seed=1)
    content, cites = root / "net.content", root / "net.cites"
    with open(content, "w") as fh:
        write_content(corpus, fh)
    with open(cites, "w") as fh:
        write_cites(corpus, fh)
    return ["--dataset-content", str(content), "--dataset-cites", str(cites)]


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    assert main(["train", *dataset, *FAST, "--out", str(out)]) == 0
    assert main(["eval", "--out", str(out)]) == 0
    return out


def test_train_writes_models_config_and_timing(trained):
    names = set(os.listdir(trained))
    assert {"config.txt", "timing.csv", "metrics.csv", "metrics.json"} <= names
    assert {f"model_fold{k}.json" for k in range(3)} <= names
    model = PosteriorEstimate.load(str(trained / "model_fold0.json"))
    assert model.K == 2
    assert model.extra["n_folds"] == 3
    with open(trained / "timing.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3


def test_metrics_csv_layout(trained):
    with open(trained / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["metric"] for r in rows} == {"link_rank", "word_rank", "auc"}
    assert [r["fold"] for r in rows if r["metric"] == "auc"] == ["0", "1", "2", "mean"]
    summary = json.loads((trained / "metrics.json").read_text())["summary"]
    assert summary["auc"]["mean"] > 0.5


def test_rerun_from_saved_config_is_byte_identical(trained, tmp_path):
    again = tmp_path / "again"
    assert main(["train", "--config", str(trained / "config.txt"), "--out", str(again)]) == 0
    assert main(["eval", "--out", str(again)]) == 0
    for name in ("metrics.csv", "model_fold0.json", "model_fold2.json"):
        assert (again / name).read_bytes() == (trained / name).read_bytes()


def test_single_fold_and_parallel_jobs_agree(dataset, trained, tmp_path):
    one = tmp_path / "one"
    assert main(["train", *dataset, *FAST, "--only-fold", "1", "--jobs", "2", "--out", str(one)]) == 0
    assert os.listdir(one).count("model_fold1.json") == 1
    assert "model_fold0.json" not in os.listdir(one)
    assert (one / "model_fold1.json").read_bytes() == (trained / "model_fold1.json").read_bytes()


def test_suggest_and_export(trained, tmp_path, capsys):
    query = tmp_path / "q.txt"
    query.write_text("0 1 2 3 4 5 6 7 8 9\n")
    titles = tmp_path / "titles.tsv"
    titles.write_text("d0\tFirst paper\n")
    out = tmp_path / "s.csv"
    model = str(trained / "model_fold0.json")
    assert main(["suggest", "--model", model, "--query", str(query), "--top-k", "5", "--titles", str(titles),
                 "--output", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["rank"] for r in rows] == ["1", "2", "3", "4", "5"]
    scores = [float(r["score"]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert main(["suggest", "--model", model, "--query", str(query)]) == 0
    assert capsys.readouterr().out.startswith("rank,doc_id,title,score")
    exp = tmp_path / "exp"
    assert main(["export", "--model", model, "--out", str(exp), "--top-m", "3"]) == 0
    topics = (exp / "topics.txt").read_text().splitlines()
    assert len(topics) == 2 and topics[0].startswith("topic 0: ")
    with open(exp / "weights.csv") as fh:
        assert len(list(csv.reader(fh))) == 2


def test_sweep(dataset, tmp_path):
    out = tmp_path / "sweep"
    args = ["sweep", *dataset, *FAST, "--only-fold", "0", "--out", str(out), "--param", "c-pos", "--values", "1,4"]
    assert main(args) == 0
    with open(out / "sweep_c_pos.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["c_pos"] for r in rows} == {"1.0", "4.0"}
    assert (out / "c_pos=1.0" / "metrics.csv").is_file()


def test_usage_errors(dataset, tmp_path, trained):
    content_only = dataset[:2]
    assert main(["train", *content_only, *FAST, "--out", str(tmp_path / "a")]) == EXIT_USAGE
    assert main(["train", *dataset, *FAST, "--loss", "hinge", "--ell", "0.5",
                 "--out", str(tmp_path / "b")]) == EXIT_USAGE
    empty = tmp_path / "empty.txt"
    empty.write_text("\n")
    model = str(trained / "model_fold0.json")
    assert main(["suggest", "--model", model, "--query", str(empty)]) == EXIT_USAGE
    assert main(["suggest", "--model", str(tmp_path / "missing.json"), "--query", str(empty)]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["train", "--loss", "squared"])


def test_data_errors(dataset, tmp_path, trained):
    bad_query = tmp_path / "q.txt"
    bad_query.write_text("0 1 999\n")
    model = str(trained / "model_fold0.json")
    assert main(["suggest", "--model", model, "--query", str(bad_query)]) == EXIT_DATA
    broken = tmp_path / "broken.content"
    broken.write_text("a\t1\t0\tX\nb\t1\tX\n")
    cites = tmp_path / "x.cites"
    cites.write_text("a\tb\n")
    assert main(["train", "--dataset-content", str(broken), "--dataset-cites", str(cites), *FAST,
                 "--out", str(tmp_path / "c")]) == EXIT_DATA
    assert main(["eval", "--config", str(trained / "config.txt"), "--k", "3", "--out", str(trained)]) == EXIT_DATA
