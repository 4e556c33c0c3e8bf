import pandas as pd
import pytest

from evaluation.evaluator import Evaluator
from evaluation.leaderboard import LeaderboardError, build_leaderboard
from training.repeats import aggregate_results
from tests.helpers import report_with_accuracy


def result(family, *correct, total=10):
    reports = [report_with_accuracy(c, total) for c in correct]
    return aggregate_results(family, list(range(len(reports))), reports)


def test_ranked_by_mean_accuracy():
    board = build_leaderboard([result("fnn_base", 3, 4), result("clip_ic", 8, 8), result("cnn_base", 4, 5)])
    assert board.families == ["clip_ic", "cnn_base", "fnn_base"]
    frame = board.to_frame()
    assert list(frame["rank"]) == [1, 2, 3]
    assert frame.loc[0, "accuracy_mean"] == pytest.approx(0.8)
    assert frame.loc[0, "accuracy_sigma"] == 0.0


def test_ties_broken_by_f1_then_name():
    a = result("vit", 6, 6)
    b = result("siglip2", 6, 6)
    board = build_leaderboard([a, b])
    assert board.families == ["siglip2", "vit"]


def test_duplicate_family_rejected():
    with pytest.raises(LeaderboardError, match="Duplicate"):
        build_leaderboard([result("vit", 5, 6), result("vit", 6, 7)])


def test_empty_rejected():
    with pytest.raises(LeaderboardError):
        build_leaderboard([])


def test_markdown_and_csv(tmp_path):
    partial = aggregate_results("cnn_gen", [0], [report_with_accuracy(5)], failures={1: "diverged"})
    board = build_leaderboard([result("clip_ic", 8, 7), partial])
    table = board.to_markdown()
    assert table.splitlines()[0] == "| Model | Accuracy | Precision | Recall | F1 |"
    assert "| CLIP_IC | 0.750 ± 0.071 |" in table
    assert "CNN_gen (partial)" in table
    text = board.to_csv(tmp_path / "leaderboard.csv").read_text()
    assert text.splitlines()[0].startswith("rank,family,repeats,partial,accuracy_mean,accuracy_sigma")


def test_reference_comparison():
    board = build_leaderboard([result("clip_ic", 7, 8, total=10), result("cnn_base", 4, 4)])
    summary = Evaluator().compare_to_reference(board, tolerance=0.1)
    assert summary["families"]["clip_ic"]["within_tolerance"]
    assert summary["clip_ic_floor"] is True
    assert summary["rankings"] == [{"better": "clip_ic", "worse": "cnn_base", "holds": True}]
    assert summary["pass_rate"] == 1.0


def test_csv_carries_provenance_columns(tmp_path):
    board = build_leaderboard([result("clip_ic", 8, 7), result("cnn_base", 4, 4)])
    prov = {"config_hash": "abc123", "seed": 42, "code_version": "1.0.0"}
    frame = pd.read_csv(board.to_csv(tmp_path / "leaderboard.csv", prov), dtype={"config_hash": str})
    assert list(frame.columns[-3:]) == ["config_hash", "seed", "code_version"]
    assert set(frame["config_hash"]) == {"abc123"}
    assert set(frame["seed"]) == {42}
