import math

import pytest

from experiments.experiment     import ExperimentConfig, ImageResult, Report
from experiments.report         import (CURVE_HEADER, PER_IMAGE_HEADER, emit_comparison,
                                        emit_report, per_image_rows, summarize)
from utils                      import get_csv_rows, get_json_data


def make_report(results, iterations=10, checkpoints=(5, 10), attack="superpixel"):
    config = ExperimentConfig.from_dict({
        "version": 1, "attack": attack, "dataset": "d.csv", "model": {"toy": "m.bin"},
        "iterations": iterations, "checkpoints": list(checkpoints), "epsilon": 0.05,
    })
    return Report(config, results)

def result(image_id, first_success_iter=None, clean_correct=True, queries=10, loss=-0.5,
           error=None):
    success = first_success_iter is not None
    return ImageResult(image_id, f"img{image_id}.png", 1, clean_correct, success,
                       first_success_iter, loss, queries, error=error)


@pytest.fixture
def report():
    return make_report([
        result(0, first_success_iter=3, queries=3, loss=0.25),
        result(1),
        result(2, first_success_iter=0, clean_correct=False, queries=0, loss=0.75),
        result(3, loss=math.nan, queries=2, error="model server error"),
    ])


### Rates ###
def test_success_rates(report):
    assert report.success_rate(0) == 0.25
    assert report.success_rate(2) == 0.25
    assert report.success_rate(3) == 0.5
    assert report.checkpoint_rates() == {5: 50.0, 10: 50.0}
    assert report.clean_accuracy() == 0.75

def test_curve_is_nondecreasing(report):
    curve = report.curve()
    assert [t for t, _ in curve] == list(range(11))
    rates = [rate for _, rate in curve]
    assert rates == sorted(rates)
    assert rates[0] == 25.0 and rates[-1] == 50.0

def test_empty_report():
    report = make_report([])
    assert report.success_rate(10) == 0.0
    assert report.clean_accuracy() == 0.0
    assert report.timing() == {"segmentation": 0.0, "model_query": 0.0, "other": 0.0}



### Files ###
def test_per_image_rows(report):
    rows = per_image_rows(report)
    assert rows[0] == (0, "true", "true", 3, "0.25", 3)
    assert rows[1] == (1, "true", "false", "", "-0.5", 10)
    assert rows[2] == (2, "false", "true", 0, "0.75", 0)
    assert rows[3][4] == "nan"

def test_emit_report(report, tmp_path):
    out_dir = str(tmp_path / "out")
    paths = emit_report(report, out_dir)

    rows = get_csv_rows(paths["per_image.csv"])
    assert [row["image_id"] for row in rows] == ["0", "1", "2", "3"]
    assert tuple(rows[0]) == PER_IMAGE_HEADER

    curve = get_csv_rows(paths["curve.csv"])
    assert tuple(curve[0]) == CURVE_HEADER
    assert len(curve) == 11
    assert float(curve[-1]["success_rate_percent"]) == 50.0

    summary = get_json_data(paths["summary.json"])
    assert summary["images"] == 4
    assert summary["errors"] == 1
    assert summary["success_rate_percent"] == {"5": 50.0, "10": 50.0}
    assert summary["clean_accuracy_percent"] == 75.0

    with open(paths["curve.png"], "rb") as png:
        assert png.read(8) == b"\x89PNG\r\n\x1a\n"

def test_empty_report_writes_headers_only(tmp_path):
    paths = emit_report(make_report([]), str(tmp_path))

    with open(paths["per_image.csv"]) as csv_file:
        assert csv_file.read() == ",".join(PER_IMAGE_HEADER) + "\n"
    with open(paths["curve.csv"]) as csv_file:
        assert csv_file.read() == ",".join(CURVE_HEADER) + "\n"
    assert summarize(make_report([]))["mean_queries"] == 0.0

def test_emit_comparison(report, tmp_path):
    other = make_report([result(0), result(1, first_success_iter=8, queries=8, loss=0.1)],
                        attack="square")
    csv_path, png_path = emit_comparison({"superpixel": report, "square": other},
                                         str(tmp_path))

    rows = [(row["attack"], row["checkpoint"], float(row["success_rate_percent"]))
            for row in get_csv_rows(csv_path)]
    assert rows == [("superpixel", "5", 50.0), ("superpixel", "10", 50.0),
                    ("square", "5", 0.0), ("square", "10", 50.0)]
    assert png_path.endswith("comparison.png")
