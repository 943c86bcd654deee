import csv
import io
import json

import pytest

from availoracle import config_from_dict, run_scenario
from availoracle.metrics import (
    AVAILABILITY_COLUMNS,
    RATE_COLUMNS,
    RunMetrics,
    aggregate_from_rows,
    csv_rows,
    emit_metrics,
    load_metrics,
    to_csv,
)


@pytest.fixture(scope="module")
def metrics():
    return run_scenario(config_from_dict({
        "seed": 1, "epochs": 60,
        "miners": [{"count": 8}, {"count": 2, "strategy": "lazy"}],
        "storers": [{"label": "d", "duration": 10, "register_epoch": 1, "every": 6, "repeat": 8}],
    }))


def test_empty_run_csv_is_headers_only():
    text = to_csv(RunMetrics())
    assert text == ",".join(AVAILABILITY_COLUMNS) + "\n"
    assert to_csv(RunMetrics(mode="rate")) == ",".join(RATE_COLUMNS) + "\n"


def test_json_roundtrip(metrics, tmp_path):
    path = emit_metrics(metrics, "json", tmp_path / "m.json")
    assert load_metrics(path) == metrics
    assert json.loads(open(path).read())["schema"] == "availoracle.metrics/1"


def test_csv_aggregates_match_recomputation(metrics, tmp_path):
    path = emit_metrics(metrics, "csv", tmp_path / "out" / "m.csv")
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == metrics.epochs
    again = aggregate_from_rows(rows)
    a = metrics.aggregates
    for k in ("sound_reports", "confirmed_reports", "required", "complete_hits",
              "soundness_rate", "completeness_rate"):
        assert again[k] == a[k], k
    for k in ("honest", "lazy", "pool"):
        assert again[f"mined_{k}"] == a["mined"][k]
        assert again[f"orphans_{k}"] == a["orphans"][k]


def test_csv_rows_flatten(metrics):
    cols, rows = csv_rows(metrics)
    assert cols == AVAILABILITY_COLUMNS
    assert all(set(r) == set(cols) for r in rows)


def test_unknown_format_and_unwritable_path(metrics, tmp_path):
    with pytest.raises(ValueError):
        emit_metrics(metrics, "xml", tmp_path / "m.xml")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_metrics(metrics, "json", blocker / "m.json")


def test_rate_metrics_csv():
    m = run_scenario(config_from_dict({"mode": "rate", "epochs": 10, "miners": [{"count": 4}]}))
    rows = list(csv.DictReader(io.StringIO(to_csv(m))))
    assert len(rows) == 10 and rows[0].keys() == set(RATE_COLUMNS)
