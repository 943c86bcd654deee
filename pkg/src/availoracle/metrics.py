"""Run metrics and their JSON / CSV exports (schema in ``docs/FORMATS.md``)."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field

SCHEMA = "availoracle.metrics/1"
CLASSES = ("honest", "lazy", "pool")

AVAILABILITY_COLUMNS = [
    "epoch", "block_hash", "miner", "miner_class", "confirmed",
    "n_reports", "n_registered", "n_available",
    "sound", "unsound", "required", "hits",
    *[f"mined_{k}" for k in CLASSES],
    *[f"orphans_{k}" for k in CLASSES],
    "payout", "refund", "storage_bytes_total",
]
RATE_COLUMNS = ["epoch", "true_rate", "block_hash", "miner", "lo", "hi", "reward", "mined", "orphans"]


@dataclass
class RunMetrics:
    mode: str = "availability"
    seed: int = 0
    epochs: int = 0
    lag_c: int = 0
    final_tip: str = ""
    final_height: int = 0
    aggregates: dict = field(default_factory=dict)
    per_epoch: list = field(default_factory=list)
    per_datum: dict = field(default_factory=dict)
    registrations: list = field(default_factory=list)
    payouts: dict = field(default_factory=dict)
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunMetrics":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def csv_rows(metrics: RunMetrics) -> tuple[list[str], list[dict]]:
    if metrics.mode == "rate":
        return RATE_COLUMNS, [{k: r[k] for k in RATE_COLUMNS} for r in metrics.per_epoch]
    rows = []
    for r in metrics.per_epoch:
        flat = {k: r[k] for k in AVAILABILITY_COLUMNS if k in r}
        flat["n_reports"] = len(r["reports"])
        flat["n_registered"] = len(r["registered"])
        flat["n_available"] = len(r["available"])
        for k in CLASSES:
            flat[f"mined_{k}"] = r["mined"].get(k, 0)
            flat[f"orphans_{k}"] = r["orphans"].get(k, 0)
        flat["storage_bytes_total"] = sum(r["storage_bytes"].values())
        rows.append(flat)
    return AVAILABILITY_COLUMNS, rows


def to_csv(metrics: RunMetrics) -> str:
    cols, rows = csv_rows(metrics)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def emit_metrics(metrics: RunMetrics, fmt: str, path) -> str:
    """Write metrics as ``json`` or ``csv`` to ``path``; returns the path."""
    if fmt == "json":
        text = metrics.to_json()
    elif fmt == "csv":
        text = to_csv(metrics)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return os.fspath(path)


def load_metrics(path) -> RunMetrics:
    with open(path) as fh:
        return RunMetrics.from_dict(json.load(fh))


def aggregate_from_rows(rows: list[dict]) -> dict:
    """Recompute the headline aggregates from flattened per-epoch CSV rows."""
    confirmed = [r for r in rows if str(r["confirmed"]) in ("True", "true", "1")]
    sound = sum(int(r["sound"]) for r in confirmed)
    unsound = sum(int(r["unsound"]) for r in confirmed)
    required = sum(int(r["required"]) for r in confirmed)
    hits = sum(int(r["hits"]) for r in confirmed)
    out = {
        "sound_reports": sound,
        "confirmed_reports": sound + unsound,
        "required": required,
        "complete_hits": hits,
        "soundness_rate": sound / (sound + unsound) if sound + unsound else 1.0,
        "completeness_rate": hits / required if required else 1.0,
    }
    for k in CLASSES:
        mined = sum(int(r[f"mined_{k}"]) for r in rows)
        orph = sum(int(r[f"orphans_{k}"]) for r in rows)
        out[f"mined_{k}"] = mined
        out[f"orphans_{k}"] = orph
    return out
