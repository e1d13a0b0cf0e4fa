"""Per-round metrics records and their CSV form."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import RejectedInput

DFL = "DFL"
CFL = "CFL"
LOCAL = "LocalOnly"


@dataclass
class MetricsRecord:
    method: str
    round: int
    # "all" for network-wide rows, "device:<id>" or "reference" for local-only rows
    scope: str
    wall_step: int
    mean_accuracy: float
    min_accuracy: float
    max_accuracy: float
    weighted_accuracy: float
    macro_f1: float
    loss: float
    consensus_error: float = 0.0
    cluster_count: int = 0
    messages: int = 0
    lambda2_intra: float = math.nan
    lambda2_inter: float = math.nan


FIELDS = tuple(f.name for f in dataclasses.fields(MetricsRecord))
_TYPES = {f.name: f.type for f in dataclasses.fields(MetricsRecord)}


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIELDS)
    for r in records:
        writer.writerow([_fmt(getattr(r, f)) for f in FIELDS])
    return buf.getvalue()


def write_csv(records, path) -> Path:
    path = Path(path)
    path.write_text(to_csv(records))
    return path


def read_csv(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != FIELDS:
            raise RejectedInput(f"{path}: metrics header does not match {FIELDS}")
        out = []
        for row in reader:
            kwargs = {}
            for name, raw in zip(FIELDS, row):
                kind = _TYPES[name]
                if kind == "int":
                    kwargs[name] = int(raw)
                elif kind == "float":
                    kwargs[name] = float(raw)
                else:
                    kwargs[name] = raw
            out.append(MetricsRecord(**kwargs))
    return out
