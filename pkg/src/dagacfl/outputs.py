"""Reading and writing run artifacts. Every write goes to a temp file first."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

from .ledger import read_jsonl, write_jsonl
from .trace import TraceEvent

EVAL_COLUMNS = ("round", "modularity", "community-count", "mr-mean", "mr-skipped", "misclassification")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    atomic_write_text(path, csv_text(columns, rows))


def read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_records(path, records) -> None:
    buf = io.StringIO()
    write_jsonl(records, buf)
    atomic_write_text(path, buf.getvalue())


def write_trace(path, events: list[TraceEvent]) -> None:
    atomic_write_text(path, "".join(ev.to_json() + "\n" for ev in events))


def read_trace(path) -> list[TraceEvent]:
    return [TraceEvent.from_dict(d) for d in read_jsonl(path)]
