"""Shared utility functions."""

import csv
import json
from pathlib import Path
from typing import Any, Iterable, List, Sequence

from pydantic import BaseModel


def ensure_parent(path: str) -> Path:
    """Create the parent directory of ``path`` and return it as a Path."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    return target


def format_float(value: Any) -> str:
    """Shortest round-trip text for floats; other values via ``str``."""
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_rows_csv(path: str, headers: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(ensure_parent(path), "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(headers))
        for row in rows:
            writer.writerow([format_float(v) for v in row])


def write_models_csv(path: str, records: Sequence[BaseModel], headers: Sequence[str]) -> None:
    """One CSV row per pydantic record, columns in ``headers`` order."""
    write_rows_csv(path, headers, ([getattr(r, h) for h in headers] for r in records))


def write_models_jsonl(path: str, records: Sequence[BaseModel]) -> None:
    with open(ensure_parent(path), "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.model_dump(mode="json"), sort_keys=True) + "\n")


def write_json(path: str, payload: Any) -> None:
    ensure_parent(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_csv_rows(path: str) -> List[List[str]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return [row for row in csv.reader(handle)]
