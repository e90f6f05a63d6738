"""Atomic file output helpers."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value):
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float):
        # builtin repr: shortest round-trip form
        return float.__repr__(value)
    return str(value)


def write_csv(path, header, rows, comment: str | None = None):
    """Write rows as CSV; floats are written with full ``repr`` precision."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


def read_csv(path):
    """Return (header, rows) skipping ``#`` comment lines."""
    from .errors import ParameterError

    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParameterError(f"{path}: empty file") from None
    return header, [row for row in reader if row]


def parse_columns(path, rows, parsers):
    """Convert CSV rows column-wise; bad cells raise ParameterError."""
    from .errors import ParameterError

    try:
        return [[parse(row[i]) for row in rows] for i, parse in enumerate(parsers)]
    except (ValueError, IndexError) as exc:
        raise ParameterError(f"{path}: malformed row ({exc})") from None


def _default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, payload):
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=_default) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
