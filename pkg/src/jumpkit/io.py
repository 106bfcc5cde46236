"""Atomic file writes and versioned CSV tables."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile

CSV_VERSION = 1


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over the target."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def csv_text(kind: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# jumpkit-{kind} v{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_csv(path: str, kind: str, columns, rows) -> None:
    atomic_write_text(path, csv_text(kind, columns, rows))


def read_csv(path: str, kind: str | None = None):
    """Returns (header comment, list of dict rows with float-or-str values)."""
    with open(path, newline="") as f:
        first = f.readline().strip()
        if not first.startswith("# jumpkit-"):
            raise ValueError(f"{path}: missing version header")
        if kind is not None and not first.startswith(f"# jumpkit-{kind} "):
            raise ValueError(f"{path}: expected a {kind} table, found {first!r}")
        rows = []
        for r in csv.DictReader(f):
            out = {}
            for k, v in r.items():
                try:
                    out[k] = float(v)
                except ValueError:
                    out[k] = v
            rows.append(out)
    return first, rows
