"""CSV emission with fixed column order and atomic replacement."""

from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows: Iterable[dict], columns: Sequence[str]) -> Path:
    """Write ``rows`` to ``path`` via a temporary file so no partial CSV is left behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(row.get(c, "")) for c in columns])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


TIDY_COLUMNS = ("experiment", "series", "seed", "x", "y")


def tidy(rows: Iterable[dict], experiment: str, x: str, ys: Sequence[str], seed_key: str = "seed") -> list[dict]:
    """Long-format rows ``(experiment, series, seed, x, y)`` for plotting tools."""
    out = []
    for row in rows:
        for y in ys:
            if y in row:
                out.append({"experiment": experiment, "series": y, "seed": row.get(seed_key, ""), "x": row[x], "y": row[y]})
    return out
