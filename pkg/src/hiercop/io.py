"""CSV and JSON readers/writers for datasets, specs, fits and curves."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from hiercop.model import HierarchicalDataset, ModelSpec

REQUIRED_COLUMNS = ("cluster", "x", "y")


def _fmt(v):
    return "%.17g" % v


def write_dataset(data, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS)
        for label, (s, n) in zip(data.labels, zip(data.starts, data.sizes)):
            for j in range(s, s + n):
                w.writerow((label, _fmt(data.x[j]), _fmt(data.y[j])))


def read_dataset(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        ids, xs, ys = [], [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                x = float(row["x"])
                y = float(row["y"])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: x and y must be numbers") from None
            if not (math.isfinite(x) and math.isfinite(y)) or not row["cluster"]:
                raise ValueError(f"{path}:{lineno}: missing or non-finite value")
            ids.append(row["cluster"])
            xs.append(x)
            ys.append(y)
    if not ids:
        raise ValueError(f"{path}: no data rows")
    return HierarchicalDataset.from_long(ids, xs, ys)


def write_columns(columns, path):
    """Write a dict of equal-length columns as CSV."""
    names = list(columns)
    rows = zip(*(np.asarray(columns[n], dtype=float) for n in names))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from None


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _check_schema(d, path):
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected a JSON object")
    if d.get("schema", 1) != 1:
        raise ValueError(f"{path}: unsupported schema {d.get('schema')!r}")


def load_spec(path):
    """Model spec (or families) JSON -> :class:`ModelSpec`."""
    d = read_json(path)
    _check_schema(d, path)
    return ModelSpec.from_dict(d)
