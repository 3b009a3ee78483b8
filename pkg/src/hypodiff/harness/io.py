"""CSV path files and JSON reports."""
from __future__ import annotations

import csv
import json
import re

import numpy as np

from ..errors import MalformedHeader, NonEquispaced, NonNumericCell
from ..simulate import SamplePath

SPACING_RTOL = 1e-9
_X_COL = re.compile(r"x(\d+)$")
_Y_COL = re.compile(r"y(\d+)$")


def path_header(d_X: int, d_Y: int) -> list:
    return ["t"] + [f"x{i}" for i in range(1, d_X + 1)] + [f"y{i}" for i in range(1, d_Y + 1)]


def write_path_csv(path: SamplePath, file) -> None:
    """Write ``t,x1..,y1..`` rows; floats use the shortest round-trip repr."""
    header = path_header(path.d_X, path.d_Y)
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, row in zip(path.times, path.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _parse_header(cols) -> int:
    cols = [c.strip() for c in cols]
    if not cols or cols[0] != "t":
        raise MalformedHeader(f"first column must be 't', got {cols[:1]}")
    xs = [c for c in cols[1:] if _X_COL.match(c)]
    d_X = len(xs)
    d_Y = len(cols) - 1 - d_X
    if d_X < 1 or d_Y < 1 or cols != path_header(d_X, d_Y):
        raise MalformedHeader(f"header must read t,x1..x{{d_X}},y1..y{{d_Y}}; got {','.join(cols)}")
    return d_X


def read_path_csv(file) -> SamplePath:
    """Read a path CSV, checking the header and equispaced increasing times."""
    with open(file, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedHeader(f"{file}: empty file")
    d_X = _parse_header(rows[0])
    width = len(rows[0])
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise NonNumericCell(f"{file}: row {i} has {len(row)} cells, expected {width}", row=i)
        vals = []
        for j, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise NonNumericCell(f"{file}: non-numeric cell {cell!r} at row {i}, column {j}",
                                     row=i, col=j) from None
        data.append(vals)
    if len(data) < 2:
        raise NonEquispaced(f"{file}: need at least two observation rows")
    arr = np.asarray(data)
    t = arr[:, 0]
    dt = np.diff(t)
    h = (t[-1] - t[0]) / (len(t) - 1)
    if not h > 0 or np.any(dt <= 0) or np.any(np.abs(dt - h) > SPACING_RTOL * h):
        raise NonEquispaced(f"{file}: times are not strictly increasing with constant spacing")
    return SamplePath(h=float(h), states=arr[:, 1:], d_X=d_X, meta={"source": str(file)})


def write_json(obj, file) -> None:
    with open(file, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")
