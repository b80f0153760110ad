"""Binary grid snapshots and CSV tables.

Grid file layout: an ASCII header of ``key value`` lines, closed by a line
``end``, followed by the array as little-endian float64 in C order::

    STOCHFLOW-GRID 1
    kind field
    dim 2
    shape 3 32 32 2
    components 2
    times 0 0.25 0.5
    end
    <raw bytes>

``shape`` is the full array shape (time axis first when ``times`` is set).
"""
from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

MAGIC = "STOCHFLOW-GRID 1"


def write_grid(path, values: np.ndarray, *, d: int, kind: str = "field", times=None,
               components: int = 1) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    lines = [MAGIC, f"kind {kind}", f"dim {d}", "shape " + " ".join(map(str, arr.shape)),
             f"components {components}"]
    if times is not None:
        lines.append("times " + " ".join(repr(float(t)) for t in np.atleast_1d(times)))
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(arr.tobytes())
    return path


def read_grid(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = {}
        first = fh.readline().decode("ascii").strip()
        if first != MAGIC:
            raise ValueError(f"{path} is not a grid file")
        while True:
            line = fh.readline().decode("ascii").strip()
            if line == "end":
                break
            key, _, rest = line.partition(" ")
            header[key] = rest
        data = fh.read()
    shape = tuple(int(s) for s in header["shape"].split())
    arr = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    meta = {"kind": header["kind"], "dim": int(header["dim"]), "components": int(header["components"])}
    if "times" in header:
        meta["times"] = np.array([float(t) for t in header["times"].split()])
    return arr, meta


def fmt(v) -> str:
    """Deterministic text form: floats round-trip exactly."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    return atomic_write(path, rows_to_csv(rows, columns))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path
