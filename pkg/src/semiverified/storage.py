"""Dataset and mask serialization.

Binary point files are raw little-endian float64, row-major, one row per
sample, preceded by a 16-byte header holding ``n`` and ``d`` as little-endian
uint64. CSV point files have a header ``id,x0,...,x{d-1}``. Masks are JSON
objects ``{"corrupted_ids": [...], "alpha_realized": a}``.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .contamination import CorruptionMask
from .estimator import PointSet

_HEADER = np.dtype("<u8")
_VALUE = np.dtype("<f8")


def save_points_csv(points: PointSet, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"x{j}" for j in range(points.dim)])
        for i, row in zip(points.ids, points.values):
            writer.writerow([int(i)] + [repr(float(v)) for v in row])


def load_points_csv(path) -> PointSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    d = len(header) - 1
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    values = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64).reshape(len(rows), d)
    return PointSet(values, ids)


def save_points_bin(points: PointSet, path):
    """Write values only; ids are implicit row numbers on reload."""
    n, d = points.values.shape
    with open(path, "wb") as fh:
        fh.write(np.array([n, d], dtype=_HEADER).tobytes())
        fh.write(np.ascontiguousarray(points.values, dtype=_VALUE).tobytes())


def load_points_bin(path) -> PointSet:
    raw = Path(path).read_bytes()
    n, d = np.frombuffer(raw[:16], dtype=_HEADER)
    values = np.frombuffer(raw[16:], dtype=_VALUE).reshape(int(n), int(d))
    return PointSet(values.copy())


def save_mask(mask: CorruptionMask, path):
    Path(path).write_text(json.dumps(mask.to_dict(), sort_keys=True) + "\n")


def load_mask(path) -> CorruptionMask:
    data = json.loads(Path(path).read_text())
    return CorruptionMask(list(data["corrupted_ids"]), float(data["alpha_realized"]))
