"""Matrix ingestion: CSV and a raw little-endian float64 format.

raw_f64 layout: 4-byte magic ``SAMP``, u32 rows, u32 cols (little-endian),
then rows * cols float64 values in row-major order.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SAMP"
HEADER = struct.Struct("<4sII")


class MatrixFormatError(ValueError):
    """A matrix file is malformed; ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


def write_raw_f64(path, matrix):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(matrix, dtype="<f8")))
    rows, cols = X.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, rows, cols))
        fh.write(X.tobytes(order="C"))


def read_raw_f64(path):
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise MatrixFormatError(f"header needs {HEADER.size} bytes, file has {len(data)}", offset=len(data))
    magic, rows, cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    expected = HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise MatrixFormatError(
            f"{rows}x{cols} matrix needs {expected} bytes, file has {len(data)}", offset=min(len(data), expected))
    return np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(rows, cols).astype(float)


def read_csv_matrix(path):
    """Comma-separated rows; a first row that does not parse as numbers is a header."""
    rows = []
    offset = 0
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines(keepends=True)
    for lineno, line in enumerate(lines):
        start = offset
        offset += len(line.encode("utf-8"))
        if not line.strip():
            continue
        fields = next(csv.reader([line]))
        try:
            values = [float(f) for f in fields]
        except ValueError:
            if not rows and lineno == 0:
                continue
            raise MatrixFormatError(f"non-numeric field on line {lineno + 1}", offset=start) from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise MatrixFormatError(f"line {lineno + 1} has {len(values)} fields, expected {width}", offset=start)
        rows.append(values)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=float)


def write_csv_matrix(path, matrix):
    X = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in X:
            writer.writerow([repr(float(v)) for v in row])


def ingest_matrix(path, fmt=None):
    """Load a matrix; ``fmt`` is ``csv`` or ``raw_f64`` (guessed from the suffix when None)."""
    if fmt is None:
        fmt = "csv" if str(path).lower().endswith(".csv") else "raw_f64"
    if fmt == "csv":
        return read_csv_matrix(path)
    if fmt == "raw_f64":
        return read_raw_f64(path)
    raise ValueError(f"unknown matrix format {fmt!r}")
