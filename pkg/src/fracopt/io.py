"""CSV output with a fixed float format (17 significant digits)."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows) -> Path:
    """Write a header row and data rows; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV file")
    return rows[0], rows[1:]


def eigen_rows(result):
    return [(result.lam, result.iterations, result.residual, result.converged)]


EIGEN_HEADER = ("lambda", "iterations", "residual", "converged")


def nodal_rows(coords: np.ndarray, u: np.ndarray):
    for x, v in zip(coords, u):
        yield (*[float(c) for c in x], float(v))


def nodal_header(n: int):
    return (*("x", "y")[:n], "u")


def mask_header(n: int):
    return ("cell", *("x", "y")[:n], "selected")
