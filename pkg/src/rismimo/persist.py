"""Plain-text matrix files.

Layout::

    # rismimo-matrix v1
    <rows> <cols>
    re im re im ...      (one line per row, row-major)

Numbers are written with ``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["save_matrix", "load_matrix", "MAGIC"]

MAGIC = "# rismimo-matrix v1"


def save_matrix(path: str | Path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.ndim != 2:
        raise ValueError("only 2-D arrays can be saved")
    lines = [MAGIC, f"{M.shape[0]} {M.shape[1]}"]
    for row in M:
        lines.append(" ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ValueError(f"{path}: not a rismimo matrix file")
    try:
        rows, cols = (int(t) for t in lines[1].split())
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: bad dimension header") from exc
    body = lines[2 : 2 + rows]
    if len(body) != rows:
        raise ValueError(f"{path}: expected {rows} rows, found {len(body)}")
    out = np.empty((rows, cols), dtype=complex)
    for i, line in enumerate(body):
        vals = np.array([float(t) for t in line.split()])
        if vals.size != 2 * cols:
            raise ValueError(f"{path}: row {i} has {vals.size} numbers, expected {2 * cols}")
        out[i] = vals[0::2] + 1j * vals[1::2]
    return out
