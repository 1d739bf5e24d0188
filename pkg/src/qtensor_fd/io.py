"""Field dumps and CSV traces.

A field dump is a text header followed by raw little-endian float64 data::

    # <config line>            (zero or more, echoing the resolved run)
    name Q
    dim 2
    N 39
    h 0.05
    components 4
    time 0.5
    end_header
    <binary payload>

The payload covers nodes ``0 .. N+1`` on every axis in row-major node order,
with the per-node components varying fastest.
"""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fields import GridSpec
from .scheme import REPORT_COLUMNS, StepReport

__all__ = [
    "FieldDump",
    "write_field",
    "read_field",
    "write_energy_csv",
    "read_csv_rows",
    "format_float",
    "ensure_writable",
]

_END = b"end_header\n"


def format_float(x: float) -> str:
    # shortest round-tripping representation; stable across runs
    return repr(float(x))


class FieldDump:
    """In-memory view of a dump file."""

    def __init__(self, name: str, dim: int, n_interior: int, h: float, time: float, values: np.ndarray, config=()):
        self.name = name
        self.dim = dim
        self.n_interior = n_interior
        self.h = h
        self.time = time
        self.values = values  # (N+2,)*dim + component shape
        self.config = list(config)

    @property
    def components(self) -> int:
        return int(np.prod(self.values.shape[self.dim:], dtype=int))


def write_field(path, name: str, field: np.ndarray, grid: GridSpec, time: float, config_lines: Sequence[str] = ()) -> Path:
    """Write ``field`` (a padded array) restricted to nodes ``0 .. N+1``."""
    path = Path(path)
    vals = np.ascontiguousarray(field[grid.nodes], dtype="<f8")
    comps = int(np.prod(vals.shape[grid.dim:], dtype=int))
    head = [f"# {line}" for line in config_lines]
    head += [
        f"name {name}",
        f"dim {grid.dim}",
        f"N {grid.n_interior}",
        f"h {format_float(grid.h)}",
        f"components {comps}",
        f"time {format_float(time)}",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("utf-8"))
        fh.write(_END)
        fh.write(vals.tobytes(order="C"))
    return path


def read_field(path) -> FieldDump:
    data = Path(path).read_bytes()
    cut = data.find(_END)
    if cut < 0:
        raise ValueError(f"{path}: missing end_header line")
    meta, config = {}, []
    for line in data[:cut].decode("utf-8").splitlines():
        if line.startswith("#"):
            config.append(line[1:].strip())
        elif line.strip():
            key, _, value = line.partition(" ")
            meta[key] = value.strip()
    dim, n, comps = int(meta["dim"]), int(meta["N"]), int(meta["components"])
    flat = np.frombuffer(data[cut + len(_END):], dtype="<f8")
    spatial = (n + 2,) * dim
    expected = int(np.prod(spatial)) * comps
    if flat.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {flat.size}")
    if comps == 1:
        shape = spatial
    elif comps == dim * dim:
        shape = spatial + (dim, dim)
    else:
        shape = spatial + (comps,)
    return FieldDump(meta["name"], dim, n, float(meta["h"]), float(meta["time"]), flat.reshape(shape).copy(), config)


def write_energy_csv(path, initial: StepReport, reports: Iterable[StepReport], config_lines: Sequence[str] = ()) -> Path:
    """One row per time level, starting with level 0."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for line in config_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rep in [initial, *reports]:
            w.writerow([v if isinstance(v, int) else format_float(v) for v in rep.csv_row()])
    return path


def read_csv_rows(path) -> list:
    """Rows of a CSV written by this package as dicts, skipping ``#`` lines."""
    with open(path, newline="") as fh:
        text = "".join(line for line in fh if not line.startswith("#"))
    return list(csv.DictReader(io.StringIO(text)))


def ensure_writable(directory) -> Path:
    """Create ``directory`` if needed and check that files can be created in it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    probe = directory / f".write-probe-{os.getpid()}"
    with open(probe, "w") as fh:
        fh.write("")
    probe.unlink()
    return directory
