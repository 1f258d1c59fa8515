"""Serialization of grid fields and network parameters.

Two formats:
  * CSV: one row per space index, one column per time index, header row of
    times.  UTF-8, '.' decimal separator, '\n' line endings.
  * "PCL1" binary: magic bytes b"PCL1", then dims as 64-bit little-endian
    unsigned counts, then row-major float64 payload.  Parameter files carry an
    architecture header (number of widths, then the widths) before the flat
    parameter vector.
"""

from __future__ import annotations

import struct

import numpy as np

from .config import FieldSemantics, GridField, GridSpec

MAGIC = b"PCL1"


def field_times(field: GridField, grid: GridSpec) -> np.ndarray:
    n_cols = field.values.shape[1]
    return np.arange(n_cols) * grid.dt


def write_field_csv(path, field: GridField, grid: GridSpec):
    field.check_shape(grid)
    times = field_times(field, grid)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(repr(float(t)) for t in times) + "\n")
        for row in field.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_field_csv(path, semantics: FieldSemantics) -> GridField:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        n_cols = len(header.strip().split(","))
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    if values.shape[1] != n_cols:
        raise ValueError(f"CSV rows have {values.shape[1]} columns, header has {n_cols}")
    return GridField(values, semantics)


def write_field_binary(path, field: GridField):
    rows, cols = field.values.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field_binary(path, semantics: FieldSemantics) -> GridField:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: bad magic, not a PCL1 file")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"{path}: truncated payload")
    return GridField(data.reshape(rows, cols).copy(), semantics)


def write_params_binary(path, flat: np.ndarray, layer_widths):
    widths = [int(w) for w in layer_widths]
    flat = np.asarray(flat, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(widths)))
        fh.write(struct.pack(f"<{len(widths)}Q", *widths))
        fh.write(struct.pack("<Q", flat.size))
        fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def read_params_binary(path):
    """Return (flat parameter vector, layer widths tuple)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: bad magic, not a PCL1 file")
        (n_widths,) = struct.unpack("<Q", fh.read(8))
        widths = struct.unpack(f"<{n_widths}Q", fh.read(8 * n_widths))
        (n_params,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(n_params * 8), dtype="<f8")
    if data.size != n_params:
        raise ValueError(f"{path}: truncated payload")
    return data.copy(), tuple(widths)
