"""Bit-exact file I/O for fields and partitions.

Field files ("fracpara/field-v1") are two lines: a JSON header object
{schema, spatial_dim, L, N_x, T, P, N_t} and a base64 payload of
little-endian float64 (re, im) pairs in storage order (time slowest,
spatial axes row-major).  Partition files ("fracpara/partition-v1") are a
single JSON document holding the interval/box specs and the resolved masks
as index lists.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from fracpara.grid import (
    Field,
    GeometryPartition,
    SpaceTimeGrid,
    make_field,
    make_grid,
    make_partition,
)

FIELD_SCHEMA = "fracpara/field-v1"
PARTITION_SCHEMA = "fracpara/partition-v1"


def _grid_header(grid: SpaceTimeGrid) -> dict:
    return {
        "schema": FIELD_SCHEMA,
        "spatial_dim": grid.spatial_dim,
        "L": grid.spatial_extent,
        "N_x": grid.spatial_points,
        "T": grid.physical_half_window,
        "P": grid.padding_factor,
        "N_t": grid.time_points,
    }


def _grid_from_header(header: dict) -> SpaceTimeGrid:
    return make_grid(
        spatial_dim=header["spatial_dim"],
        spatial_extent=header["L"],
        spatial_points=header["N_x"],
        physical_half_window=header["T"],
        padding_factor=header["P"],
        time_points=header["N_t"],
    )


def write_field(field: Field, path: str | Path) -> None:
    """Write a field; the round-trip through :func:`read_field` is bit-exact."""
    path = Path(path)
    interleaved = np.empty(2 * field.grid.n_samples, dtype="<f8")
    interleaved[0::2] = field.values.real.ravel()
    interleaved[1::2] = field.values.imag.ravel()
    payload = base64.b64encode(interleaved.tobytes()).decode("ascii")
    header = json.dumps(_grid_header(field.grid), sort_keys=True)
    path.write_text(header + "\n" + payload + "\n")


def read_field(path: str | Path) -> Field:
    """Read a field file, validating schema, grid, and sample count."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: truncated field file")
    header = json.loads(lines[0])
    schema = header.get("schema")
    if schema != FIELD_SCHEMA:
        raise ValueError(f"{path}: unsupported schema {schema!r} (want {FIELD_SCHEMA!r})")
    grid = _grid_from_header(header)
    raw = base64.b64decode(lines[1])
    flat = np.frombuffer(raw, dtype="<f8")
    if flat.size != 2 * grid.n_samples:
        raise ValueError(
            f"{path}: size mismatch, payload has {flat.size // 2} samples, "
            f"grid wants {grid.n_samples}"
        )
    values = (flat[0::2] + 1j * flat[1::2]).reshape(grid.field_shape)
    return make_field(grid, values)


def write_partition(partition: GeometryPartition, path: str | Path) -> None:
    grid = partition.grid
    doc = {
        "schema": PARTITION_SCHEMA,
        "grid": _grid_header(grid),
        "omega_spec": list(partition.omega_spec),
        "w1_spec": list(partition.w1_spec),
        "w2_spec": list(partition.w2_spec),
        "kappa": partition.kappa,
        "omega_nodes": np.flatnonzero(partition.omega_mask.ravel()).tolist(),
        "w1_nodes": np.flatnonzero(partition.w1_mask.ravel()).tolist(),
        "w2_nodes": np.flatnonzero(partition.w2_mask.ravel()).tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def _unflatten_spec(grid: SpaceTimeGrid, flat: list) -> tuple:
    if grid.spatial_dim == 1:
        return (flat[0], flat[1])
    return ((flat[0], flat[1]), (flat[2], flat[3]))


def read_partition(path: str | Path) -> GeometryPartition:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema") != PARTITION_SCHEMA:
        raise ValueError(f"{path}: unsupported schema {doc.get('schema')!r}")
    grid = _grid_from_header(doc["grid"])
    partition = make_partition(
        grid,
        _unflatten_spec(grid, doc["omega_spec"]),
        _unflatten_spec(grid, doc["w1_spec"]),
        _unflatten_spec(grid, doc["w2_spec"]),
    )
    # stored node lists guard against spec/resolution drift
    for key, mask in (
        ("omega_nodes", partition.omega_mask),
        ("w1_nodes", partition.w1_mask),
        ("w2_nodes", partition.w2_mask),
    ):
        if doc[key] != np.flatnonzero(mask.ravel()).tolist():
            raise ValueError(f"{path}: stored {key} disagree with resolved mask")
    return partition
