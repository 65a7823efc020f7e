import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fracpara.fieldio as io
import fracpara.grid as G


@given(seed=st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_roundtrip_bitexact(tmp_path_factory, seed):
    tmp = tmp_path_factory.mktemp("io")
    grid = G.make_grid(1, 2 * np.pi, 16, 1.0, 4, 32)
    rng = np.random.default_rng(seed)
    u = G.make_field(grid, rng.standard_normal(grid.field_shape)
                     + 1j * rng.standard_normal(grid.field_shape))
    path = tmp / "u.field"
    io.write_field(u, path)
    v = io.read_field(path)
    assert np.array_equal(u.values, v.values)
    assert v.grid == grid


def test_roundtrip_2d(tmp_path):
    grid = G.make_grid(2, 2 * np.pi, 8, 0.5, 4, 16)
    rng = np.random.default_rng(0)
    u = G.make_field(grid, rng.standard_normal(grid.field_shape) + 0j)
    io.write_field(u, tmp_path / "u2.field")
    v = io.read_field(tmp_path / "u2.field")
    assert np.array_equal(u.values, v.values)


def test_size_mismatch_rejected(tmp_path):
    grid = G.make_grid(1, 2 * np.pi, 16, 1.0, 4, 32)
    u = G.make_field(grid, np.zeros(grid.field_shape))
    path = tmp_path / "u.field"
    io.write_field(u, path)
    header, payload = path.read_text().splitlines()
    doc = json.loads(header)
    doc["N_x"] = 32  # grid now wants more samples than the payload has
    path.write_text(json.dumps(doc) + "\n" + payload + "\n")
    with pytest.raises(ValueError, match="size mismatch"):
        io.read_field(path)


def test_unsupported_schema_rejected(tmp_path):
    grid = G.make_grid(1, 2 * np.pi, 16, 1.0, 4, 32)
    u = G.make_field(grid, np.zeros(grid.field_shape))
    path = tmp_path / "u.field"
    io.write_field(u, path)
    header, payload = path.read_text().splitlines()
    doc = json.loads(header)
    doc["schema"] = "fracpara/field-v0"
    path.write_text(json.dumps(doc) + "\n" + payload + "\n")
    with pytest.raises(ValueError, match="unsupported schema"):
        io.read_field(path)


def test_partition_roundtrip(tmp_path, desk_grid):
    part = G.make_partition(desk_grid, (2.0, 4.0), (0.2, 1.0), (5.0, 5.8))
    path = tmp_path / "p.partition"
    io.write_partition(part, path)
    q = io.read_partition(path)
    assert np.array_equal(part.omega_mask, q.omega_mask)
    assert np.array_equal(part.w1_mask, q.w1_mask)
    assert np.array_equal(part.w2_mask, q.w2_mask)
    assert q.kappa == pytest.approx(part.kappa)


def test_partition_schema_guard(tmp_path, desk_grid):
    part = G.make_partition(desk_grid, (2.0, 4.0), (0.2, 1.0), (5.0, 5.8))
    path = tmp_path / "p.partition"
    io.write_partition(part, path)
    doc = json.loads(path.read_text())
    doc["schema"] = "fracpara/partition-v0"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="unsupported schema"):
        io.read_partition(path)
