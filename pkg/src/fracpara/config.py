"""Strict JSON run configuration: schema validation with key-path errors.

Unknown keys are rejected, defaults are filled in, and every value is type-
and range-checked; error messages carry the offending key path so a typo in
a nested block is reported as e.g. "solver.tikhonovv: unknown key".
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fracpara.fieldio import read_field
from fracpara.grid import (
    Field,
    GeometryPartition,
    MetricField,
    SpaceTimeGrid,
    identity_metric,
    make_field,
    make_grid,
    make_partition,
    metric_from_values,
)


class ConfigError(ValueError):
    """Configuration file violates the schema."""


_COMMANDS = ("forward", "dnmap", "reconstruct", "entangle", "validate")

_FORMULA_RE = re.compile(
    r"^\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*\*\s*sin\(x\)\s*\*\s*"
    r"cos\(pi\*t/\(2\*T\)\)\s*$"
)


def _expect_keys(block: dict, path: str, known: dict) -> None:
    for key in block:
        if key not in known:
            raise ConfigError(f"{path}{key}: unknown key")


def _get(block: dict, path: str, key: str, default, caster):
    raw = block.get(key, default)
    if raw is None:
        return None
    try:
        return caster(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}{key}: {exc}") from exc


@dataclass
class RunConfig:
    """Fully validated run description with defaults applied."""

    command: str
    grid: SpaceTimeGrid
    partition: GeometryPartition
    exponents: tuple
    weights: tuple
    metric: MetricField
    potential: np.ndarray
    solver: dict
    quadrature: dict
    excitations: dict
    tests: dict
    forward: dict
    reconstruct: dict
    entangle: dict
    seed: int
    raw: dict


def _parse_grid(block: dict) -> SpaceTimeGrid:
    path = "grid."
    _expect_keys(block, path, {"spatial_dim", "L", "N_x", "T", "P", "N_t"})
    return make_grid(
        spatial_dim=_get(block, path, "spatial_dim", 1, int),
        spatial_extent=_get(block, path, "L", 2 * np.pi, float),
        spatial_points=_get(block, path, "N_x", 64, int),
        physical_half_window=_get(block, path, "T", 1.0, float),
        padding_factor=_get(block, path, "P", 4.0, float),
        time_points=_get(block, path, "N_t", 256, int),
    )


def _parse_partition(block: dict, grid: SpaceTimeGrid) -> GeometryPartition:
    path = "partition."
    _expect_keys(block, path, {"omega", "w1", "w2"})
    def spec(key, default):
        raw = block.get(key, default)
        arr = np.asarray(raw, dtype=float)
        if grid.spatial_dim == 1:
            if arr.shape != (2,):
                raise ConfigError(f"{path}{key}: expected [lo, hi]")
            return (arr[0], arr[1])
        if arr.shape != (2, 2):
            raise ConfigError(f"{path}{key}: expected [[lo, hi], [lo, hi]]")
        return ((arr[0, 0], arr[0, 1]), (arr[1, 0], arr[1, 1]))
    try:
        return make_partition(grid, spec("omega", [2.0, 4.0]),
                              spec("w1", [0.2, 1.0]), spec("w2", [5.0, 5.8]))
    except ValueError as exc:
        raise ConfigError(f"partition: {exc}") from exc


def _parse_operator(block: dict, grid: SpaceTimeGrid) -> tuple:
    path = "operator."
    _expect_keys(block, path, {"exponents", "weights", "metric"})
    exponents = tuple(float(s) for s in block.get("exponents", [0.3, 0.7]))
    weights = tuple(float(b) for b in block.get("weights", [1.0] * len(exponents)))
    if len(weights) != len(exponents):
        raise ConfigError("operator.weights: length must match exponents")
    if any(s2 <= s1 for s1, s2 in zip(exponents, exponents[1:])):
        raise ConfigError("operator.exponents: exponents must be strictly increasing")
    if any(not 0 < s < 1 for s in exponents):
        raise ConfigError("operator.exponents: exponents must lie in (0, 1)")
    if any(b <= 0 for b in weights):
        raise ConfigError("operator.weights: weights must be positive")
    metric_spec = block.get("metric", "identity")
    if metric_spec == "identity":
        metric = identity_metric(grid)
    elif isinstance(metric_spec, dict) and set(metric_spec) == {"path"}:
        mfield = read_field(metric_spec["path"])
        if mfield.grid != grid:
            raise ConfigError("operator.metric: metric file grid mismatch")
        vals = mfield.values[0].real  # metric files store nodal samples at t-slice 0
        metric = metric_from_values(grid, vals)
    else:
        raise ConfigError('operator.metric: expected "identity" or {"path": ...}')
    return exponents, weights, metric


def parse_potential_spec(spec, grid: SpaceTimeGrid,
                         partition: GeometryPartition) -> np.ndarray:
    """Resolve a potential block: null, {"constant": c}, {"path": field file},
    or {"formula": "a*sin(x)*cos(pi*t/(2*T))"} restricted to Omega x (-T, T)."""
    mask = partition.interior_spacetime_mask()
    vals = np.zeros(grid.field_shape, dtype=np.complex128)
    if spec is None:
        return vals
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError('potential: expected {"constant"|"path"|"formula": ...}')
    (kind, payload), = spec.items()
    if kind == "constant":
        vals[mask] = complex(payload)
    elif kind == "path":
        f = read_field(payload)
        if f.grid != grid:
            raise ConfigError("potential.path: field grid mismatch")
        vals[mask] = f.values[mask]
    elif kind == "formula":
        match = _FORMULA_RE.match(str(payload))
        if match is None:
            raise ConfigError(
                'potential.formula: only "a*sin(x)*cos(pi*t/(2*T))" is supported'
            )
        if grid.spatial_dim != 1:
            raise ConfigError("potential.formula: formula potentials are 1D only")
        a = float(match.group(1))
        x = grid.spatial_coordinates()
        t = grid.time_coordinates()
        T = grid.physical_half_window
        full = a * np.sin(x)[None, :] * np.cos(np.pi * t / (2 * T))[:, None]
        vals[mask] = full[mask]
    else:
        raise ConfigError(f"potential.{kind}: unknown key")
    return vals


def _parse_basis_block(block: dict, name: str) -> dict:
    path = f"{name}."
    _expect_keys(block, path, {"n_space", "n_time", "window", "kind"})
    out = {
        "n_space": _get(block, path, "n_space", 8, int),
        "n_time": _get(block, path, "n_time", 8, int),
        "window": block.get("window"),
        "kind": str(block.get("kind", "hat")),
    }
    if out["window"] is not None:
        w = np.asarray(out["window"], dtype=float)
        if w.shape != (2,):
            raise ConfigError(f"{path}window: expected [t_lo, t_hi]")
        out["window"] = (float(w[0]), float(w[1]))
    if out["kind"] not in ("hat", "indicator"):
        raise ConfigError(f"{path}kind: expected 'hat' or 'indicator'")
    return out


def parse_config(path: str | Path, command: str | None = None) -> RunConfig:
    """Load, validate, and default-fill a JSON run configuration.

    ``command`` (from the CLI) overrides the file's command field.

    Raises
    ------
    ConfigError
        On any schema violation, with the key path in the message.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a JSON document ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    known_top = {
        "command", "grid", "partition", "operator", "potential", "solver",
        "quadrature", "excitations", "tests", "forward", "reconstruct",
        "entangle", "seed",
    }
    _expect_keys(raw, "", known_top)

    cmd = command or raw.get("command")
    if cmd not in _COMMANDS:
        raise ConfigError(f"command: expected one of {_COMMANDS}, got {cmd!r}")

    grid = _parse_grid(raw.get("grid", {}))
    partition = _parse_partition(raw.get("partition", {}), grid)
    exponents, weights, metric = _parse_operator(raw.get("operator", {}), grid)
    potential = parse_potential_spec(raw.get("potential"), grid, partition)

    solver = raw.get("solver", {})
    _expect_keys(solver, "solver.", {"tikhonov", "max_iterations"})
    solver = {
        "tikhonov": _get(solver, "solver.", "tikhonov", 1e-3, float),
        "max_iterations": _get(solver, "solver.", "max_iterations", 3, int),
    }
    if solver["tikhonov"] <= 0:
        raise ConfigError("solver.tikhonov: must be positive")

    quad = raw.get("quadrature", {})
    _expect_keys(quad, "quadrature.", {"tau_min", "split_a", "tau_max", "n_low", "n_high"})
    quad = {
        "tau_min": _get(quad, "quadrature.", "tau_min", 1e-6, float),
        "split_a": _get(quad, "quadrature.", "split_a", 1.0, float),
        "tau_max": _get(quad, "quadrature.", "tau_max", 50.0, float),
        "n_low": _get(quad, "quadrature.", "n_low", 200, int),
        "n_high": _get(quad, "quadrature.", "n_high", 400, int),
    }

    excitations = _parse_basis_block(raw.get("excitations", {}), "excitations")
    tests = _parse_basis_block(raw.get("tests", {}), "tests")

    fwd = raw.get("forward", {})
    _expect_keys(fwd, "forward.", {"data_path", "excitation_index"})
    fwd = {
        "data_path": fwd.get("data_path"),
        "excitation_index": _get(fwd, "forward.", "excitation_index", 0, int),
    }

    rec = raw.get("reconstruct", {})
    _expect_keys(rec, "reconstruct.", {"measured_stem", "truth_path", "noise_sigma"})
    rec = {
        "measured_stem": rec.get("measured_stem"),
        "truth_path": rec.get("truth_path"),
        "noise_sigma": _get(rec, "reconstruct.", "noise_sigma", 0.0, float),
    }

    ent = raw.get("entangle", {})
    _expect_keys(ent, "entangle.", {"mode", "exponents", "alpha", "m",
                                    "moment_range", "n_random"})
    ent = {
        "mode": str(ent.get("mode", "probe")),
        "exponents": tuple(float(a) for a in ent.get("exponents", [0.3, 0.7])),
        "alpha": _get(ent, "entangle.", "alpha", 0.5, float),
        "m": _get(ent, "entangle.", "m", 1, int),
        "moment_range": tuple(int(v) for v in ent.get("moment_range", [0, 6])),
        "n_random": _get(ent, "entangle.", "n_random", 32, int),
    }
    if ent["mode"] not in ("probe", "counterexample"):
        raise ConfigError("entangle.mode: expected 'probe' or 'counterexample'")

    for key in ("data_path", "measured_stem", "truth_path"):
        holder = fwd if key == "data_path" else rec
        val = holder.get(key)
        if val is not None:
            probe = Path(val)
            if key == "measured_stem":
                probe = probe.with_suffix(".dn.csv")
            if not probe.exists():
                raise ConfigError(f"referenced input does not exist: {probe}")

    return RunConfig(
        command=cmd,
        grid=grid,
        partition=partition,
        exponents=exponents,
        weights=weights,
        metric=metric,
        potential=potential,
        solver=solver,
        quadrature=quad,
        excitations=excitations,
        tests=tests,
        forward=fwd,
        reconstruct=rec,
        entangle=ent,
        seed=int(raw.get("seed", 0)),
        raw=raw,
    )
