"""Command-line orchestration: forward, dnmap, reconstruct, entangle, validate.

Every run writes a manifest listing the configuration echo, the seed, per-
check outcomes where applicable, wall-clock timings, and a content hash for
every emitted file.  Exit codes: 0 success, 2 configuration error, 3 solver
error, 4 check failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

import fracpara.dnmap as dnmap
import fracpara.forward as forward
import fracpara.grid as gridmod
import fracpara.inverse as inverse
import fracpara.operators as operators
import fracpara.quadrature as quadrature
from fracpara.config import ConfigError, RunConfig, parse_config
from fracpara.fieldio import read_field, write_field

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Manifest:
    def __init__(self, config: RunConfig, out_dir: Path):
        self.data = {
            "command": config.command,
            "seed": config.seed,
            "config": config.raw,
            "files": [],
            "checks": [],
            "timings": {},
        }
        self.out_dir = out_dir
        self._t0 = time.perf_counter()

    def add_file(self, path: Path) -> None:
        self.data["files"].append({"path": str(path), "sha256": _sha256(path)})

    def add_check(self, check: dict) -> None:
        self.data["checks"].append(check)

    def finish(self, exit_code: int) -> Path:
        self.data["timings"]["wall_seconds"] = time.perf_counter() - self._t0
        self.data["exit_code"] = exit_code
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(self.data, indent=1, sort_keys=True, default=str) + "\n")
        return path


def _make_problem(config: RunConfig) -> forward.PolyParabolicProblem:
    return forward.make_problem(
        config.grid, config.partition, config.exponents, config.weights,
        potential=config.potential, metric=config.metric,
    )


def _basis(config: RunConfig, which: str) -> dnmap.ExteriorBasis:
    block = config.excitations if which == "excitations" else config.tests
    region = "w1" if which == "excitations" else "w2"
    return dnmap.make_exterior_basis(
        config.partition, region, block["n_space"], block["n_time"],
        window=block["window"], kind=block["kind"],
    )


def _write_residual_csv(path: Path, sol: forward.Solution) -> None:
    lines = ["quantity,value"]
    lines.append(f"interior_residual,{sol.interior_residual!r}")
    lines.append(f"relative_interior_residual,{sol.relative_interior_residual!r}")
    lines.append(f"exterior_residual,{sol.exterior_residual!r}")
    lines.append(f"initial_residual,{sol.initial_residual!r}")
    lines.append(f"solve_rcond,{sol.solve_rcond!r}")
    path.write_text("\n".join(lines) + "\n")


def _cmd_forward(config: RunConfig, out_dir: Path, manifest: Manifest) -> int:
    problem = _make_problem(config)
    if config.forward["data_path"]:
        f = read_field(config.forward["data_path"])
    else:
        basis = _basis(config, "excitations")
        idx = config.forward["excitation_index"]
        if not 0 <= idx < len(basis):
            raise ConfigError(f"forward.excitation_index: out of range 0..{len(basis)-1}")
        f = basis.field(idx)
    sol = forward.solve_forward(problem, f)
    upath = out_dir / "solution.field"
    write_field(sol.u, upath)
    manifest.add_file(upath)
    rpath = out_dir / "residuals.csv"
    _write_residual_csv(rpath, sol)
    manifest.add_file(rpath)
    manifest.add_check({"name": "interior_residual",
                        "measured": sol.relative_interior_residual,
                        "bound": 1e-8, "passed": sol.relative_interior_residual <= 1e-8})
    return EXIT_OK if sol.relative_interior_residual <= 1e-8 else EXIT_CHECK


def _cmd_dnmap(config: RunConfig, out_dir: Path, manifest: Manifest) -> int:
    problem = _make_problem(config)
    exc = _basis(config, "excitations")
    tst = _basis(config, "tests")
    dn = dnmap.assemble_dn_map(problem, exc, tst)
    csv_path, json_path = dnmap.write_dn_matrix(dn, out_dir / "measurement")
    manifest.add_file(csv_path)
    manifest.add_file(json_path)
    return EXIT_OK


def _cmd_reconstruct(config: RunConfig, out_dir: Path, manifest: Manifest) -> int:
    stem = config.reconstruct["measured_stem"]
    if not stem:
        raise ConfigError("reconstruct.measured_stem: required for the reconstruct command")
    baseline = _make_problem(config)
    measured = dnmap.read_dn_matrix(stem, config.partition)
    rc = inverse.ReconstructionConfig(
        measured=measured,
        tikhonov=config.solver["tikhonov"],
        max_iterations=config.solver["max_iterations"],
        noise_sigma=config.reconstruct["noise_sigma"],
        seed=config.seed,
    )
    out = inverse.reconstruct_potential(rc, baseline)
    est_path = out_dir / "estimate.field"
    write_field(out["potential"], est_path)
    manifest.add_file(est_path)
    report = {
        "residual_history": out["residual_history"],
        "tikhonov": out["tikhonov"],
        "iterations": out["iterations"],
        "relative_error_if_truth_known": None,
    }
    truth_path = config.reconstruct["truth_path"]
    if truth_path:
        truth = read_field(truth_path)
        mask = config.partition.interior_spacetime_mask()
        num = np.linalg.norm((out["potential"].values - truth.values)[mask])
        den = np.linalg.norm(truth.values[mask])
        report["relative_error_if_truth_known"] = float(num / den) if den > 0 else None
    rpath = out_dir / "reconstruction.json"
    rpath.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    manifest.add_file(rpath)
    return EXIT_OK


def _cmd_entangle(config: RunConfig, out_dir: Path, manifest: Manifest) -> int:
    q = config.quadrature
    rule = quadrature.make_quadrature_rule(q["tau_min"], q["split_a"], q["tau_max"],
                                           max(q["n_low"], 2000), max(q["n_high"], 20000))
    ent = config.entangle
    if ent["mode"] == "probe":
        report = inverse.entanglement_probe(
            ent["exponents"], rule, moment_range=ent["moment_range"],
            n_random=ent["n_random"], seed=config.seed,
        )
        ok = report["certified_positive"]
    else:
        grid = config.grid
        calc = operators.fourier_calculus(grid)
        x = grid.spatial_coordinates()
        t = grid.time_coordinates()
        T = grid.physical_half_window
        u1v = np.exp(-((x - 3.0) ** 2) / 0.15)[None, :] * \
            np.where(np.abs(t) < 0.9 * T, np.exp(-t**2 / (0.1 * T * T)), 0.0)[:, None]
        u1v = np.where(config.partition.omega_mask[None, :], u1v, 0.0)
        report = inverse.resonant_counterexample(
            calc, config.partition, "w2", ent["alpha"], ent["m"],
            gridmod.make_field(grid, u1v),
        )
        ok = report["relative_residual"] <= 1e-10
    rpath = out_dir / "entangle.json"
    rpath.write_text(json.dumps(report, indent=1, sort_keys=True, default=str) + "\n")
    manifest.add_file(rpath)
    manifest.add_check({"name": f"entangle_{ent['mode']}", "passed": bool(ok)})
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_validate(config: RunConfig, out_dir: Path, manifest: Manifest) -> int:
    from fracpara.validate import run_validation_suite

    checks = run_validation_suite(str(out_dir))
    for c in checks:
        manifest.add_check(c)
    rpath = out_dir / "validation.json"
    rpath.write_text(json.dumps(checks, indent=1, sort_keys=True) + "\n")
    manifest.add_file(rpath)
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK


_DISPATCH = {
    "forward": _cmd_forward,
    "dnmap": _cmd_dnmap,
    "reconstruct": _cmd_reconstruct,
    "entangle": _cmd_entangle,
    "validate": _cmd_validate,
}


def dispatch(config: RunConfig, out_dir: str | Path) -> int:
    """Run one command, writing outputs and the manifest into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(config, out_dir)
    try:
        code = _DISPATCH[config.command](config, out_dir, manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest.finish(EXIT_CONFIG)
        return EXIT_CONFIG
    except (forward.DirichletEigenvalueError, forward.SolverConvergenceError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        manifest.finish(EXIT_SOLVER)
        return EXIT_SOLVER
    manifest_path = manifest.finish(code)
    print(f"{config.command}: exit {code}, manifest {manifest_path}")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fracpara",
        description="Fractional space-time parabolic operators: forward solves, "
                    "DN maps, potential reconstruction, entanglement probes.",
    )
    parser.add_argument("command", choices=sorted(_DISPATCH))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configuration seed")
    args = parser.parse_args(argv)
    try:
        config = parse_config(args.config, command=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        config.seed = args.seed
        config.raw["seed"] = args.seed
    return dispatch(config, args.out)
