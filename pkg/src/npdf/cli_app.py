"""Command line entry point: config ingestion, runs, reports and density files.

    npdf solve|verify|spectrum|mittleman --config run.json [--Z 2 --q 2 --out out/]

Exit status: 0 all checks pass, 2 a check failed, 3 solver did not
converge, 4 configuration error, 1 anything else. Reports are
deterministic functions of the configuration, the seed and the code
version (no timestamps, no timings).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import os
import platform
import struct
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .mean_field import AtomModel, DensityMatrix, sectors_for
from .mittleman import MittlemanError, self_consistent_projector
from .nopair_scf import ConstraintSpec, OpenShellError, ScfConfig, membership, scf_solve
from .radial_dirac import ALPHA, SUPPORTED_KAPPAS, AtomParams, CriticalCouplingError, build_grid, default_r_max
from .spectral_core import BasisMismatchError, ValidationError
from .verification import SUITES, Check, hydrogenic_table, run_suites

__all__ = [
    "CONFIG_SCHEMA",
    "RunConfig",
    "ConfigError",
    "UnsupportedVersionError",
    "load_config",
    "save_density",
    "load_density",
    "run",
    "main",
]

log = logging.getLogger("npdf")

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_NOCONV, EXIT_CONFIG = 0, 1, 2, 3, 4
MODES = ("solve", "verify", "spectrum", "mittleman")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
NPDM_MAGIC = b"NPDM"
NPDM_VERSION = 1


class ConfigError(ValueError):
    pass


class UnsupportedVersionError(ValueError):
    pass


class NotConvergedError(RuntimeError):
    pass


_pos = {"type": "number", "exclusiveMinimum": 0}
_int0 = {"type": "integer", "minimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "npdf run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": list(MODES)},
        "seed": _int0,
        "atom": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"Z": {"type": "number", "minimum": 0}, "q": _int0, "alpha": {"type": "number", "minimum": 0},
                           "m": _pos},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 64}, "r_min": _pos, "r_max": _pos},
        },
        "scf": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "level_shift": {"type": "number", "minimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "residual_tol": _pos,
                "energy_tol": _pos,
                "handoff": _pos,
                "allow_fractional": {"type": "boolean"},
            },
        },
        "mittleman": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": _pos, "max_outer": {"type": "integer", "minimum": 1}},
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "suites": {"type": "array", "items": {"enum": sorted(SUITES) + ["hydrogenic"]}, "uniqueItems": True},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kappas": {"type": "array", "items": {"enum": list(SUPPORTED_KAPPAS)}, "minItems": 1, "uniqueItems": True},
                "levels": {"type": "integer", "minimum": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "report": {"type": "string"},
                           "eigenvalues": {"type": "string"}, "gamma": {"type": "string"}},
        },
    },
}

# grid defaults per mode: spectra need the fine inner grid, SCF needs a
# moderate operator norm to keep commutator roundoff small
GRID_DEFAULTS = {
    "spectrum": {"n": 1500, "r_min": 1e-6},
    "solve": {"n": 300, "r_min": 1e-3},
    "mittleman": {"n": 300, "r_min": 1e-3},
    "verify": {"n": 128, "r_min": 1e-3},
}


@dataclass
class RunConfig:
    mode: str
    atom: AtomParams
    grid: dict
    scf: ScfConfig
    seed: int = 0
    mittleman: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    spectrum: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {exc.message}") from None
        if "mode" not in data:
            raise ConfigError("mode is required")
        mode = data["mode"]
        a = data.get("atom", {})
        try:
            atom = AtomParams(Z=a.get("Z", 1), alpha=a.get("alpha", ALPHA), m=a.get("m", 1.0), q=a.get("q", 0))
            scf = ScfConfig(**data.get("scf", {}))
        except (ValidationError, CriticalCouplingError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        g = data.get("grid", {})
        grid = {
            "n": g.get("n", GRID_DEFAULTS[mode]["n"]),
            "r_min": g.get("r_min", GRID_DEFAULTS[mode]["r_min"]),
            "r_max": g.get("r_max", default_r_max(atom.Z)),
        }
        if not grid["r_min"] < grid["r_max"]:
            raise ConfigError(f"grid: r_min={grid['r_min']} must be below r_max={grid['r_max']}")
        if mode in ("solve", "mittleman") and atom.q > atom.Z:
            log.warning("q=%d exceeds Z=%g", atom.q, atom.Z)
        out = {"dir": "out", "report": "report.json", "eigenvalues": "eigenvalues.csv", "gamma": "gamma.npdm"}
        out.update(data.get("output", {}))
        return cls(mode, atom, grid, scf, data.get("seed", 0), data.get("mittleman", {}), data.get("verify", {}),
                   data.get("spectrum", {}), out, copy.deepcopy(data))

    def echo(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "atom": {"Z": self.atom.Z, "q": self.atom.q, "alpha": self.atom.alpha, "m": self.atom.m},
            "grid": self.grid,
            "scf": {k: getattr(self.scf, k) for k in self.scf.__dataclass_fields__},
            "mittleman": self.mittleman,
            "verify": self.verify,
            "spectrum": self.spectrum,
            "output": self.output,
        }

    def build_grid(self):
        return build_grid(self.grid["n"], self.grid["r_min"], self.grid["r_max"])


def load_config(path: str | os.PathLike | None, overrides: dict | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{p} must be an object")
        node[leaf] = value
    return RunConfig.from_dict(data)


# ---------------------------------------------------------------- density files


def _sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def _basis_id(grid, sectors) -> str:
    return grid.hash + ":" + ",".join(s.label for s in sectors)


def save_density(path, gamma: DensityMatrix) -> dict:
    """Write magic, header length, JSON header, then the float64 blocks in sector order."""
    cplx = any(np.iscomplexobj(b) for b in gamma.blocks.values())
    parts = []
    for s in gamma.sectors:
        b = np.asarray(gamma.blocks[s.label])
        b = b.astype(np.complex128).view(np.float64) if cplx else b.astype(np.float64)
        parts.append(np.ascontiguousarray(b).astype("<f8").tobytes())
    payload = b"".join(parts)
    g = gamma.grid
    header = {
        "format_version": NPDM_VERSION,
        "basis_id": _basis_id(g, gamma.sectors),
        "grid_hash": g.hash,
        "grid": {"n": g.n, "r_min": g.r_min, "r_max": g.r_max},
        "kappas": sorted({s.kappa for s in gamma.sectors}, key=list(SUPPORTED_KAPPAS).index),
        "sectors": [{"label": s.label, "kappa": s.kappa, "degeneracy": s.degeneracy} for s in gamma.sectors],
        "occupations": {s.label: [float(x) for x in gamma.occupations[s.label] if abs(x) > 1e-12]
                        for s in gamma.sectors},
        "charge": gamma.charge,
        "dtype": "complex128" if cplx else "float64",
        "block_shape": [2 * g.n, 2 * g.n],
        "payload_sha256": _sha(payload),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(NPDM_MAGIC + struct.pack("<I", len(hb)) + hb + payload)
    return header


def read_density_header(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:4] != NPDM_MAGIC:
        raise ValidationError(f"{path}: not an npdm file")
    (hl,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hl])
    return header, raw[8 + hl:]


def load_density(path, grid=None) -> DensityMatrix:
    """Read a density file; refuses a grid other than ``grid`` with "basis mismatch"."""
    header, payload = read_density_header(path)
    ver = header.get("format_version")
    if ver != NPDM_VERSION:
        raise UnsupportedVersionError(f"unsupported npdm format version {ver!r} (this build reads {NPDM_VERSION})")
    if grid is not None and header["grid_hash"] != grid.hash:
        raise BasisMismatchError(
            f"basis mismatch: file grid {header['grid_hash'][:16]} vs requested grid {grid.hash[:16]}")
    if _sha(payload) != header["payload_sha256"]:
        raise ValidationError(f"{path}: payload checksum mismatch")
    gp = header["grid"]
    g = grid or build_grid(gp["n"], gp["r_min"], gp["r_max"])
    if g.hash != header["grid_hash"]:
        raise BasisMismatchError("basis mismatch: header grid parameters do not reproduce the grid hash")
    sectors = sectors_for(tuple(header["kappas"]))
    if [s.label for s in sectors] != [s["label"] for s in header["sectors"]]:
        raise BasisMismatchError("basis mismatch: sector layout differs")
    if header["basis_id"] != _basis_id(g, sectors):
        raise BasisMismatchError("basis mismatch: basis_id differs")
    n2 = header["block_shape"][0]
    cplx = header["dtype"] == "complex128"
    per = n2 * n2 * (2 if cplx else 1)
    arr = np.frombuffer(payload, dtype="<f8")
    if arr.size != per * len(sectors):
        raise ValidationError(f"{path}: payload has {arr.size} values, expected {per * len(sectors)}")
    blocks = {}
    for i, s in enumerate(sectors):
        chunk = arr[i * per:(i + 1) * per].astype(np.float64)
        blocks[s.label] = chunk.view(np.complex128).reshape(n2, n2) if cplx else chunk.reshape(n2, n2)
    return DensityMatrix(g, sectors, blocks)


# ---------------------------------------------------------------- modes


def _write_csv(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "index", "value", "oracle", "rel_err"])
    for r in rows:
        w.writerow([r["channel"], r["index"], repr(float(r["value"])),
                    "" if r.get("oracle") is None else repr(float(r["oracle"])),
                    "" if r.get("rel_err") is None else repr(float(r["rel_err"]))])
    text = buf.getvalue()
    Path(path).write_text(text)
    return _sha(text.encode())


def _run_spectrum(cfg: RunConfig):
    kappas = tuple(cfg.spectrum.get("kappas", SUPPORTED_KAPPAS))
    levels = cfg.spectrum.get("levels", 3)
    rows, val = hydrogenic_table(cfg.atom.Z, kappas, cfg.grid["n"], cfg.grid["r_min"], cfg.grid["r_max"], levels,
                                 cfg.atom.alpha)
    tol = 1e-6 if cfg.atom.Z <= 20 else 1e-5
    checks = [Check.upper(f"{r['channel']} n#{r['index']}", "Sommerfeld fine-structure energy", tol, r["rel_err"],
                          {"row": r}) for r in rows]
    for k in kappas:
        found = sum(r["kappa"] == k for r in rows)
        checks.append(Check.lower(f"kappa={k:+d} resolved levels", "resolved gap eigenvalues", min(levels, 1), found))
    for v in val:
        checks.append(Check.upper(f"kappa={v['kappa']:+d} unmatched gap states", "no spurious gap eigenvalues", 0,
                                  len(v["failures"]), {"failures": v["failures"]}))
    result = {"rows": rows, "max_rel_err": max((r["rel_err"] for r in rows), default=None), "validation": val}
    return result, checks, rows, None


def _solve_checks(rep, spec, model, tol):
    g = rep.gamma
    m = model.params.m
    P = {s.label: spec.plus(s.label) for s in g.sectors}
    idem = max(np.linalg.norm(b @ b - b) for b in g.blocks.values())
    inside = max(np.linalg.norm(g.blocks[k] - P[k] @ g.blocks[k] @ P[k]) for k in P)
    herm = max(np.linalg.norm(b - b.conj().T) for b in g.blocks.values())
    v = membership(g, spec)
    checks = [
        Check.upper("commutator residual", "[gamma, L+ D^(gamma) L+] = 0", tol, rep.residual),
        Check.upper("idempotent", "gamma = gamma^2", 1e-9, idem),
        Check.upper("self-adjoint", "gamma = gamma*", 1e-9, herm),
        Check.upper("inside positive subspace", "gamma = L+ gamma L+", 1e-9, inside),
        Check.upper("trace", "tr gamma = q", 1e-8, abs(g.charge - spec.q)),
        Check.lower("membership", "-L- <= gamma <= L+, L- gamma L+ = 0", 0, 0 if v else -len(v.violations),
                    {"violations": [list(map(str, x)) for x in v.violations]}),
    ]
    if rep.eps_occupied:
        checks.append(Check.lower("occupied eps > 0", "eps_i in (0, m)", 0.0, min(rep.eps_occupied)))
        checks.append(Check.upper("occupied eps < m", "eps_i in (0, m)", m, max(rep.eps_occupied)))
    if rep.gap_value is not None:
        checks.append(Check.lower("no unfilled shells", "eps_q < eps_{q+1}", 1e-10, rep.gap_value))
    return checks


def _orbital_rows(gamma, spec, model, extra: int = 3):
    from .mean_field import mean_field_matrices

    D = mean_field_matrices(gamma, model)
    rows = []
    for s in gamma.sectors:
        V = spec.vplus(s.label)
        w = np.linalg.eigvalsh(V.conj().T @ D[s.label] @ V)
        occ = int(round(float(np.real(np.trace(gamma.blocks[s.label])))))
        for i in range(min(w.size, occ + extra)):
            rows.append({"channel": s.label, "index": i, "value": float(w[i]), "oracle": None, "rel_err": None})
    return rows


def _run_solve(cfg: RunConfig):
    grid = cfg.build_grid()
    model = AtomModel(grid, cfg.atom)
    spec = ConstraintSpec.build(model, None, cfg.atom.q, "S_partial_q")
    rep = scf_solve(model, config=cfg.scf, spec=spec)
    result = rep.summary()
    result["iterations"] = rep.iterations
    checks = _solve_checks(rep, spec, model, cfg.scf.residual_tol)
    if not rep.converged:
        raise NotConvergedError(json.dumps({"residual": rep.residual, "iterations": rep.n_iter}))
    return result, checks, _orbital_rows(rep.gamma, spec, model), rep.gamma


def _run_mittleman(cfg: RunConfig):
    grid = cfg.build_grid()
    model = AtomModel(grid, cfg.atom)
    rep = self_consistent_projector(model, cfg.atom.q, cfg.scf, tol=cfg.mittleman.get("tol", 1e-10),
                                    max_outer=cfg.mittleman.get("max_outer", 30))
    result = rep.summary()
    rg, rl = rep.residuals
    checks = [
        Check.upper("euler residual Gamma", "[D^(gamma), Gamma] = 0", 1e-7, rg),
        Check.upper("euler residual Lambda", "[D^(gamma), Lambda] = 0", 1e-7, rl),
        Check.upper("pair functional vs E_m", "E(Gamma, Lambda) = E_m(Gamma - Lambda)", 1e-9,
                    abs(rep.energy_frak - rep.energy_m)),
        Check.upper("integer trace", "tr(Gamma - Lambda) in Z", 1e-8, abs(rep.pair.trace - round(rep.pair.trace))),
    ]
    if not rep.converged:
        raise NotConvergedError(json.dumps({"outer_iterations": len(rep.iterations)}))
    return result, checks, [], rep.pair.gamma


def _run_verify(cfg: RunConfig):
    names = cfg.verify.get("suites", list(SUITES))
    suites = run_suites(cfg.seed, names, workers=cfg.verify.get("workers", 4))
    checks = [c for s in suites for c in s.checks]
    result = {"suites": [s.to_dict() for s in suites]}
    return result, checks, [], None


RUNNERS = {"solve": _run_solve, "verify": _run_verify, "spectrum": _run_spectrum, "mittleman": _run_mittleman}


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def versions() -> dict:
    return {"npdf": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "jsonschema": metadata.version("jsonschema"), "python": platform.python_version()}


def run(cfg: RunConfig) -> tuple[dict, int]:
    """Execute the configured mode, write the output files, return (report, exit code)."""
    out = Path(cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    report = {"config": cfg.echo(), "versions": versions(), "checksums": {}}
    # output paths do not change results, so they stay out of the checksum
    compute = {k: v for k, v in cfg.echo().items() if k != "output"}
    report["checksums"]["config"] = _sha(json.dumps(_clean(compute), sort_keys=True).encode())
    code = EXIT_OK
    try:
        result, checks, rows, gamma = RUNNERS[cfg.mode](cfg)
        report["results"] = result
        report["checks"] = [c.to_dict() for c in checks]
        report["pass"] = all(c.passed for c in checks)
        if rows:
            report["checksums"]["eigenvalues"] = _write_csv(out / cfg.output["eigenvalues"], rows)
        if gamma is not None:
            hdr = save_density(out / cfg.output["gamma"], gamma)
            report["checksums"]["gamma_payload"] = hdr["payload_sha256"]
        code = EXIT_OK if report["pass"] else EXIT_FAIL
    except NotConvergedError as exc:
        report["error"] = {"type": "not_converged", "message": str(exc)}
        code = EXIT_NOCONV
    except (OpenShellError, MittlemanError) as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code = EXIT_NOCONV
    except (CriticalCouplingError, ConfigError) as exc:
        report["error"] = {"type": "config", "message": str(exc)}
        code = EXIT_CONFIG
    report["exit_code"] = code
    (out / cfg.output["report"]).write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
    return report, code


def _setup_logging():
    level = os.environ.get("NPDF_LOG", "warn").lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"NPDF_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npdf", description="No-pair Dirac-Fock solver and verification suite.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--Z", type=float, help="nuclear charge")
    p.add_argument("--q", type=int, help="electron number")
    p.add_argument("--alpha", type=float, help="fine-structure constant")
    p.add_argument("--grid-n", type=int, dest="grid_n", help="radial grid points")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="seed for randomized suites")
    return p


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": {"type": kind, "message": message}, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        _setup_logging()
        overrides = {"mode": args.mode, "atom.Z": args.Z, "atom.q": args.q, "atom.alpha": args.alpha,
                     "grid.n": args.grid_n, "output.dir": args.out, "seed": args.seed}
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    try:
        report, code = run(cfg)
    except OSError as exc:
        return _error("io", str(exc), EXIT_ERROR)
    if "error" in report:
        _error(report["error"]["type"], report["error"]["message"], code)
    else:
        failed = [c["name"] for c in report["checks"] if not c["pass"]]
        print(f"npdf {cfg.mode}: {'pass' if not failed else 'FAIL'} "
              f"({len(report['checks']) - len(failed)}/{len(report['checks'])} checks) -> {cfg.output['dir']}")
        for name in failed[:20]:
            print(f"  failed: {name}")
    return code


if __name__ == "__main__":
    sys.exit(main())
