"""Command-line driver: ``degenlab <command> --config <file> [--out <dir>] [--seed <n>]``.

Every run reads one JSON config, writes its report files plus a manifest and
exits with 0 (success), 1 (invalid config), 2 (precondition violated) or
3 (a report-level check failed).
"""
import argparse
import datetime
import json
import os
from pathlib import Path
import platform
import sys
import time

import jsonschema
import numpy as np
import scipy

from . import __version__, bvp
from ._io import dumps, write_csv, write_json
from .errors import DegenlabError, PreconditionError

COMMANDS = ("weight", "corona", "spec", "qest", "bvp", "replay", "suite")
OUT_ENV = "DEGENLAB_OUT"


class ConfigError(Exception):
    pass


# -- schema -----------------------------------------------------------------------

_WEIGHT = {
    "oneOf": [
        {"type": "string", "enum": ["constant", "power", "random-dyadic"]},
        {
            "type": "object",
            "properties": {
                "kind": {"enum": ["constant", "power", "random-dyadic", "product"]},
                "params": {"type": "object"},
                "depth": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
            },
            "required": ["kind"],
        },
    ]
}

_COEFF = {
    "oneOf": [
        {"type": "string", "enum": ["identity", "random", "hermitian", "lower-triangular"]},
        {
            "type": "object",
            "properties": {
                "kind": {"enum": ["identity", "random", "hermitian", "lower-triangular", "constant"]},
                "seed": {"type": "integer"},
                "level": {"type": "integer", "minimum": 0},
                "strength": {"type": "number", "minimum": 0},
                "matrix": {"type": "array", "minItems": 2, "maxItems": 2,
                           "items": {"type": "array", "minItems": 2, "maxItems": 2}},
            },
            "required": ["kind"],
        },
    ]
}

_N = {"type": "integer", "minimum": 4}

_COMMON = {
    "command": {"enum": list(COMMANDS)},
    "seed": {"type": "integer", "minimum": 0},
    "output": {"type": "string", "minLength": 1},
    "format": {"enum": ["json", "csv"]},
}

SCHEMAS = {
    "weight": {
        "weight": _WEIGHT, "kind": {"enum": ["constant", "power", "random-dyadic", "product"]},
        "params": {"type": "object"}, "depth": {"type": "integer", "minimum": 2},
        "samples": {"type": "integer", "minimum": 1},
    },
    "corona": {
        "weight": _WEIGHT, "sigma_w": {"type": "number", "exclusiveMinimum": 0},
        "depth": {"type": "integer", "minimum": 1, "maximum": 20},
    },
    "spec": {
        "weight": _WEIGHT, "w": _WEIGHT, "B": _COEFF, "N": _N, "operator": {"enum": ["DB", "BD"]},
        "method": {"enum": ["auto", "eig", "sign"]}, "probes": {"type": "integer", "minimum": 1},
    },
    "qest": {
        "weight": _WEIGHT, "w": _WEIGHT, "B": _COEFF, "N": _N, "operator": {"enum": ["DB", "BD"]},
        "probes": {"type": "integer", "minimum": 32},
    },
    "bvp": {
        "kind": {"enum": list(bvp.KINDS)}, "weight": _WEIGHT, "w": _WEIGHT, "A": _COEFF, "N": _N,
        "Tmax": {"type": "number", "exclusiveMinimum": 0},
        "datum": {
            "type": "object",
            "properties": {"type": {"enum": ["fourier", "indicator", "file"]}, "params": {"type": "object"}},
            "required": ["type"],
        },
        "export_t": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
    "replay": {
        "weight": _WEIGHT, "w": _WEIGHT, "N": _N, "c0": {"type": "number", "exclusiveMinimum": 0},
        "tau_steps": {"type": "integer", "minimum": 2}, "directions": {"type": "integer", "minimum": 1},
    },
    "suite": {
        "profile": {"enum": ["smoke", "full"]},
        "ids": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 13}},
    },
}

REQUIRED = {"bvp": ["kind"]}


def schema_for(command):
    props = dict(_COMMON)
    props.update(SCHEMAS[command])
    return {"type": "object", "properties": props, "required": REQUIRED.get(command, []),
            "additionalProperties": False}


def load_config(path, command):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON ({exc.msg})") from None
    return validate_config(cfg, command, str(path))


def validate_config(cfg, command, source="config"):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    if cfg.get("command", command) != command:
        raise ConfigError(f"{source}: field 'command' is {cfg['command']!r} but the CLI command is {command!r}")
    validator = jsonschema.Draft202012Validator(schema_for(command))
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path)
        if not where and err.validator == "additionalProperties":
            extra = sorted(set(cfg) - set(schema_for(command)["properties"]))
            where = extra[0] if extra else "<root>"
        raise ConfigError(f"{source}: field '{where or '<root>'}': {err.message}")
    return dict(cfg, command=command)


# -- config interpretation ----------------------------------------------------------

def _weight(cfg, default="constant"):
    from .weights import weight_from_spec
    spec = cfg.get("weight", cfg.get("w", default))
    if isinstance(spec, str):
        spec = {"kind": spec, "params": {"a": 0.5}} if spec == "power" else {"kind": spec}
    if spec["kind"] == "random-dyadic" and "seed" not in spec:
        spec = dict(spec, seed=cfg["seed"])
    return weight_from_spec(spec)


def _coefficients(spec, n, seed):
    from .operators import CoefficientMatrix, random_accretive
    if spec is None:
        spec = "identity"
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec["kind"]
    s = spec.get("seed", seed)
    level, strength = spec.get("level", 3), spec.get("strength", 0.4)
    if kind == "identity":
        return CoefficientMatrix.identity(n)
    if kind == "random":
        return random_accretive(n, s, level, strength)
    if kind == "hermitian":
        return bvp.random_hermitian_c(n, s, level, strength)
    if kind == "lower-triangular":
        return bvp.lower_triangular_c(n, s, level)
    if "matrix" not in spec:
        raise PreconditionError("constant coefficients need a 2x2 'matrix'")
    m = np.array([[complex(*z) if isinstance(z, list) else complex(z) for z in row] for row in spec["matrix"]])
    return CoefficientMatrix.constant(m, n)


def _grid(cfg, n_default=64):
    from .operators import DiscreteD, WeightedGrid
    n = cfg.get("N", n_default)
    grid = WeightedGrid.from_model(_weight(cfg), n)
    return grid, DiscreteD(grid)


def _datum(cfg, grid, seed):
    spec = cfg.get("datum", {"type": "fourier"})
    params = spec.get("params", {})
    if spec["type"] == "fourier":
        return bvp.fourier_datum(grid, params.get("modes", 4), params.get("seed"))
    if spec["type"] == "indicator":
        from .dyadic import DyadicCube
        cube = DyadicCube(params.get("level", 1), params.get("index", 0))
        phi = np.zeros(grid.n, dtype=complex)
        phi[cube.grid_slice(grid.n)] = params.get("value", 1.0)
        return phi
    path = params.get("path")
    if not path:
        raise PreconditionError("file datum needs params.path")
    phi = np.loadtxt(path, dtype=float, ndmin=1)
    if phi.size != grid.n:
        raise PreconditionError(f"datum file has {phi.size} values, grid has {grid.n}")
    return phi.astype(complex)


# -- commands -------------------------------------------------------------------------
# Each returns (report, tables, failures): tables maps a file stem to (header, rows).

def cmd_weight(cfg):
    from .weights import ainfty_profile
    if "weight" not in cfg and "kind" in cfg:
        cfg = dict(cfg, weight={k: cfg[k] for k in ("kind", "params", "depth") if k in cfg})
    w = _weight(cfg)
    depth = cfg.get("depth", min(w.depth, 12))
    prof = ainfty_profile(w, depth, cfg.get("samples", 64), cfg["seed"])
    return {"weight": w.to_spec(), "weight_id": w.weight_id, "profile": prof}, {}, []


def cmd_corona(cfg):
    from .corona import (check_first_statement, check_maximality, corona_decompose, corona_partition_counts,
                         generation_disjoint, square_function_report)
    from .dyadic import DyadicCube
    w = _weight(cfg, {"kind": "random-dyadic", "params": {"beta": 0.3}})
    depth = cfg.get("depth", min(w.depth, 10))
    sigma_w = cfg.get("sigma_w", 0.1)
    dec = corona_decompose(w, DyadicCube(0, 0), sigma_w, depth)
    total, parts = corona_partition_counts(dec)
    sq = square_function_report(w, dec)
    report = {
        "weight_id": w.weight_id, "sigma_w": sigma_w, "depth": depth,
        "packing_ratio": dec.packing_ratio, "packing_scaled": dec.packing_ratio * sigma_w**2,
        "generation_sizes": [len(g) for g in dec.generations],
        "first_statement_max": check_first_statement(w, dec),
        "maximal": check_maximality(w, dec), "generation_disjoint": generation_disjoint(dec),
        "partition": [total, parts],
        "square_function": {"lhs": sq[0], "bmo": sq[1], "ratio": sq[2]},
        "tree": dec.to_tree(),
    }
    fails = []
    if not report["maximal"]:
        fails.append("stopping cubes are not maximal")
    if not report["generation_disjoint"]:
        fails.append("a generation overlaps itself")
    if total != parts:
        fails.append("sawtooth regions do not tile the root box")
    rows = [(g + 1, c.level, c.index) for g, gen in enumerate(dec.generations) for c in gen]
    return report, {"stopping": (["generation", "level", "index"], rows)}, fails


def _algebra(calc, seed, count=5):
    from .quadratic import random_range_fields
    worst = 0.0
    for v in random_range_fields(calc, count, seed):
        nv = np.linalg.norm(v)
        s = calc.apply("sgn", v)
        p, m = calc.apply("chi+", v), calc.apply("chi-", v)
        e = calc.apply("exp", calc.apply("exp", v, 0.25), 0.5) - calc.apply("exp", v, 0.75)
        for r in (calc.apply("sgn", s) - v, p + m - v, calc.apply("chi+", p) - p, e):
            worst = max(worst, float(np.linalg.norm(r) / nv))
    return worst


def cmd_spec(cfg):
    from .operators import SpectralCalculus
    grid, D = _grid(cfg)
    B = _coefficients(cfg.get("B"), grid.n, cfg["seed"])
    calc = SpectralCalculus(D, B, cfg.get("operator", "DB"), cfg.get("method", "auto"))
    alg = _algebra(calc, cfg["seed"], cfg.get("probes", 5))
    report = {
        "weight_id": grid.weight_id, "B": B.label, "N": grid.n, "operator": calc.kind, "method": calc.method,
        "kappa": calc.kappa, "mu": calc.mu, "eigenbasis_condition": calc.cond,
        "reconstruction_error": calc.reconstruction_error, "resolvent_constant": calc.resolvent_constant(),
        "algebra_residual": alg,
    }
    lam = np.sort_complex(calc.lam)
    rows = [(k, z.real, z.imag) for k, z in enumerate(lam)]
    return report, {"spectrum": (["k", "re", "im"], rows)}, ([] if alg <= 1e-9 else ["algebra residual above 1e-9"])


def cmd_qest(cfg):
    from .operators import SpectralCalculus
    from .quadratic import quadratic_ratio_sup
    grid, D = _grid(cfg)
    B = _coefficients(cfg.get("B"), grid.n, cfg["seed"])
    calc = SpectralCalculus(D, B, cfg.get("operator", "DB"))
    rep = quadratic_ratio_sup(calc, cfg.get("probes", 64), cfg["seed"])
    rows = [(k, r) for k, r in enumerate(rep.samples)]
    fails = [] if rep.inf > 0 else ["lower square-function bound is not positive"]
    return rep.to_json(), {"probes": (["probe", "ratio"], rows)}, fails


def cmd_bvp(cfg):
    from .dyadic import make_tgrid
    grid, D = _grid(cfg)
    c = _coefficients(cfg.get("A"), grid.n, cfg["seed"])
    phi = _datum(cfg, grid, cfg["seed"])
    if cfg["kind"] == "neumann" and cfg.get("datum", {}).get("type", "fourier") != "file":
        phi = bvp.neumann_compatible(grid, phi)
    tgrid = make_tgrid(grid.n, t_max=cfg.get("Tmax", 4.0))
    sol = bvp.solve_tindep(D, c, cfg["kind"], phi, tgrid=tgrid)
    norms = sol.compute_norms()
    weak = bvp.weak_form_residual(D, sol.hardy.B, sol.hardy, sol.coeffs, seed=cfg["seed"])
    report = {
        "kind": sol.kind, "weight_id": grid.weight_id, "A": c.label, "N": grid.n, "Tmax": tgrid.t_max,
        "sigma_min": sol.sigma_min, "condition": sol.condition, "constant": sol.constant,
        "norms": norms, "weak_form_residual": weak,
    }
    ts = [float(t) for t in cfg.get("export_t", [0.0, 0.125, 0.25, 0.5, 1.0])]
    header = ["t", "x", "u_re", "u_im", "f_perp_re", "f_perp_im", "f_par_re", "f_par_im"]
    fails = [] if weak <= 1e-8 else ["weak form residual above 1e-8"]
    return report, {"solution": (header, sol.to_rows(ts))}, fails


def cmd_replay(cfg):
    from .corona import calibrate, log_weight_samples, random_unit_vectors
    from .dyadic import DyadicCube
    from .operators import CoefficientMatrix, SpectralCalculus
    from .quadratic import proof_replay
    from .weights import ainfty_profile
    cfg = dict(cfg)
    cfg.setdefault("weight", {"kind": "random-dyadic", "params": {"beta": 0.3}, "depth": 12})
    grid, D = _grid(cfg)
    model = _weight(cfg)
    calc = SpectralCalculus(D, CoefficientMatrix.identity(grid.n))
    c0 = cfg.get("c0") or ainfty_profile(model, 6, seed=cfg["seed"]).c0
    logw = log_weight_samples(model, grid.n)
    cases = [(calc, logw, DyadicCube(2, k), xi, 0.0) for k in range(4)
             for xi in random_unit_vectors(3, cfg["seed"])]
    cal = calibrate(cases, c0)
    rep = proof_replay(calc, model, cal.params, tau_steps=cfg.get("tau_steps", 8),
                       directions=cfg.get("directions", 16), c0=c0, seed=cfg["seed"])
    report = {"calibration": {"params": cal.params, "gap_target": cal.gap_target, "max_gap": cal.max_gap,
                              "train_ratio": cal.train_ratio, "c0": c0},
              "replay": rep}
    fails = [] if rep.direct <= rep.bound else ["direct Carleson norm exceeds the aggregated bound"]
    return report, {}, fails


def cmd_suite(cfg):
    from .acceptance import run_all
    results = run_all(cfg.get("profile", "smoke"), cfg.get("ids"), echo=lambda s: print(s, file=sys.stderr))
    rows = [r.row() for r in results]
    report = {"profile": cfg.get("profile", "smoke"),
              "criteria": [{"id": r.id, "name": r.name, "value": r.value, "bound": r.bound, "pass": r.passed,
                            "details": r.details} for r in results]}
    fails = [f"criterion {r.id} failed" for r in results if not r.passed]
    return report, {"suite": (["id", "value", "bound", "pass"], rows)}, fails


HANDLERS = {"weight": cmd_weight, "corona": cmd_corona, "spec": cmd_spec, "qest": cmd_qest, "bvp": cmd_bvp,
            "replay": cmd_replay, "suite": cmd_suite}


# -- driver ---------------------------------------------------------------------------

def _versions():
    return {"degenlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(cfg, out_dir):
    """Run a validated config; return (status, exit code, output paths)."""
    command = cfg["command"]
    prefix = cfg.get("output", command)
    out_dir = Path(out_dir)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    outputs = []
    try:
        report, tables, fails = HANDLERS[command](cfg)
        if cfg.get("format", "json") == "json":
            outputs.append(write_json(out_dir / f"{prefix}_report.json", report))
        else:
            outputs.append(write_csv(out_dir / f"{prefix}_report.csv", ["key", "value"], _flatten(report)))
        for stem, (header, rows) in sorted(tables.items()):
            outputs.append(write_csv(out_dir / f"{prefix}_{stem}.csv", header, rows))
        status, code = ("failed: " + "; ".join(fails), 3) if fails else ("ok", 0)
    except PreconditionError as exc:
        status, code = f"precondition: {exc}", 2
    except DegenlabError as exc:
        status, code = f"error: {type(exc).__name__}: {exc}", 3
    manifest = {"config": cfg, "seed": cfg["seed"], "started": started,
                "elapsed_s": round(time.perf_counter() - t0, 3), "outputs": [str(p) for p in outputs],
                "status": status, "versions": _versions()}
    outputs.append(write_json(out_dir / f"{prefix}_manifest.json", manifest))
    return status, code, outputs


def _flatten(obj, prefix=""):
    from ._io import to_plain
    obj = to_plain(obj)
    rows = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            rows.extend(_flatten(obj[k], f"{prefix}{k}."))
    elif isinstance(obj, list) and any(isinstance(v, (list, dict)) for v in obj):
        for i, v in enumerate(obj):
            rows.extend(_flatten(v, f"{prefix}{i}."))
    else:
        rows.append((prefix[:-1], dumps(obj).strip() if isinstance(obj, list) else obj))
    return rows


def build_parser():
    p = argparse.ArgumentParser(prog="degenlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file (optional for suite)")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the current directory)")
    p.add_argument("--seed", type=int, help="override the config seed")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config, args.command)
        elif args.command == "suite":
            cfg = {"command": "suite", "profile": "smoke"}
        else:
            raise ConfigError("--config is required")
    except ConfigError as exc:
        print(f"degenlab: invalid config: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        if args.seed < 0:
            print("degenlab: invalid config: field 'seed': must be non-negative", file=sys.stderr)
            return 1
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    out = args.out or os.environ.get(OUT_ENV) or "."
    status, code, outputs = run(cfg, out)
    for path in outputs:
        print(path)
    if code:
        print(f"degenlab: {status}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
