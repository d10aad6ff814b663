"""Command-line front end.

Every subcommand resolves a configuration (defaults, then ``--config``,
then flags), validates it against a JSON schema, runs one module-level
computation and writes a JSON report (and a CSV table where one exists).
Exit codes: 0 success, 1 configuration error, 2 numerical admissibility
error, 3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .fields import AdmissibilityError, TestFunctionSpec, make_field, make_local_field, read_field, write_field
from .spaces import InvariantError, NormedSpace

COMMANDS = ("invariants", "evolute", "gfunction", "dorronsoro", "local", "spectral", "wasserstein",
            "identity-check")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_p = {"oneOf": [{"type": "number", "minimum": 1}, {"enum": ["inf", "Infinity"]}]}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}

SPACE_SCHEMA = {
    "type": "object",
    "properties": {"dim": _int1, "kind": {"enum": ["lp", "weighted-lp", "polytope"]}, "p": _p,
                   "weights": _vec, "facets": _mat, "euclid_scale": _mat},
    "required": ["dim"],
    "additionalProperties": False,
}

FIELD_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["gaussian-bump", "compact-bump", "smoothed-cone", "random-bandlimited",
                          "coordinate-affine", "extension", "local"]},
        "params": {"type": "object"},
        "m": _int1, "seed": {"type": "integer", "minimum": 0}, "n": _int1,
        "box": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "res": {"type": "integer", "minimum": 32},
        "path": {"type": "string"},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0},
        "threads": _int1,
        "out": {"type": ["string", "null"]},
        "format": {"enum": ["json", "csv"]},
        "space": SPACE_SCHEMA,
        "field": FIELD_SCHEMA,
        "n": _int1,
        "q": {"type": "number", "minimum": 1},
        "y_p": _p,
        "gamma": {"oneOf": [_pos, {"const": "auto"}]},
        "per_decade": _int1,
        "ball_samples": _int1,
        "samples": _int1,
        "p_list": {"type": "array", "items": _pos},
        "q_list": {"type": "array", "items": _pos},
        "t": {"type": "number", "minimum": 0},
        "semigroup": {"enum": ["heat", "poisson"]},
        "functionals": {"type": "array", "items": {"enum": ["temporal", "difference", "directional",
                                                              "spatial-div"]}},
        "alpha": {"type": "number", "exclusiveMinimum": 1},
        "z": _vec,
        "split": {"type": "boolean"},
        "eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "r": _pos,
        "rho_points": {"type": "integer", "minimum": 2},
        "x_per_axis": {"type": "integer", "minimum": 2},
        "ns": {"type": "array", "items": _int1},
        "gammas": {"type": "array", "items": _pos},
        "cutoffs": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "minItems": 3},
        "atoms": {"type": "integer", "minimum": 8},
        "directions": _int1,
    },
    "required": ["command"],
    "additionalProperties": False,
}

# options that change how a run executes but not what it computes
RUNTIME_KEYS = ("threads", "out", "format")

BASE_DEFAULTS = {"seed": 0, "threads": 1, "out": None, "format": "json"}

DEFAULTS = {
    "invariants": {"space": {"dim": 2, "kind": "lp", "p": 1}, "samples": 100000, "p_list": [1, 2],
                   "q_list": [2]},
    "evolute": {"field": {"kind": "gaussian-bump", "params": {"s": 1.0}, "n": 1, "box": [-32, 32], "res": 512},
                "t": 1.0, "semigroup": "heat"},
    "gfunction": {"field": {"kind": "gaussian-bump", "params": {"s": 1.0}, "n": 1, "box": [-64, 64], "res": 1024},
                  "q": 2, "functionals": ["temporal", "difference", "directional"], "alpha": 3.0},
    "dorronsoro": {"field": {"kind": "gaussian-bump", "params": {"s": 1.0}, "n": 1, "box": [-32, 32], "res": 512},
                   "q": 2, "gamma": "auto", "per_decade": 48, "ball_samples": 64, "split": False},
    "local": {"space": {"dim": 1, "kind": "lp", "p": 2},
              "field": {"kind": "local", "params": {"profile": "smoothed-abs", "delta": 0.05}, "box": [-4, 4],
                        "res": 1024},
              "q": 2, "gamma": "auto", "eps": 0.25, "rho_points": 24, "x_per_axis": 32, "ball_samples": 64},
    "spectral": {"ns": [1, 2, 3], "gammas": [0.01, 0.1, 1.0, 10.0], "cutoffs": [1e-2, 1e-3, 1e-4]},
    "wasserstein": {"space": {"dim": 1, "kind": "lp", "p": 2}, "atoms": 400, "directions": 64},
    "identity-check": {"n": 1, "gamma": 1.0},
}

IDENTITY_FIELDS = {
    1: {"kind": "gaussian-bump", "params": {"s": 1.0}, "n": 1, "box": [-32, 32], "res": 512},
    2: {"kind": "random-bandlimited", "params": {"radius": 3.0, "band": 2.0}, "n": 2, "box": [-16, 16],
        "res": 256},
}


class ConfigError(ValueError):
    pass


# configuration ------------------------------------------------------------


def _parse_space(text: str) -> dict:
    """JSON descriptor, or the shorthand ``lp:<dim>:<p>``."""
    if text.startswith("lp:"):
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError("space shorthand is lp:<dim>:<p>")
        try:
            p = parts[2] if parts[2] in ("inf", "Infinity") else float(parts[2])
            return {"dim": int(parts[1]), "kind": "lp", "p": p}
        except ValueError as exc:
            raise ConfigError(f"bad space shorthand {text!r}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"space is neither JSON nor lp:<dim>:<p>: {exc}") from exc


def _json_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON argument {text!r}: {exc}") from exc


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heatdiff", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"heatdiff {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="directory for artifacts")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--format", choices=["json", "csv"])
        sp.add_argument("--space", type=_parse_space, help="JSON descriptor or lp:<dim>:<p>")
        sp.add_argument("--field", type=_json_arg, help="JSON field spec")
        sp.add_argument("--n", type=int)
        sp.add_argument("--q", type=float)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--auto-gamma", action="store_true")
        sp.add_argument("--scales", dest="per_decade", type=int, help="scale nodes per decade")
        sp.add_argument("--ball-samples", type=int)
        sp.add_argument("--samples", type=int)
        sp.add_argument("--t", type=float)
        sp.add_argument("--semigroup", choices=["heat", "poisson"])
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--z", type=_floats)
        sp.add_argument("--split", action="store_true", default=None)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--r", type=float)
        sp.add_argument("--rho-points", type=int)
        sp.add_argument("--x-per-axis", type=int)
        sp.add_argument("--atoms", type=int)
        sp.add_argument("--directions", type=int)
        sp.add_argument("--ns", type=lambda s: [int(v) for v in _floats(s)])
        sp.add_argument("--gammas", type=_floats)
    return ap


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(BASE_DEFAULTS)
    cfg.update(copy.deepcopy(DEFAULTS[args.command]))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        if loaded.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {loaded['command']!r}, not {args.command!r}")
        cfg.update(loaded)
    flags = {k: v for k, v in vars(args).items()
             if k not in ("config", "command", "auto_gamma") and v is not None}
    cfg.update(flags)
    if args.auto_gamma:
        cfg["gamma"] = "auto"
    cfg["command"] = args.command
    if args.command == "identity-check" and "field" not in cfg:
        cfg["field"] = copy.deepcopy(IDENTITY_FIELDS.get(cfg["n"], IDENTITY_FIELDS[2]))
        cfg["field"]["n"] = cfg["n"]
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {e.message}")
    if "space" in cfg:
        try:
            NormedSpace.from_descriptor(cfg["space"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config error at space: {exc}") from exc


# builders -------------------------------------------------------------------


def _space(cfg: dict, n: int | None = None) -> NormedSpace:
    if "space" in cfg:
        X = NormedSpace.from_descriptor(cfg["space"])
        if n is not None and X.dim != n:
            raise ConfigError(f"config error at space/dim: space has dim {X.dim}, field has {n}")
        return X
    return NormedSpace.lp(n or cfg.get("n", 1))


def _field(cfg: dict, X: NormedSpace | None = None):
    fc = cfg["field"]
    if "path" in fc:
        return read_field(fc["path"], check=False)
    box, res = fc.get("box", [-32, 32]), fc.get("res", 512)
    if fc.get("kind") == "local":
        if X is None:
            raise ConfigError("config error at field/kind: local profiles need a space")
        return make_local_field(fc.get("params", {}), X, box, res, fc.get("m", 1))
    spec = TestFunctionSpec(fc.get("kind", "gaussian-bump"), dict(fc.get("params", {})), fc.get("m", 1),
                            fc.get("seed", 0))
    return make_field(spec, box, res, fc.get("n"))


def _dorro_cfg(cfg: dict, X: NormedSpace):
    from .dorronsoro import DorroConfig

    return DorroConfig(X=X, q=float(cfg.get("q", 2)), gamma=cfg.get("gamma", "auto"),
                       ball_samples=cfg.get("ball_samples", 64), per_decade=cfg.get("per_decade", 48),
                       seed=cfg["seed"], threads=cfg["threads"])


# commands -------------------------------------------------------------------
# each returns (result dict, csv header, csv rows)


def cmd_invariants(cfg: dict):
    from .spaces import invariant_b, invariant_I_q, invariant_M_p, isotropic_normalize, volume

    X = _space(cfg)
    seed, count = cfg["seed"], cfg["samples"]
    res: dict = {"space": X.descriptor(), "volume": volume(X), "M_p": {}, "I_q": {}}
    rows = []
    for p in cfg["p_list"]:
        e = invariant_M_p(X, p, count, seed)
        res["M_p"][repr(float(p))] = e.to_dict()
        rows.append(["M_p", p, e.value, e.std_error])
    for q in cfg["q_list"]:
        e = invariant_I_q(X, q, count, seed)
        res["I_q"][repr(float(q))] = e.to_dict()
        rows.append(["I_q", q, e.value, e.std_error])
    b = invariant_b(X, seed=seed)
    res["b"] = b.to_dict()
    rows.append(["b", "", b.value, b.std_error])
    if X.euclid_scale is None:
        iso = isotropic_normalize(X, count, seed)
        res["isotropic"] = {"space": iso.space.descriptor(), "L": iso.L, "report": iso.report}
        rows.append(["L", "", iso.L, ""])
    return res, ["quantity", "parameter", "value", "std_error"], rows


def cmd_evolute(cfg: dict):
    from .heat import evolve, max_time

    f = _field(cfg)
    ev = evolve(f, cfg["t"], cfg["semigroup"], with_gradient=False)
    g = ev.as_field()
    res = {"t": ev.t, "kind": ev.kind, "outside_fraction": ev.outside_fraction, "max_time": max_time(f, cfg["semigroup"]),
           "input_l2": f.lq_norm(2.0), "output_l2": g.lq_norm(2.0), "output_l1": g.lq_norm(1.0)}
    if cfg["out"]:
        path = write_field(Path(cfg["out"]) / "evolute.bin", g, extra=ev.sidecar())
        res["artifact"] = path.name
    rows = [[ev.kind, ev.t, res["input_l2"], res["output_l2"], res["output_l1"]]]
    return res, ["kind", "t", "input_l2", "output_l2", "output_l1"], rows


def cmd_gfunction(cfg: dict):
    from .heat import field_gradient
    from .lps import difference_g, directional_g, spatial_div_g, temporal_g

    f = _field(cfg)
    q = float(cfg["q"])
    out, rows = {}, []
    for name in cfg["functionals"]:
        param = ""
        if name == "temporal":
            rep = temporal_g(f, q, threads=cfg["threads"])
        elif name == "difference":
            param = cfg["alpha"]
            rep = difference_g(f, cfg["alpha"], q, threads=cfg["threads"])
        elif name == "directional":
            z = cfg.get("z", [1.0] * f.n)
            param = json.dumps(z)
            rep = directional_g(f, z, q, threads=cfg["threads"])
        else:
            if f.m != 1:
                raise ConfigError("config error at functionals: spatial-div takes the gradient of a scalar field")
            grad = field_gradient(f)[..., 0, :]
            vec = f.with_values(grad, check=False)
            rep = spatial_div_g(vec, q, threads=cfg["threads"], seed=cfg["seed"])
        out[name] = rep.to_dict()
        rows.append([name, q, param, rep.value, rep.discretization_error_estimate, rep.bound_value, rep.ratio])
    return out, ["functional", "q", "parameter", "value", "error", "bound", "ratio"], rows


def cmd_dorronsoro(cfg: dict):
    from .dorronsoro import carleson_functional, j_split

    f = _field(cfg)
    X = _space(cfg, f.n)
    dc = _dorro_cfg(cfg, X)
    rep = carleson_functional(f, dc)
    res = {"carleson": rep.to_dict()}
    if cfg.get("split"):
        js = j_split(f, dc)
        res["split"] = {"total": js.total, "J1": js.J1, "J2": js.J2, "triangle_holds": js.triangle_holds}
    rows = [[t, v] for t, v in rep.extras["per_scale"]]
    return res, ["t", "contribution"], rows


def cmd_local(cfg: dict):
    from .dorronsoro import affine_search, extend_to_global, local_functional, top_scale

    X = _space(cfg)
    f = _field(cfg, X)
    dc = _dorro_cfg(cfg, X)
    F = extend_to_global(f, X)
    T = top_scale(X, dc.q, seed=cfg["seed"])
    r = cfg.get("r", T * T)
    search = affine_search(f, cfg["eps"], dc, r=r, T=T, rho_points=cfg["rho_points"],
                           x_per_axis=cfg["x_per_axis"], F=F)
    lf = local_functional(f, dc, r, T=T, rho_points=cfg["rho_points"], x_per_axis=cfg["x_per_axis"], F=F)
    res = {"search": search.to_dict(), "local_functional": lf.to_dict()}
    rows = [[rho, v] for rho, v in lf.extras["per_scale"]]
    return res, ["rho", "inner_mean"], rows


def cmd_spectral(cfg: dict):
    from .spectral import k_scan, poisson_divergence_scan

    reps = k_scan(cfg["ns"], cfg["gammas"])
    scans = [poisson_divergence_scan(int(n), float(g), cfg["cutoffs"]) for n in cfg["ns"] for g in cfg["gammas"]]
    res = {"k": [r.to_dict() for r in reps], "divergence": [s.to_dict() for s in scans]}
    rows = [[r.n, r.gamma, r.k_value, r.bound_rhs, r.ratio] for r in reps]
    return res, ["n", "gamma", "k", "bound", "ratio"], rows


def cmd_wasserstein(cfg: dict):
    from .spaces import isotropic_normalize
    from .transport import proj_norm_estimate

    X = _space(cfg)
    iso = isotropic_normalize(X, seed=cfg["seed"])
    rep = proj_norm_estimate(iso.space, iso.L, cfg["directions"], cfg["atoms"], cfg["seed"], cfg["threads"])
    res = rep.to_dict()
    res["isotropic_space"] = iso.space.descriptor()
    rows = [[json.dumps(d.x.tolist()), d.w1_nu, d.ratio] for d in rep.per_direction]
    return res, ["x", "w1", "ratio"], rows


def cmd_identity_check(cfg: dict):
    from .spectral import verify_heat_identity

    f = _field(cfg)
    if f.n != cfg["n"]:
        raise ConfigError(f"config error at field/n: field dimension {f.n} differs from n = {cfg['n']}")
    chk = verify_heat_identity(f, float(cfg["gamma"]), threads=cfg["threads"])
    res = {"lhs": chk.lhs, "rhs": chk.rhs, "rel_gap": chk.rel_gap, "k": chk.k}
    return res, ["n", "gamma", "lhs", "rhs", "rel_gap"], [[cfg["n"], cfg["gamma"], chk.lhs, chk.rhs, chk.rel_gap]]


HANDLERS = {"invariants": cmd_invariants, "evolute": cmd_evolute, "gfunction": cmd_gfunction,
            "dorronsoro": cmd_dorronsoro, "local": cmd_local, "spectral": cmd_spectral,
            "wasserstein": cmd_wasserstein, "identity-check": cmd_identity_check}


# output -------------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def numeric_payload(cfg: dict, result: dict) -> dict:
    """The part of a report that must be reproducible: config (minus runtime options) and result."""
    return {"command": cfg["command"], "version": __version__,
            "config": {k: v for k, v in cfg.items() if k not in RUNTIME_KEYS}, "result": result}


def render_json(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def run(cfg: dict) -> tuple[dict, str]:
    """Execute a validated config; returns the full report and the CSV table."""
    result, header, rows = HANDLERS[cfg["command"]](cfg)
    report = numeric_payload(cfg, result)
    report["runtime"] = {k: cfg[k] for k in RUNTIME_KEYS}
    report["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return report, render_csv(header, rows)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = resolve_config(args)
        if cfg["out"]:
            Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
        report, table = run(cfg)
    except ConfigError as exc:
        print(f"heatdiff: {exc}", file=sys.stderr)
        return 1
    except AdmissibilityError as exc:
        print(f"heatdiff: numerical admissibility error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"heatdiff: invariant violation: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TypeError, KeyError) as exc:
        # parameter values the modules reject are configuration errors
        print(f"heatdiff: config error: {exc}", file=sys.stderr)
        return 1
    text = render_json(report)
    if cfg["out"]:
        out = Path(cfg["out"])
        name = cfg["command"]
        (out / f"{name}.json").write_text(text)
        (out / f"{name}.csv").write_text(table)
    sys.stdout.write(table if cfg["format"] == "csv" else text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
