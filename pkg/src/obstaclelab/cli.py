"""Command line driver: JSON scenario configs in, CSV fields and JSON reports out.

A config looks like::

    {
      "settings": {"tolerance": 1e-10},
      "scenarios": [
        {"label": "square",
         "domain": {"shape": "unit_square", "spacing": 0.0078125},
         "data1": {"g": 1, "psi": 0.04},
         "data2": {"g": "1 + eps*indicator(0, 1, 0, 0.5)", "psi": 0.04},
         "eta": 0.05,
         "eps": [0.02, 0.05, 0.1, 0.2]}
      ]
    }

Field expressions use ``+ - * /``, unary minus, numbers, ``x``, ``y``,
``eps``, ``pi``, ``min``, ``max``, ``abs`` and ``indicator(x0, x1[, y0, y1])``
(one on the closed box, zero elsewhere).
"""

from __future__ import annotations

import argparse
import ast
import csv
import json
import logging
import math
import operator
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .elliptic import SolverError, SolverSettings
from .grid_domain import DomainError, DomainSpec, GridDomain, NodeMask, build_domain, mask_depth
from .kernels import KernelError, kernel_bounds
from .obstacle import ObstacleData, solve_obstacle
from .stability import Scenario, sweep, verify_nondegeneracy, verify_stability

__all__ = ["ConfigError", "REPORT_SCHEMA", "SWEEP_COLUMNS", "compile_expression", "load_config", "main"]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

SWEEP_COLUMNS = ("eps", "lhs", "boundary_term", "rhs_term", "holds")

_num = {"type": ["number", "null"]}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "scenario_label", "mode", "status", "lhs", "boundary_term", "interior_term", "rhs",
        "c1", "c2", "c3", "c4", "g_lower", "g_upper", "k_lower", "k_upper",
        "lambda", "mu", "eta", "delta", "ybar", "allowance", "slack", "holds", "message",
    ],
    "properties": {
        "scenario_label": {"type": "string"},
        "mode": {"enum": ["stability", "nondegeneracy"]},
        "status": {"enum": ["ok", "inapplicable", "under-resolved", "monotonicity-violated"]},
        **{k: _num for k in ("lhs", "boundary_term", "interior_term", "rhs", "c1", "c2", "c3", "c4",
                             "g_lower", "g_upper", "k_lower", "k_upper", "lambda", "mu", "eta",
                             "delta", "allowance", "slack")},
        "ybar": {"type": ["array", "null"], "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
        "holds": {"type": ["boolean", "null"]},
        "message": {"type": "string"},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


# -- expressions -------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_CONSTANTS = {"pi": math.pi}
_VARIABLES = ("x", "y", "eps")


def _indicator(x, y, *box):
    if len(box) == 2:
        return ((x >= box[0]) & (x <= box[1])).astype(float)
    if len(box) == 4:
        return ((x >= box[0]) & (x <= box[1]) & (y >= box[2]) & (y <= box[3])).astype(float)
    raise ValueError("indicator takes 2 or 4 arguments")


def _reduce(fn):
    def call(*args):
        if not args:
            raise ValueError("needs at least one argument")
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    return call


_FUNCTIONS = {"min": _reduce(np.minimum), "max": _reduce(np.maximum), "abs": np.abs}


def compile_expression(source, key: str = "expression"):
    """Turn a number or expression string into ``fn(x, y, eps) -> array``.

    Raises ConfigError naming ``key`` when the expression is malformed.
    """
    if isinstance(source, bool) or not isinstance(source, (int, float, str)):
        raise ConfigError(f"{key}: expected a number or an expression string, got {source!r}")
    text = str(source)
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} (column {exc.offset})") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return check(node.left) and check(node.right)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return check(node.operand)
        if isinstance(node, ast.Constant) and type(node.value) in (int, float):
            return True
        if isinstance(node, ast.Name) and (node.id in _VARIABLES or node.id in _CONSTANTS):
            return True
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords
                and (node.func.id in _FUNCTIONS or node.func.id == "indicator")):
            return all(check(a) for a in node.args)
        if isinstance(node, ast.Name):
            what = node.id
        elif isinstance(node, (ast.BinOp, ast.UnaryOp)):
            what = type(node.op).__name__
        else:
            what = type(node).__name__
        raise ConfigError(f"{key}: {what!r} is not allowed in {text!r} (column {node.col_offset + 1})")

    check(tree)

    def run(node, env):
        if isinstance(node, ast.Expression):
            return run(node.body, env)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](run(node.left, env), run(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = run(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTANTS[node.id]
        args = [run(a, env) for a in node.args]
        if node.func.id == "indicator":
            if not all(np.ndim(a) == 0 for a in args):
                raise ValueError("indicator bounds must be constants")
            return _indicator(env["x"], env["y"], *args)
        return _FUNCTIONS[node.func.id](*args)

    def fn(x, y=None, eps=0.0):
        x = np.asarray(x, dtype=float)
        y = np.zeros_like(x) if y is None else np.asarray(y, dtype=float)
        try:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.broadcast_to(np.asarray(run(tree, {"x": x, "y": y, "eps": float(eps)}), float), x.shape)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
        if not np.all(np.isfinite(out)):
            raise ConfigError(f"{key}: {text!r} is not finite on the grid")
        return out

    return fn


# -- config ------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    label: str
    spec: DomainSpec
    data: list
    lam: float | None
    mu: float | None
    eta: float | None
    pole: tuple | None
    delta: float | None
    eps: list | None


@dataclass
class RunConfig:
    scenarios: list
    settings: SolverSettings


def _get(obj, name, key, kind=None, default=...):
    if name not in obj:
        if default is ...:
            raise ConfigError(f"{key}: missing required key {name!r}")
        return default
    value = obj[name]
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool) and kind is not bool):
        raise ConfigError(f"{key}.{name}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _domain_spec(obj, key, spacing_override):
    if not isinstance(obj, dict):
        raise ConfigError(f"{key}: expected an object")
    shape = _get(obj, "shape", key, str)
    spacing = spacing_override or _get(obj, "spacing", key, (int, float))
    try:
        if shape == "unit_square":
            return DomainSpec.unit_square(spacing)
        if shape == "l_shape":
            return DomainSpec.l_shape(spacing)
        if shape == "interval":
            a, b = _get(obj, "bounds", key, list)
            return DomainSpec.interval(a, b, spacing)
        if shape == "rectangle":
            return DomainSpec.rectangle(_get(obj, "extents", key, list), spacing)
        if shape == "rect_union":
            return DomainSpec.rect_union(_get(obj, "rects", key, list), spacing)
        if shape == "disk":
            return DomainSpec.disk(_get(obj, "center", key, list), _get(obj, "radius", key, (int, float)), spacing)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None
    raise ConfigError(f"{key}.shape: unknown shape {shape!r}")


def _data(obj, key):
    if not isinstance(obj, dict):
        raise ConfigError(f"{key}: expected an object with 'g' and 'psi'")
    return (compile_expression(_get(obj, "g", key), f"{key}.g"),
            compile_expression(_get(obj, "psi", key), f"{key}.psi"))


def parse_config(raw: dict, spacing_override: float | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    try:
        settings = SolverSettings(**_get(raw, "settings", "config", dict, {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.settings: {exc}") from None
    items = _get(raw, "scenarios", "config", list)
    if not items:
        raise ConfigError("config.scenarios: at least one scenario is required")
    scenarios, labels = [], set()
    for i, item in enumerate(items):
        key = f"scenarios[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{key}: expected an object")
        label = _get(item, "label", key, str, f"scenario{i}")
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", label) or label in labels:
            raise ConfigError(f"{key}.label: {label!r} must be unique and use only letters, digits, '_', '.', '-'")
        labels.add(label)
        spec = _domain_spec(_get(item, "domain", key), f"{key}.domain", spacing_override)
        data = [_data(item[k], f"{key}.{k}") for k in ("data1", "data2") if k in item]
        pole = _get(item, "pole", key, list, None)
        eps = _get(item, "eps", key, list, None)
        if eps is not None and not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in eps):
            raise ConfigError(f"{key}.eps: expected a list of numbers")
        scenarios.append(ScenarioConfig(
            label=label, spec=spec, data=data,
            lam=_get(item, "lambda", key, (int, float), None),
            mu=_get(item, "mu", key, (int, float), None),
            eta=_get(item, "eta", key, (int, float), None),
            pole=None if pole is None else tuple(float(p) for p in pole),
            delta=_get(item, "delta", key, (int, float), None),
            eps=eps,
        ))
    return RunConfig(scenarios, settings)


def load_config(path, spacing_override: float | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(raw, spacing_override)


# -- evaluation --------------------------------------------------------------

def _domain(sc: ScenarioConfig) -> GridDomain:
    try:
        return build_domain(sc.spec)
    except DomainError as exc:
        raise ConfigError(f"scenario {sc.label}: {exc}") from None


def _obstacle_data(sc, domain, which, eps=0.0):
    g_fn, psi_fn = sc.data[which]
    key = f"scenario {sc.label} data{which + 1}"
    g = domain.evaluate(lambda *c: g_fn(*c, eps=eps))[0]
    psi = domain.evaluate(lambda *c: psi_fn(*c, eps=eps))[1]
    try:
        return ObstacleData(g, psi, sc.lam, sc.mu)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _scenario(sc, domain, eps=0.0) -> Scenario:
    if len(sc.data) != 2:
        raise ConfigError(f"scenario {sc.label}: needs both data1 and data2")
    pole = None if sc.pole is None else domain.nearest_node(sc.pole)
    try:
        return Scenario(domain, _obstacle_data(sc, domain, 0, eps), _obstacle_data(sc, domain, 1, eps),
                        eta=sc.eta, pole=pole, delta=sc.delta, label=sc.label)
    except ValueError as exc:
        raise ConfigError(f"scenario {sc.label}: {exc}") from None


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_field(path: Path, coords: np.ndarray, values: np.ndarray):
    header = ["x", "value"] if coords.shape[1] == 1 else ["x", "y", "value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for c, v in zip(coords, values):
            w.writerow([*map(_fmt, c), _fmt(v)])


def write_mask(path: Path, mask: NodeMask):
    coords = mask.coords
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x"] if coords.shape[1] == 1 else ["x", "y"])
        for c in coords:
            w.writerow(list(map(_fmt, c)))


def _dump_solution(out: Path, stem: str, sol):
    dom = sol.domain
    coords = np.vstack([dom.interior_coords, dom.boundary_coords])
    values = np.concatenate([sol.u.interior, sol.u.boundary])
    order = np.lexsort(coords.T[::-1])
    write_field(out / f"{stem}_u.csv", coords[order], values[order])
    write_mask(out / f"{stem}_contact.csv", sol.contact)


def _clean(obj):
    """Replace non-finite floats with None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n")


def _run_solve(sc, settings, out, dump):
    domain = _domain(sc)
    if not sc.data:
        raise ConfigError(f"scenario {sc.label}: needs data1")
    record = {"scenario_label": sc.label, "solutions": []}
    for i in range(len(sc.data)):
        sol = solve_obstacle(domain, _obstacle_data(sc, domain, i), settings)
        _dump_solution(out, f"{sc.label}_data{i + 1}", sol)
        record["solutions"].append({
            "data": f"data{i + 1}",
            "complementarity_residual": sol.complementarity_residual,
            "iterations": sol.iterations,
            "contact_measure": sol.contact.measure,
            "contact_nodes": len(sol.contact),
            "threshold": sol.threshold,
        })
    return record, True


def _run_verify(mode):
    def run(sc, settings, out, dump):
        check = verify_stability if mode == "stability" else verify_nondegeneracy
        domain = _domain(sc)
        scenario = _scenario(sc, domain)
        report = check(scenario, settings)
        if dump:
            for i, d in enumerate((scenario.data1, scenario.data2)):
                _dump_solution(out, f"{sc.label}_data{i + 1}", solve_obstacle(domain, d, settings))
        record = _clean(report.to_record())
        jsonschema.validate(record, REPORT_SCHEMA)
        return record, report.holds is not False

    return run


def _run_sweep(sc, settings, out, dump):
    if sc.eps is None:
        raise ConfigError(f"scenario {sc.label}: sweep needs an 'eps' list")
    if len(sc.eps) < 4:
        raise ConfigError(f"scenario {sc.label}: sweep requires >= 4 points")
    domain = _domain(sc)
    try:
        rep = sweep(lambda e: _scenario(sc, domain, e), sc.eps, settings)
    except ValueError as exc:
        raise ConfigError(f"scenario {sc.label}: {exc}") from None
    with open(out / f"{sc.label}_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rep.rows:
            w.writerow([_fmt(r["eps"]), _fmt(r["lhs"]), _fmt(r["boundary_term"]),
                        "" if r["rhs_term"] is None else _fmt(r["rhs_term"]),
                        "" if r["holds"] is None else str(r["holds"]).lower()])
    record = {
        "scenario_label": sc.label,
        "slope": rep.slope,
        "intercept": rep.intercept,
        "slope_band": rep.slope_band,
        "n_fitted": rep.n_fitted,
        "status": rep.status,
        "rows": rep.rows,
    }
    return record, rep.all_hold


def _run_kernels(sc, settings, out, dump):
    domain = _domain(sc)
    depth = mask_depth(domain.full_mask())
    pole = int(np.argmax(depth)) if sc.pole is None else domain.nearest_node(sc.pole)
    eta = 4 * domain.spacing if sc.eta is None else sc.eta
    delta = 0.5 * domain.dist_to_boundary[pole] if sc.delta is None else sc.delta
    try:
        kb = kernel_bounds(domain, pole, delta, eta, settings)
    except KernelError as exc:
        return {"scenario_label": sc.label, "status": "inapplicable", "message": str(exc)}, True
    write_field(out / f"{sc.label}_green.csv", domain.interior_coords, kb.G_field.interior)
    write_field(out / f"{sc.label}_poisson.csv", domain.boundary_coords, kb.K_boundary)
    record = {
        "scenario_label": sc.label,
        "status": "ok",
        "ybar": kb.ybar.tolist(),
        "delta": kb.delta,
        "eta": kb.eta,
        "g_lower": kb.G_lower,
        "g_upper": kb.G_upper,
        "k_lower": kb.K_lower,
        "k_upper": kb.K_upper,
        "harmonic_mass": float(kb.K_boundary @ domain.boundary_weights),
    }
    return record, True


COMMANDS = {
    "solve": (_run_solve, "solve.json"),
    "verify-stability": (_run_verify("stability"), "stability.json"),
    "verify-nondegeneracy": (_run_verify("nondegeneracy"), "nondegeneracy.json"),
    "sweep": (_run_sweep, "sweep.json"),
    "kernels": (_run_kernels, "kernels.json"),
}


def run(command: str, config: RunConfig, out: Path, threads: int = 1, dump_fields: bool = False) -> int:
    """Run ``command`` on every scenario and write its outputs under ``out``.

    Returns the process exit status.
    """
    fn, name = COMMANDS[command]
    out.mkdir(parents=True, exist_ok=True)

    def one(sc):
        try:
            return fn(sc, config.settings, out, dump_fields)
        except SolverError as exc:
            raise SolverError(f"scenario {sc.label}: {exc}", exc.residual) from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, config.scenarios))
    else:
        results = [one(sc) for sc in config.scenarios]
    write_json(out / name, [r for r, _ in results])
    return EXIT_OK if all(ok for _, ok in results) else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obstaclelab", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="JSON scenario file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--spacing", type=float, help="override the grid spacing of every scenario")
    p.add_argument("--threads", type=int, default=1, help="scenarios evaluated concurrently")
    p.add_argument("--dump-fields", action="store_true", help="also write solution fields and contact masks")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.spacing is not None and not args.spacing > 0:
        print("error: --spacing must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = load_config(args.config, args.spacing)
        return run(args.command, config, args.out, args.threads, args.dump_fields)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
