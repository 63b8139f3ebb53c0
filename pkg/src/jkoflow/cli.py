"""Command-line front end.

Every command reads an optional JSON config (``--config``) and applies flag
overrides on top; the resolved config is written to ``manifest.json`` in the
output directory next to the artifacts.

Exit codes: 0 success, 1 validation failure, 2 solver failure, 3 bad config.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as jio
from .energy import DiscreteMeasure, GradientSelection, InternalEnergySpec, JkoObjective, PotentialSpec
from .flows import FlowConfig, crowd_flow, diffusion_flow, initial_sites
from .geom2d import ConvexDomain
from .laguerre import build_diagram
from .ma import NotInteriorError
from .solver import SolveOptions, fixed_point_outer, initial_potential, newton_solve
from .validate import SUITES, run_suite

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3
COMMANDS = ("diagram", "validate", "jko-step", "flow-diffusion", "flow-crowd")

# allowed config keys; None marks a leaf, a dict a nested section, "free" a
# section whose content is validated by its own parser
SCHEMA = {
    "command": None,
    "domain": None,
    "out_dir": None,
    "seed": None,
    "points": {"n": None, "csv": None, "init": None, "init_radius": None},
    "energy": {"internal": "free", "potential": "free", "tau": None, "mode": None, "selection": None},
    "solver": "free",
    "flow": {"steps": None, "grid_n": None, "floor": None, "snapshot_every": None},
    "validate": {"suite": None},
}

DEFAULTS = {
    "diagram": {"domain": "square:4", "seed": 0, "points": {"n": 20, "init": "uniform"}},
    "validate": {"seed": 0, "validate": {"suite": "all"}},
    "jko-step": {
        "domain": "square:4",
        "seed": 0,
        "points": {"n": 100, "init": "uniform"},
        "energy": {"internal": {"kind": "entropy"}, "tau": 0.1, "mode": "ac", "selection": "centroid"},
    },
    "flow-diffusion": {
        "domain": "square:4",
        "seed": 0,
        "points": {"n": 100, "init": "uniform"},
        "energy": {"internal": {"kind": "power", "m": 2.0}, "tau": 0.01, "mode": "selection", "selection": "centroid"},
        "flow": {"steps": 10, "snapshot_every": 0},
    },
    "flow-crowd": {
        "domain": "square:4",
        "seed": 0,
        "energy": {
            "internal": {"kind": "congestion", "alpha": 1.0, "beta": 0.01},
            "potential": {"kind": "crowd"},
            "tau": 0.01,
            "mode": "ac",
            "selection": "centroid",
        },
        "flow": {"steps": 10, "grid_n": 40, "floor": 1e-6, "snapshot_every": 0},
    },
}


class ConfigError(ValueError):
    """Carries the dotted path of the offending key."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def check_keys(cfg: dict, schema=SCHEMA, prefix: str = "") -> None:
    if not isinstance(cfg, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a JSON object")
    for k, v in cfg.items():
        if k not in schema:
            raise ConfigError(prefix + k, "unknown key")
        sub = schema[k]
        if isinstance(sub, dict) and v is not None:
            check_keys(v, sub, prefix + k + ".")


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("internal", "potential", "solver"):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_domain(spec) -> ConvexDomain:
    """"square:S" is [-S/2, S/2]^2; "polygon:x,y;x,y;..." or {"vertices": [...]} give a polygon."""
    try:
        if isinstance(spec, dict):
            if set(spec) != {"vertices"}:
                raise ConfigError("domain", "expected {'vertices': [[x, y], ...]}")
            return ConvexDomain(np.asarray(spec["vertices"], dtype=float))
        kind, _, arg = str(spec).partition(":")
        if kind == "square":
            side = float(arg)
            if not side > 0:
                raise ConfigError("domain", "square side must be positive")
            return ConvexDomain.square(side)
        if kind == "polygon":
            v = [[float(c) for c in pt.split(",")] for pt in arg.split(";") if pt.strip()]
            return ConvexDomain(np.asarray(v))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("domain", str(exc)) from None
    raise ConfigError("domain", f"cannot parse {spec!r}; use square:SIDE or polygon:x,y;x,y;...")


def _section(key, fn, value):
    try:
        return fn(value)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(key, str(exc)) from None


def resolve(command: str, file_cfg: dict, overrides: dict) -> dict:
    """Defaults, then the config file, then flags; unknown keys are rejected."""
    check_keys(file_cfg)
    check_keys(overrides)
    if "command" in file_cfg and file_cfg["command"] != command:
        raise ConfigError("command", f"config is for {file_cfg['command']!r}, not {command!r}")
    cfg = merge(merge(DEFAULTS[command], file_cfg), overrides)
    cfg["command"] = command
    cfg.setdefault("out_dir", "out")
    return cfg


def _internal(cfg):
    return _section("energy.internal", InternalEnergySpec.from_dict, cfg.get("energy", {}).get("internal", {"kind": "entropy"}))


def _potential(cfg):
    p = cfg.get("energy", {}).get("potential")
    return None if p is None else _section("energy.potential", PotentialSpec.from_dict, p)


def _solver(cfg, log=None):
    opts = _section("solver", SolveOptions.from_dict, cfg.get("solver", {}))
    opts.log = log
    return opts


def _points(cfg, Y):
    pts = cfg.get("points", {})
    if pts.get("csv"):
        try:
            return jio.load_points_csv(pts["csv"])
        except (OSError, jio.PointsFileError) as exc:
            raise ConfigError("points.csv", str(exc)) from None
    fc = _section(
        "points",
        lambda p: FlowConfig(
            domain=Y,
            seed=int(cfg.get("seed", 0)),
            n_points=int(p.get("n", 100)),
            init=p.get("init", "uniform"),
            init_radius=float(p.get("init_radius", 0.8)),
        ),
        pts,
    )
    if fc.n_points < 1:
        raise ConfigError("points.n", "need at least one point")
    return _section("points", initial_sites, fc)


def _flow_config(cfg, Y) -> FlowConfig:
    en = cfg.get("energy", {})
    fl = cfg.get("flow", {})
    pts = cfg.get("points", {})
    points = masses = None
    if pts.get("csv"):
        points, masses = _points(cfg, Y)
    return _section(
        "flow",
        lambda _: FlowConfig(
            domain=Y,
            tau=float(en.get("tau", 0.01)),
            steps=int(fl.get("steps", 10)),
            internal=_internal(cfg),
            potential=_potential(cfg),
            mode=en.get("mode"),
            selection=en.get("selection", "centroid"),
            seed=int(cfg.get("seed", 0)),
            n_points=int(pts.get("n", 100)),
            init="file" if points is not None else pts.get("init", "uniform"),
            init_radius=float(pts.get("init_radius", 0.8)),
            grid_n=int(fl.get("grid_n", 40)),
            floor=float(fl.get("floor", 1e-6)),
            points=points,
            masses=masses,
            solver=_solver(cfg),
            snapshot_every=int(fl.get("snapshot_every", 0)),
        ),
        None,
    )


def version_string() -> str:
    """git-describe output when run from a checkout, else the package version."""
    try:
        r = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if r.returncode == 0 and r.stdout.strip():
            return f"{__version__}+{r.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, cfg: dict, artifacts, extra=None) -> None:
    m = {"config": cfg, "version": version_string(), "artifacts": sorted(str(Path(a).name) for a in artifacts)}
    if extra:
        m.update(extra)
    jio.write_json(out / "manifest.json", m)


# -- commands -------------------------------------------------------------------


def cmd_diagram(cfg) -> int:
    Y = parse_domain(cfg["domain"])
    P, m = _points(cfg, Y)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        phi = initial_potential(P, Y)
    except (NotInteriorError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    d = build_diagram(P, phi, Y)
    dens = m / np.where(d.areas > 0, d.areas, np.inf)
    vmax = 2.0 / Y.area
    jio.write_json(out / "diagram.json", d.to_dict())
    svg = jio.render_svg(Y, d.cells, dens, P, vmax=vmax, edges=sorted(d.edges))
    (out / "diagram.svg").write_text(svg)
    write_manifest(out, cfg, ["diagram.json", "diagram.svg"], {"color_scale": {"min": 0.0, "max": vmax}})
    print(f"diagram: {len(P)} sites, {len(d.edges)} dual edges, area sum {d.areas.sum():.12g}")
    return EXIT_OK


def cmd_validate(cfg) -> int:
    suite = cfg.get("validate", {}).get("suite", "all")
    if suite not in SUITES:
        raise ConfigError("validate.suite", f"unknown suite {suite!r}; choose from {list(SUITES)}")
    reports = run_suite(suite, int(cfg.get("seed", 0)))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    data = [r.to_dict() for r in reports]
    jio.write_json(out / "report.json", data)
    write_manifest(out, cfg, ["report.json"])
    sys.stdout.write(jio.dumps(data))
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"validation failed: {failed}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_jko_step(cfg) -> int:
    Y = parse_domain(cfg["domain"])
    P, m = _points(cfg, Y)
    en = cfg.get("energy", {})
    mode = en.get("mode", "ac")
    try:
        obj = JkoObjective(
            DiscreteMeasure(P, m), float(en.get("tau", 0.1)), Y, _internal(cfg), _potential(cfg), mode, en.get("selection", "centroid")
        )
    except ValueError as exc:
        raise ConfigError("energy", str(exc)) from None
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    opts = _solver(cfg, log=print)
    try:
        phi0 = initial_potential(P, Y)
        if mode == "selection":
            phi, _, orep = fixed_point_outer(obj, phi0, opts)
            rep = orep.inner[-1]
        else:
            phi, rep = newton_solve(obj, phi0, opts)
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    ev = obj.evaluate(phi, 0)
    d = ev.diagram
    G = GradientSelection.of(d, en.get("selection", "centroid")).points
    result = {"phi": phi, "value": ev.value, "terms": ev.terms, "areas": d.areas, "solver": rep.to_dict()}
    jio.write_json(out / "result.json", result)
    jio.write_points_csv(out / "points_1.csv", G, m)
    vmax = 2.0 / Y.area
    (out / "snapshot_1.svg").write_text(jio.render_svg(Y, d.cells, m / d.areas, P, vmax=vmax))
    write_manifest(out, cfg, ["result.json", "points_1.csv", "snapshot_1.svg"], {"color_scale": {"min": 0.0, "max": vmax}})
    print(f"jko-step: value {ev.value:.12g} |g| {rep.grad_norm:.3e} iterations {rep.iterations} ({rep.reason})")
    return EXIT_OK if rep.converged else EXIT_SOLVER


def _run_flow(cfg, kind) -> int:
    Y = parse_domain(cfg["domain"])
    fc = _flow_config(cfg, Y)
    out = Path(cfg["out_dir"])

    def line(rec):
        e = rec.energies
        main = e.get("F", e.get("objective"))
        print(f"step {rec.k} t={rec.time:.4g} value={main:.10g} iters={rec.solver.get('iterations')} reason={rec.solver.get('reason')}")

    run = diffusion_flow if kind == "diffusion" else crowd_flow
    try:
        trace = run(fc, out_dir=out, on_step=line)
    except NotInteriorError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        raise ConfigError("flow", str(exc)) from None
    artifacts = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    vmax = 1.0 if kind == "crowd" else 2.0 / Y.area
    extra = {"color_scale": {"min": 0.0, "max": vmax}, "warnings": trace.warnings}
    write_manifest(out, cfg, artifacts, extra)
    if trace.truncated:
        print(f"flow stopped: {trace.diagnostic}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_flow_diffusion(cfg) -> int:
    return _run_flow(cfg, "diffusion")


def cmd_flow_crowd(cfg) -> int:
    return _run_flow(cfg, "crowd")


HANDLERS = {
    "diagram": cmd_diagram,
    "validate": cmd_validate,
    "jko-step": cmd_jko_step,
    "flow-diffusion": cmd_flow_diffusion,
    "flow-crowd": cmd_flow_crowd,
}


# -- argument parsing --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: config error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="jkoflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--out", dest="out_dir", help="output directory (default: out)")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "validate":
            p.add_argument("--suite", choices=SUITES)
            continue
        p.add_argument("--domain", help="square:SIDE or polygon:x,y;x,y;...")
        if name != "flow-crowd":
            p.add_argument("--n-points", type=int)
            p.add_argument("--points", help="CSV file with columns x,y[,mass]")
            p.add_argument("--init", choices=("uniform", "blob", "barenblatt"))
            p.add_argument("--init-radius", type=float)
        if name == "diagram":
            continue
        p.add_argument("--energy", choices=("entropy", "power", "congestion"), help="internal energy kind")
        p.add_argument("--m", type=float, help="power exponent (m = 1 selects the entropy)")
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--potential", choices=("none", "crowd"))
        p.add_argument("--tau", type=float)
        p.add_argument("--mode", choices=("ac", "selection"))
        p.add_argument("--selection", choices=("steiner", "centroid"))
        p.add_argument("--grad-tol", type=float)
        p.add_argument("--max-iters", type=int)
        if name.startswith("flow"):
            p.add_argument("--steps", type=int)
            p.add_argument("--snapshot-every", type=int)
        if name == "flow-crowd":
            p.add_argument("--grid-n", type=int)
            p.add_argument("--floor", type=float)
    return ap


def overrides_from_args(ns, base_internal: dict) -> dict:
    a = vars(ns)
    o: dict = {}

    def put(path, value):
        if value is None:
            return
        d = o
        for k in path[:-1]:
            d = d.setdefault(k, {})
        d[path[-1]] = value

    put(("out_dir",), a.get("out_dir"))
    put(("seed",), a.get("seed"))
    put(("domain",), a.get("domain"))
    put(("points", "n"), a.get("n_points"))
    put(("points", "csv"), a.get("points"))
    put(("points", "init"), a.get("init"))
    put(("points", "init_radius"), a.get("init_radius"))
    put(("validate", "suite"), a.get("suite"))
    put(("energy", "tau"), a.get("tau"))
    put(("energy", "mode"), a.get("mode"))
    put(("energy", "selection"), a.get("selection"))
    put(("flow", "steps"), a.get("steps"))
    put(("flow", "snapshot_every"), a.get("snapshot_every"))
    put(("flow", "grid_n"), a.get("grid_n"))
    put(("flow", "floor"), a.get("floor"))
    put(("solver", "grad_tol"), a.get("grad_tol"))
    put(("solver", "max_iters"), a.get("max_iters"))
    if a.get("potential") is not None:
        o.setdefault("energy", {})["potential"] = None if a["potential"] == "none" else {"kind": a["potential"]}
    kind = a.get("energy")
    if a.get("m") is not None and kind is None:
        kind = "power"
    if any(a.get(k) is not None for k in ("m", "alpha", "beta")) or kind is not None:
        internal = dict(base_internal)
        if kind is not None and kind != internal.get("kind"):
            internal = {"kind": kind}
        for k in ("m", "alpha", "beta"):
            if a.get(k) is not None:
                internal[k] = a[k]
        if internal.get("kind") == "power" and internal.get("m") == 1.0:
            internal = {"kind": "entropy"}
        put(("energy", "internal"), internal)
    return o


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cfg = {}
        if ns.config:
            try:
                file_cfg = json.loads(Path(ns.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("--config", str(exc)) from None
        check_keys(file_cfg)
        base = merge(DEFAULTS[ns.command], file_cfg)
        cfg = resolve(ns.command, file_cfg, overrides_from_args(ns, base.get("energy", {}).get("internal", {})))
        if ns.command != "validate":
            parse_domain(cfg["domain"])
        if ns.command not in ("diagram", "validate"):
            _internal(cfg)
            _potential(cfg)
            _solver(cfg)
        return HANDLERS[ns.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
