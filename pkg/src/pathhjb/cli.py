"""Scenario runner: ``pathhjb run <config>`` and ``pathhjb list-problems``."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Callable

import numpy as np
import yaml

from . import __version__
from .coefficients import CoefficientSpec
from .control import ControlProblem, dpp_residual, value
from .expr import ExprError, compile_expr
from .forward import Weight
from .functional import CylindricalFunctional, ito_residual
from .gauge import borwein_preiss, verify_vp
from .lifted import GridConfig, LiftedProblem, solve, verify_bounds
from .mollify import MollifierConfig, error_bound_rhs, mollified_coefficient
from .paths import DomainError, GaugePoint, Path, TimeGrid, polygonal_from_nodes
from .problems import get_builtin, list_builtin_problems, problem_from_config, reachability_value
from .rng import brownian_increments, stream
from .sde import PiecewiseConstantControl, SimConfig, simulate
from .viscosity import classical_residual, residual_csv, scheme_tolerance

__all__ = ["main", "run", "load_config", "ConfigError", "KINDS", "SEED_ENV"]

SEED_ENV = "PATHHJB_SEED"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration; ``line`` and ``column`` are 1-based when known."""

    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        super().__init__(msg)
        self.line, self.column = line, column

    def __str__(self):
        where = f" at line {self.line}, column {self.column}" if self.line is not None else ""
        return f"config error{where}: {self.args[0]}"


class _LineLoader(yaml.SafeLoader):
    """SafeLoader that records the position of every mapping under ``__pos__``."""


def _construct_mapping(loader, node, deep=False):
    mapping = yaml.SafeLoader.construct_mapping(loader, node, deep=True)
    mapping["__pos__"] = (node.start_mark.line + 1, node.start_mark.column + 1)
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k != "__pos__"}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def load_config(text: str) -> dict:
    """Parse YAML config text, reporting syntax errors with line and column."""
    try:
        data = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(str(exc.problem or exc), mark.line + 1 if mark else None,
                          mark.column + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(exc)) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, 1)
    scen = data.get("scenarios", []) or []
    if not isinstance(scen, list):
        raise ConfigError("'scenarios' must be a list", *data.get("__pos__", (None, None)))
    return data


# ---------------------------------------------------------------------------
# scenario pieces


@dataclass
class Outcome:
    files: dict = field(default_factory=dict)
    passed: bool = True
    message: str = ""


@dataclass
class Scenario:
    name: str
    kind: str
    params: dict
    seed: int
    pos: tuple
    runner: Callable = None


def _path_from(spec, T: float, d: int = 1) -> Path:
    if spec is None:
        return Path.constant(np.zeros(d), T)
    if isinstance(spec, (int, float)):
        return Path.constant(np.full(d, float(spec)), T)
    if isinstance(spec, list):
        arr = np.asarray(spec, dtype=float)
        if arr.ndim == 1 and arr.size == d:
            return Path.constant(arr, T)
        vals = arr.reshape(arr.shape[0], -1)
        return Path(TimeGrid(np.linspace(0.0, T, vals.shape[0])), vals)
    if isinstance(spec, dict) and "expr" in spec:
        ex = compile_expr(spec["expr"], ["s"])
        steps = int(spec.get("steps", 64))
        times = np.linspace(0.0, T, steps + 1)
        vals = np.broadcast_to(np.asarray(ex(s=times), dtype=float), times.shape)
        return Path(TimeGrid(times), np.repeat(vals[:, None], d, axis=1))
    raise ConfigError(f"cannot read a path from {spec!r}")


def _problem(spec, T_default: float = 1.0):
    """(ControlProblem, LiftedProblem or None, closed-form value fn or None, T, id)."""
    if isinstance(spec, str):
        bp = get_builtin(spec)
        T = T_default
        lifted = bp.lifted(T) if bp.lifted else None
        return bp.build(T), lifted, bp.value_fn, T, bp.name
    if isinstance(spec, dict):
        cp, lifted, T = problem_from_config(spec)
        return cp, lifted, None, T, spec.get("name", "config")
    raise ConfigError(f"problem must be a built-in name or a mapping, got {spec!r}")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _sim_cfg(p, seed) -> SimConfig:
    return SimConfig(int(p.get("steps_per_unit", 64)), int(p.get("trajectories", 1)), seed)


# ---------------------------------------------------------------------------
# scenario kinds; each prepare_* validates params and returns a runner


def prepare_simulate(p, seed):
    cp, _, _, T, pid = _problem(p.get("problem", "brownian"), float(p.get("T", 1.0)))
    t = float(p.get("t", 0.0))
    x = _path_from(p.get("x"), T, cp.sde.d)
    idx = p.get("control", 0)
    idx = [idx] if isinstance(idx, int) else list(idx)
    ctl = PiecewiseConstantControl.uniform(t, T, idx)
    cfg = _sim_cfg(p, seed)

    def run():
        batch = simulate(cp.sde, t, x, ctl, cfg)
        return Outcome({"trajectories.csv": batch.to_csv()})

    return run


def prepare_value(p, seed):
    cp, _, vfn, T, pid = _problem(p.get("problem", "reachability"), float(p.get("T", 1.0)))
    t = float(p.get("t", 0.0))
    x = _path_from(p.get("x"), T, cp.sde.d)
    m = int(p.get("switch_count", 8))
    mode = p.get("mode", "exhaustive")
    tol = p.get("tolerance")
    cfg = _sim_cfg(p, seed)

    def run():
        est = value(cp, t, x, m, cfg, mode=mode)
        cf = float(np.ravel(vfn(t, x(t), T))[0]) if vfn else None
        rec = est.to_record(pid, t, cp.actions)
        rec["closed_form"] = cf
        ok, msg = True, ""
        if tol is not None and cf is not None:
            gap = abs(est.mean - cf)
            ok = gap <= float(tol) + 3 * est.stderr
            msg = f"|estimate - closed form| = {gap:.4g} vs tolerance {tol}"
        row = [pid, t, est.mean, est.stderr, cf, " ".join(map(str, est.control.indices)) if est.control else ""]
        csv = _csv(["problem_id", "t", "estimate", "stderr", "closed_form", "argmax_control"], [row])
        return Outcome({"value.csv": csv, "value.json": _json(rec)}, ok, msg)

    return run


def prepare_dpp(p, seed):
    cp, _, _, T, pid = _problem(p.get("problem", "reachability"), float(p.get("T", 1.0)))
    t, s = float(p.get("t", 0.0)), float(p.get("s", 0.5))
    x = _path_from(p.get("x"), T, cp.sde.d)
    m = int(p.get("switch_count", 8))
    tol = p.get("tolerance")
    cfg = _sim_cfg(p, seed)

    def run():
        r, se = dpp_residual(cp, t, s, x, m, cfg)
        ok = tol is None or r <= float(tol) + 3 * se
        csv = _csv(["problem_id", "t", "s", "residual", "stderr"], [[pid, t, s, r, se]])
        return Outcome({"dpp.csv": csv}, ok, f"dpp residual {r:.4g} (stderr {se:.3g})")

    return run


def _random_paths(rng, count, d, T, level=4, scale=1.0):
    out = []
    for _ in range(count):
        inc = rng.normal(scale=scale * np.sqrt(T / 2**level), size=(2**level, d))
        y = np.vstack([rng.normal(scale=0.5, size=(1, d)), inc]).cumsum(axis=0)
        out.append(polygonal_from_nodes(level, y, T))
    return out


def prepare_mollify(p, seed):
    T = float(p.get("T", 1.0))
    K = float(p.get("lipschitz", 1.0))
    ex = compile_expr(p.get("h", "sin(x)"), ["t", "x", "a"])
    h = CoefficientSpec.markovian(
        lambda t, x, a: np.asarray(ex(t=t, x=x[:, 0], a=0.0 if a is None else a), dtype=float)
        * np.ones(x.shape[0]),
        lipschitz_K=K, bound=p.get("bound"), name="h",
    )
    levels = [int(n) for n in p.get("levels", [0, 1, 2, 3, 4])]
    samples = int(p.get("samples", 50))
    mc = int(p.get("mc_samples", 256))

    def run():
        rng = stream(seed, 9)
        paths = _random_paths(rng, samples, 1, T)
        ts = rng.uniform(0, T, size=samples)
        rows, viol_total = [], 0
        for n in levels:
            hn = mollified_coefficient(h, MollifierConfig(n, mc, seed=seed), T=T)[0]
            errs, bnds, viol = [], [], 0
            for x, t in zip(paths, ts):
                v, se = hn.evaluate(t, x)
                e = abs(v - float(h(t, x)))
                b = error_bound_rhs(h, n, GaugePoint(t, x))
                errs.append(e)
                bnds.append(b)
                viol += int(e > b + 3 * se)
            rows.append([n, max(errs), max(bnds), viol])
            viol_total += viol
        csv = _csv(["n", "max_error", "max_bound", "violations"], rows)
        return Outcome({"mollify.csv": csv}, viol_total == 0, f"{viol_total} bound violations")

    return run


def _lifted_of(p):
    cp, lifted, vfn, T, pid = _problem(p.get("problem", "markovian-lifted"), float(p.get("T", 1.0)))
    if lifted is None:
        raise ConfigError(f"problem '{pid}' has no lifted form; give weights or a lifted built-in")
    return cp, lifted, vfn, T, pid


def _grid_cfg(p) -> GridConfig:
    y0 = p.get("y0")
    return GridConfig(
        int(p.get("time_nodes", 201)),
        p.get("space_nodes"),
        p.get("half_width"),
        float(p.get("margin", 0.25)),
        None if y0 is None else tuple(np.atleast_1d(np.asarray(y0, dtype=float))),
    )


def prepare_hjb(p, seed):
    cp, lifted, vfn, T, pid = _lifted_of(p)
    eps = float(p.get("epsilon", 0.1))
    grid = _grid_cfg(p)
    tol = p.get("tolerance")
    stride = int(p.get("time_stride", 20))

    def run():
        sol = solve(lifted, eps, grid)
        diag = sol.diagnostics()
        ok, msg = True, ""
        if vfn is not None and lifted.dim == 1:
            y = sol.axes[0]
            core = np.abs(y) <= lifted.reachable_radius(grid.y0) + 1e-12
            err = np.abs(sol.values - vfn(sol.times[:, None], y[None, :], T))[:, core].max()
            diag["closed_form_error"] = float(err)
            if tol is not None:
                ok = err <= float(tol)
                msg = f"sup |v_eps - v| = {err:.4g} vs tolerance {tol}"
        return Outcome({"grid.csv": sol.to_csv(stride), "diagnostics.json": _json(diag)}, ok, msg)

    return run


def prepare_viscosity(p, seed):
    cp, lifted, _, T, pid = _lifted_of(p)
    eps = float(p.get("epsilon", 0.2))
    grid = _grid_cfg(p)
    count = int(p.get("samples", 20))
    tol = p.get("tolerance")

    def run():
        sol = solve(lifted, eps, grid)
        rng = stream(seed, 11)
        w = sol.diagnostics()["half_width"] / (1 + grid.margin)
        pts = []
        for _ in range(count):
            t = float(rng.uniform(0.05, 0.6) * T)
            y = rng.uniform(-w, w, size=lifted.d)
            pts.append(GaugePoint(t, Path.constant(y, T)))
        rep = classical_residual(sol, lifted, pts)
        tols = [scheme_tolerance(sol, lifted, q) for q in pts]
        signs = all(abs(r) <= tl for r, tl in zip(rep["residuals"], tols))
        ok = signs and (tol is None or rep["max"] <= float(tol))
        msg = f"max residual {rep['max']:.4g}; within scheme tolerance: {signs}"
        return Outcome({"residuals.csv": residual_csv(rep)}, ok, msg)

    return run


def prepare_bounds(p, seed):
    cp, lifted, _, T, pid = _lifted_of(p)
    eps_list = [float(e) for e in p.get("epsilons", [0.4, 0.2, 0.1])]
    grid = _grid_cfg(p)

    def run():
        rows = []
        for eps in eps_list:
            rep = verify_bounds(solve(lifted, eps, grid), lifted, eps)
            rows.append([eps, rep["semiconcavity_C"], rep["min_second_difference"], rep["vertical_bound"]])
        csv = _csv(["epsilon", "semiconcavity_C", "min_second_difference", "vertical_bound"], rows)
        return Outcome({"bounds.csv": csv})

    return run


def prepare_gauge_vp(p, seed):
    T = float(p.get("T", 1.0))
    d = int(p.get("d", 1))
    count = int(p.get("candidates", 50))
    delta = float(p.get("delta", 0.1))
    names = ["t"] + [f"x{i + 1}" for i in range(d)]
    ex = compile_expr(p.get("objective", "-(x1 - 0.3)**2 - t"), names)
    if not (0 < delta < 1):
        raise ConfigError("delta must lie in (0, 1)")

    def run():
        rng = stream(seed, 12)
        paths = _random_paths(rng, count, d, T, level=3)
        cands = [GaugePoint(float(t), x) for t, x in zip(rng.uniform(0, T, size=count), paths)]
        G = [float(ex(t=c.t, **{f"x{i + 1}": c.path(c.t)[i] for i in range(d)})) for c in cands]
        res = borwein_preiss(G, cands, delta)
        chk = verify_vp(G, cands, delta, res)
        out = {"bar_index": res.bar_index, "centers": res.phi.indices, "trace": res.trace,
               "converged": res.converged, "checks": chk}
        return Outcome({"vp.json": _json(out)}, chk["ok"], f"items i)-iv): {chk}")

    return run


def prepare_ito(p, seed):
    T = float(p.get("T", 1.0))
    count = int(p.get("trajectories", 100))
    levels = [int(k) for k in p.get("levels", [6, 7, 8, 9, 10])]
    min_slope = float(p.get("min_slope", 0.45))
    u = _square_functional()

    def run():
        rows = ito_sweep(u, seed, count, levels, T)
        slope = float(np.polyfit(np.log([r[0] for r in rows]), np.log([r[1] for r in rows]), 1)[0])
        csv = _csv(["dt", "rms_residual"], rows)
        return Outcome({"ito.csv": csv}, slope >= min_slope, f"log-log slope {slope:.3f}")

    return run


def _square_functional() -> CylindricalFunctional:
    return CylindricalFunctional(
        lambda t, y: float(y[0] ** 2), (Weight.constant(1.0),), 1,
        core_dt=lambda t, y: 0.0,
        core_dy=lambda t, y: np.array([2 * y[0]]),
        core_dyy=lambda t, y: np.array([[2.0]]),
        name="x(t)^2",
    )


def ito_sweep(u, seed: int, count: int, levels, T: float = 1.0) -> list:
    """RMS Ito residual of u along Brownian paths, coarsened from the finest level."""
    top = max(levels)
    n_fine = 2**top
    dB = brownian_increments(seed, np.arange(count), n_fine, 1, T / n_fine)
    rows = []
    for k in sorted(levels):
        n = 2**k
        block = dB.reshape(count, n, n_fine // n, 1).sum(axis=2)
        times = np.linspace(0.0, T, n + 1)
        dt = T / n
        qv = np.full((n, 1, 1), dt)
        res = []
        for b in range(count):
            x = Path(TimeGrid(times), np.vstack([np.zeros((1, 1)), block[b].cumsum(axis=0)]))
            res.append(ito_residual(u, x, qv))
        rows.append([dt, float(np.sqrt(np.mean(np.square(res))))])
    return rows


KINDS: dict[str, Callable] = {
    "simulate": prepare_simulate,
    "value": prepare_value,
    "dpp": prepare_dpp,
    "mollify": prepare_mollify,
    "hjb": prepare_hjb,
    "gauge-vp": prepare_gauge_vp,
    "ito": prepare_ito,
    "viscosity": prepare_viscosity,
    "bounds": prepare_bounds,
}

_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


def build_scenarios(data: dict, seed: int) -> list[Scenario]:
    out, seen = [], set()
    for i, raw in enumerate(data.get("scenarios", []) or []):
        if not isinstance(raw, dict):
            raise ConfigError(f"scenario {i} must be a mapping")
        pos = raw.get("__pos__", (None, None))
        kind = raw.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"unknown kind {kind!r} (known: {', '.join(KINDS)})", *pos)
        name = str(raw.get("name", f"{i:02d}-{kind}"))
        if not _NAME_RE.match(name) or name in seen:
            raise ConfigError(f"scenario name {name!r} is invalid or repeated", *pos)
        seen.add(name)
        params = _strip(raw)
        sc_seed = int(params.get("seed", seed))
        try:
            runner = KINDS[kind](params, sc_seed)
        except ConfigError as exc:
            if exc.line is None:
                exc.line, exc.column = pos
            raise
        except (ExprError, DomainError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"scenario '{name}': {exc}", *pos) from None
        out.append(Scenario(name, kind, params, sc_seed, pos, runner))
    return out


def _resolve_seed(data: dict, cli_seed: int | None) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return int(data.get("seed", 0))


def run(config_path: str, out_dir: str | None = None, seed: int | None = None, stream_out=None) -> int:
    """Run every scenario of a config file; returns the process exit code."""
    log = stream_out or sys.stdout
    try:
        raw = FsPath(config_path).read_bytes()
    except OSError as exc:
        print(f"config error: cannot read {config_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        data = load_config(raw.decode("utf-8"))
        seed_val = _resolve_seed(data, seed)
        scenarios = build_scenarios(data, seed_val)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    out = FsPath(out_dir or data.get("output", "pathhjb-out"))
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "config_hash": hashlib.sha256(raw).hexdigest(),
        "seed": seed_val,
        "scenarios": [],
    }
    code = EXIT_OK
    for sc in scenarios:
        t0 = time.perf_counter()
        try:
            res = sc.runner()
        except (DomainError, ValueError, ArithmeticError) as exc:
            res = Outcome({}, False, f"error: {exc}")
        wall = int(round((time.perf_counter() - t0) * 1000))
        for fname, text in res.files.items():
            (out / f"{sc.name}.{fname}").write_text(text)
        status = "pass" if res.passed else "fail"
        if not res.passed:
            code = EXIT_FAIL
        manifest["scenarios"].append({"name": sc.name, "kind": sc.kind, "wall_ms": wall, "status": status})
        line = f"{status.upper()} {sc.name} ({sc.kind})"
        print(line + (f": {res.message}" if res.message else ""), file=log)
    (out / "manifest.json").write_text(_json(manifest))
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pathhjb", description="Path-dependent control scenario runner")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the scenarios of a YAML config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help=f"seed override (beats ${SEED_ENV} and the config)")
    r.add_argument("--out", default=None, help="output directory")
    lp = sub.add_parser("list-problems", help="print the built-in problems")
    lp.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    if args.cmd == "list-problems":
        cat = list_builtin_problems()
        if args.json:
            print(_json(cat), end="")
        else:
            for e in cat:
                print(f"{e['name']:22s} oracle={e['oracle']:12s} {e['closed_form'] or '-'}")
        return EXIT_OK
    return run(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
