"""Bundled test problems and construction of problems from config dictionaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import CoefficientSpec, CylindricalCoefficient
from .control import ControlProblem
from .expr import ExprError, compile_expr
from .forward import Weight
from .lifted import LiftedProblem, build_lifted
from .paths import DomainError
from .sde import ControlledSDE

__all__ = [
    "BuiltinProblem",
    "BUILTINS",
    "list_builtin_problems",
    "get_builtin",
    "problem_from_config",
    "weight_from_config",
    "reachability_value",
]


def reachability_value(t, xt, T: float = 1.0):
    """-min(max(|x(t)| - (T - t), 0), 1): best terminal reward when |dx/ds| <= 1."""
    return -np.minimum(np.maximum(np.abs(xt) - (T - t), 0.0), 1.0)


@dataclass(frozen=True)
class BuiltinProblem:
    name: str
    description: str
    oracle: str  # "closed-form" | "MC" | "none"
    closed_form: str | None
    build: Callable[[float], ControlProblem]
    value_fn: Callable | None = None
    lifted: Callable[[float], LiftedProblem] | None = None

    def entry(self) -> dict:
        return {"name": self.name, "oracle": self.oracle, "closed_form": self.closed_form,
                "description": self.description, "lifted": self.lifted is not None}


def _zero_sigma(d=1, m=1):
    return CoefficientSpec.constant(np.zeros((d, m)), name="sigma")


def _scalar_markov(fn, K=None, bound=None, name="h"):
    return CoefficientSpec.markovian(fn, lipschitz_K=K, bound=bound, name=name)


def _reach(T: float) -> ControlProblem:
    drift = _scalar_markov(lambda t, x, a: np.full(x.shape, float(a)), 0.0, 1.0, "b")
    g = _scalar_markov(lambda t, x, a: -np.minimum(np.abs(x[:, 0]), 1.0), 1.0, 1.0, "g")
    sde = ControlledSDE(drift, _zero_sigma(), (-1.0, 1.0), 1, 1, T)
    return ControlProblem(sde, CoefficientSpec.constant(0.0, name="f"), g, "reachability")


def _reach_lifted(T: float, weights=None) -> LiftedProblem:
    W = tuple(weights or (Weight.constant(1.0),))
    b = CylindricalCoefficient(lambda t, y, a: np.full(y.shape[:-1] + (1,), float(a)), W, 1, (1,), 0.0, 1.0, "b")
    s = CylindricalCoefficient(lambda t, y, a: np.zeros(y.shape[:-1] + (1, 1)), W, 1, (1, 1), 0.0, 0.0, "sigma")
    f = CylindricalCoefficient(lambda t, y, a: np.zeros(y.shape[:-1]), W, 1, (), 0.0, 0.0, "f")
    g = CylindricalCoefficient(lambda t, y, a: -np.minimum(np.abs(y[..., 0]), 1.0), W, 1, (), 1.0, 1.0, "g")
    return build_lifted(b, s, f, g, (-1.0, 1.0), T, "markovian-lifted")


def _brownian(T: float) -> ControlProblem:
    drift = CoefficientSpec.constant(np.zeros(1), name="b")
    sigma = CoefficientSpec.constant(np.ones((1, 1)), name="sigma")
    g = _scalar_markov(lambda t, x, a: x[:, 0] ** 2, None, None, "g")
    sde = ControlledSDE(drift, sigma, (0.0,), 1, 1, T)
    return ControlProblem(sde, CoefficientSpec.constant(0.0, name="f"), g, "brownian")


_CONST = {"b": 0.5, "sigma": 0.3, "f": 0.2}


def _constant(T: float) -> ControlProblem:
    drift = CoefficientSpec.constant(np.array([_CONST["b"]]), name="b")
    sigma = CoefficientSpec.constant(np.array([[_CONST["sigma"]]]), name="sigma")
    g = _scalar_markov(lambda t, x, a: x[:, 0], 1.0, None, "g")
    sde = ControlledSDE(drift, sigma, (0.0,), 1, 1, T)
    return ControlProblem(sde, CoefficientSpec.constant(_CONST["f"], name="f"), g, "constant-coefficient")


def _exp_weighted_lifted(T: float) -> LiftedProblem:
    return _reach_lifted(T, (Weight.constant(1.0), Weight.exponential(-1.0)))


BUILTINS: tuple[BuiltinProblem, ...] = (
    BuiltinProblem(
        "reachability",
        "d=1, A={-1,1}, b=a, sigma=0, f=0, g=-min(|x(T)|,1)",
        "closed-form",
        "v(t,x) = -min(max(|x(t)|-(T-t),0),1)",
        _reach,
        lambda t, xt, T: reachability_value(t, xt, T),
        _reach_lifted,
    ),
    BuiltinProblem(
        "brownian",
        "d=1, A={0}, b=0, sigma=1, f=0, g=x(T)^2",
        "closed-form",
        "v(t,x) = x(t)^2 + (T-t)",
        _brownian,
        lambda t, xt, T: xt**2 + (T - t),
    ),
    BuiltinProblem(
        "constant-coefficient",
        f"d=1, A={{0}}, b={_CONST['b']}, sigma={_CONST['sigma']}, f={_CONST['f']}, g=x(T)",
        "closed-form",
        f"v(t,x) = x(t) + {_CONST['b'] + _CONST['f']}(T-t)",
        _constant,
        lambda t, xt, T: xt + (_CONST["b"] + _CONST["f"]) * (T - t),
    ),
    BuiltinProblem(
        "markovian-lifted",
        "reachability in lifted form with one weight phi=1; epsilon-regularized grid solve",
        "closed-form",
        "v_eps -> -min(max(|y|-(T-t),0),1) as eps -> 0",
        _reach,
        lambda t, xt, T: reachability_value(t, xt, T),
        _reach_lifted,
    ),
    BuiltinProblem(
        "exp-weighted-lifted",
        "reachability lifted with weights (1, e^{-s}); only the first coordinate enters g",
        "MC",
        None,
        _reach,
        None,
        _exp_weighted_lifted,
    ),
)


def list_builtin_problems() -> list[dict]:
    return [p.entry() for p in BUILTINS]


def get_builtin(name: str) -> BuiltinProblem:
    for p in BUILTINS:
        if p.name == name:
            return p
    raise DomainError(f"unknown built-in problem '{name}'")


# ---------------------------------------------------------------------------
# problems written as formulas


def weight_from_config(spec) -> Weight:
    """{family: const|exp|cos|poly, ...} -> Weight."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise DomainError(f"weight needs a family: {spec!r}")
    fam = spec["family"]
    if fam == "const":
        return Weight.constant(float(spec.get("c", 1.0)))
    if fam == "exp":
        return Weight.exponential(float(spec.get("rate", -1.0)), float(spec.get("scale", 1.0)))
    if fam == "cos":
        return Weight.cosine(float(spec.get("omega", 1.0)), float(spec.get("phase", 0.0)))
    if fam == "poly":
        return Weight.polynomial([float(c) for c in spec["coeffs"]])
    raise DomainError(f"unknown weight family '{fam}'")


def _as_list(v, n):
    if isinstance(v, list):
        if len(v) != n:
            raise DomainError(f"expected {n} formulas, got {len(v)}")
        return v
    if n != 1:
        raise DomainError(f"expected a list of {n} formulas")
    return [v]


def problem_from_config(cfg: dict):
    """Build (ControlProblem, LiftedProblem or None, T) from a formula dictionary.

    Formulas see t, a (the action) and either x1..xd (current state, Markovian)
    or y1..yD (lifted coordinates) when ``weights`` is given.
    """
    T = float(cfg.get("T", 1.0))
    d = int(cfg.get("d", 1))
    m = int(cfg.get("m", d))
    actions = tuple(float(a) for a in cfg.get("actions", [0.0]))
    bounds = cfg.get("bounds", {}) or {}
    lips = cfg.get("lipschitz", {}) or {}
    weights = cfg.get("weights")
    for key in ("drift", "diffusion", "terminal"):
        if key not in cfg:
            raise DomainError(f"problem is missing '{key}'")
    running = cfg.get("running", 0.0)
    if weights:
        W = tuple(weight_from_config(w) for w in weights)
        D = d * len(W)
        names = ["t", "a"] + [f"y{i + 1}" for i in range(D)]
    else:
        W, D = None, d
        names = ["t", "a"] + [f"x{i + 1}" for i in range(d)] + (["x"] if d == 1 else [])
    drift = [compile_expr(e, names) for e in _as_list(cfg["drift"], d)]
    diff = [compile_expr(e, names) for e in _as_list(cfg["diffusion"], d * m)]
    f_ex = compile_expr(running, names)
    g_ex = compile_expr(cfg["terminal"], names)

    def env(t, Y, a):
        e = {"t": t, "a": np.asarray(a if a is not None else 0.0, dtype=float)}
        prefix = "y" if W else "x"
        for i in range(Y.shape[-1]):
            e[f"{prefix}{i + 1}"] = Y[..., i]
        if not W and d == 1:
            e["x"] = Y[..., 0]
        return e

    def vec(exprs, t, Y, a, shape):
        e = env(t, Y, a)
        cols = [np.broadcast_to(np.asarray(x(**e), dtype=float), Y.shape[:-1]) for x in exprs]
        return np.stack(cols, axis=-1).reshape(Y.shape[:-1] + shape)

    b_core = lambda t, Y, a: vec(drift, t, Y, a, (d,))
    s_core = lambda t, Y, a: vec(diff, t, Y, a, (d, m))
    f_core = lambda t, Y, a: vec([f_ex], t, Y, a, ())
    g_core = lambda t, Y, a: vec([g_ex], t, Y, a, ())
    # evaluate once so that bad formulas surface at load time
    probe = np.zeros((1, D))
    try:
        for core in (b_core, s_core, f_core, g_core):
            core(0.0, probe, actions[0])
    except (ExprError, KeyError, ValueError) as exc:
        raise ExprError(str(exc)) from None
    kw = lambda key: dict(lipschitz_K=lips.get(key), bound=bounds.get(key))
    if W:
        b = CylindricalCoefficient(b_core, W, d, (d,), name="b", **kw("drift"))
        s = CylindricalCoefficient(s_core, W, d, (d, m), name="sigma", **kw("diffusion"))
        f = CylindricalCoefficient(f_core, W, d, (), name="f", **kw("running"))
        g = CylindricalCoefficient(g_core, W, d, (), name="g", **kw("terminal"))
        lifted = build_lifted(b, s, f, g, actions, T, cfg.get("name", "config"))
        return lifted.to_control_problem(), lifted, T
    spec = lambda core, key, scalar=False: CoefficientSpec.markovian(core, name=key, **kw(key))
    sde = ControlledSDE(spec(b_core, "drift"), spec(s_core, "diffusion"), actions, d, m, T)
    cp = ControlProblem(sde, spec(f_core, "running"), spec(g_core, "terminal"), cfg.get("name", "config"))
    return cp, None, T
