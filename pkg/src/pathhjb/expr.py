"""A small, safe arithmetic expression language for coefficient formulas."""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Iterable

import numpy as np

__all__ = ["ExprError", "Expression", "compile_expr", "FUNCTIONS", "CONSTANTS"]


class ExprError(ValueError):
    """Malformed or disallowed expression."""


FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "atan": np.arctan,
    "sign": np.sign,
    "min": lambda *a: reduce(np.minimum, a),
    "max": lambda *a: reduce(np.maximum, a),
}

CONSTANTS = {"pi": np.pi, "e": np.e}

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _build(node, names: frozenset):
    if isinstance(node, ast.Expression):
        return _build(node.body, names)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExprError(f"unsupported literal {node.value!r}")
        val = float(node.value)
        return lambda env: val
    if isinstance(node, ast.Name):
        if node.id in CONSTANTS:
            val = CONSTANTS[node.id]
            return lambda env: val
        if node.id not in names:
            raise ExprError(f"unknown variable '{node.id}' (allowed: {', '.join(sorted(names))})")
        key = node.id
        return lambda env: env[key]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op, lhs, rhs = _BINOPS[type(node.op)], _build(node.left, names), _build(node.right, names)
        return lambda env: op(lhs(env), rhs(env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        op, arg = _UNOPS[type(node.op)], _build(node.operand, names)
        return lambda env: op(arg(env))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExprError(f"unknown function in {ast.unparse(node)!r}")
        if node.keywords or not node.args:
            raise ExprError(f"bad call {ast.unparse(node)!r}")
        fn = FUNCTIONS[node.func.id]
        if node.func.id not in ("min", "max") and len(node.args) != 1:
            raise ExprError(f"{node.func.id} takes one argument")
        args = [_build(a, names) for a in node.args]
        return lambda env: fn(*[a(env) for a in args])
    raise ExprError(f"unsupported syntax: {ast.dump(node)[:60]}")


@dataclass(frozen=True)
class Expression:
    source: str
    names: frozenset
    _fn: Callable

    def __call__(self, **env):
        missing = self.names_used - set(env)
        if missing:
            raise ExprError(f"missing variables {sorted(missing)}")
        return self._fn(env)

    @property
    def names_used(self) -> set:
        tree = ast.parse(self.source, mode="eval")
        return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and n.id not in CONSTANTS
                and not _is_func(tree, n)}


def _is_func(tree, name_node) -> bool:
    return any(isinstance(c, ast.Call) and c.func is name_node for c in ast.walk(tree))


def compile_expr(source, names: Iterable[str]) -> Expression:
    """Compile ``source`` over the given variable names; numbers are accepted as constants."""
    if isinstance(source, (int, float)) and not isinstance(source, bool):
        source = repr(float(source))
    if not isinstance(source, str):
        raise ExprError(f"expression must be a string or number, got {type(source).__name__}")
    try:
        tree = ast.parse(source.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"cannot parse {source!r}: {exc.msg}") from None
    names = frozenset(names)
    return Expression(source, names, _build(tree, names))
