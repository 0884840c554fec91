"""Restricted numpy expressions for schedules and sequence rules read from JSON."""
from __future__ import annotations

import ast

import numpy as np

_FUNCS = {
    "log": np.log, "log1p": np.log1p, "exp": np.exp, "sqrt": np.sqrt,
    "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "abs": np.abs,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
    "floor": np.floor,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
    ast.Compare, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq, ast.Mod,
)


class Expression:
    """A vectorised function of one variable given as text, e.g. ``"1/log(t+e)"``."""

    def __init__(self, text, var="t"):
        self.text = str(text)
        self.var = var
        tree = ast.parse(self.text, mode="eval")
        for node in ast.walk(tree):
            if not isinstance(node, _NODES):
                raise ValueError(f"unsupported syntax in expression {self.text!r}: {type(node).__name__}")
            if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS and node.id != var:
                raise ValueError(f"unknown name {node.id!r} in expression {self.text!r}")
            if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
                raise ValueError(f"only whitelisted functions may be called in {self.text!r}")
        self._code = compile(tree, "<expr>", "eval")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        ns = {"__builtins__": {}, **_FUNCS, **_CONSTS, self.var: x}
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            val = eval(self._code, ns)  # noqa: S307 - names restricted above
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape).copy()

    def __repr__(self):
        return f"Expression({self.text!r})"


def as_rule(value, var="k"):
    """Turn a number, expression string or callable into a vectorised rule."""
    if callable(value):
        return value
    if isinstance(value, str):
        return Expression(value, var=var)
    c = float(value)
    return lambda x: np.full(np.shape(x), c)


def rule_to_json(value):
    if isinstance(value, Expression):
        return value.text
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return float(value)
    raise TypeError("callable rules cannot be serialised; use an expression string")
