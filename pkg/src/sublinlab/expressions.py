"""Arithmetic expressions in x (and y) used to define weights and fields.

Grammar: numeric literals, the names x, y, pi, e, the operators
+ - * / ^ and the functions min, max, abs, sin, cos, exp, ln (plus sqrt).
Parsing goes through :mod:`ast` with a node whitelist; nothing is eval'd.
"""

from __future__ import annotations

import ast
import math

import numpy as np


class ExpressionError(ValueError):
    pass


_FUNCS = {
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class Expression:
    def __init__(self, text: str, variables=("x", "y")):
        self.text = text.strip()
        self.variables = tuple(variables)
        if not self.text:
            raise ExpressionError("empty expression")
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def __repr__(self):
        return f"Expression({self.text!r})"

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"bad literal in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in _CONSTS:
                raise ExpressionError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.UAdd, ast.USub)):
                raise ExpressionError(f"operator not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise ExpressionError(f"bad call in {self.text!r}")
            name = node.func.id
            if name in ("min", "max"):
                if len(node.args) < 2:
                    raise ExpressionError(f"{name} needs at least two arguments")
            elif name in _FUNCS:
                if len(node.args) != 1:
                    raise ExpressionError(f"{name} takes one argument")
            else:
                raise ExpressionError(f"unknown function {name!r} in {self.text!r}")
            for a in node.args:
                self._check(a)
        else:
            raise ExpressionError(f"unsupported syntax in {self.text!r}")

    def __call__(self, x, y=None):
        x = np.asarray(x, dtype=float)
        env = {"x": x, "y": np.zeros_like(x) if y is None else np.asarray(y, dtype=float)}
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    def at(self, coords):
        coords = np.atleast_2d(coords)
        return self(coords[:, 0], coords[:, 1] if coords.shape[1] > 1 else None)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        name = node.func.id
        args = [self._eval(a, env) for a in node.args]
        if name == "min":
            return np.minimum.reduce(np.broadcast_arrays(*args))
        if name == "max":
            return np.maximum.reduce(np.broadcast_arrays(*args))
        return _FUNCS[name](args[0])
