"""Small arithmetic expression language for coefficients given in configs.

Supported: numbers, variables, ``+ - * / ^`` (``**`` also accepted),
unary minus and the functions ``sin cos tan tanh exp log sqrt abs min max``.
Expressions compile to numpy-vectorised callables.
"""

from __future__ import annotations

import ast
from typing import Callable, Sequence

import numpy as np

from .errors import ParseError

_FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}
_CONSTANTS = {"pi": np.pi}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def _compile_node(node: ast.AST, variables: Sequence[str]):
    if isinstance(node, ast.Expression):
        return _compile_node(node.body, variables)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        value = float(node.value)
        return lambda env: value
    if isinstance(node, ast.Name):
        name = node.id
        if name in variables:
            return lambda env: env[name]
        if name in _CONSTANTS:
            value = _CONSTANTS[name]
            return lambda env: value
        raise ParseError(f"unknown variable {name!r}; allowed: {', '.join(variables)}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _compile_node(node.operand, variables)
        if isinstance(node.op, ast.USub):
            return lambda env: np.negative(inner(env))
        return inner
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        left = _compile_node(node.left, variables)
        right = _compile_node(node.right, variables)
        return lambda env: op(left(env), right(env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        fname = node.func.id
        if fname not in _FUNCTIONS or node.keywords:
            raise ParseError(f"unknown function {fname!r}")
        func = _FUNCTIONS[fname]
        args = [_compile_node(a, variables) for a in node.args]
        if fname in ("min", "max"):
            if len(args) < 2:
                raise ParseError(f"{fname} needs at least two arguments")

            def reduce_call(env, func=func, args=args):
                out = args[0](env)
                for a in args[1:]:
                    out = func(out, a(env))
                return out

            return reduce_call
        if len(args) != 1:
            raise ParseError(f"{fname} takes one argument")
        arg = args[0]
        return lambda env: func(arg(env))
    raise ParseError(f"unsupported syntax: {ast.dump(node)}")


def compile_expression(source: str, variables: Sequence[str]) -> Callable[..., np.ndarray]:
    """Compile ``source`` into ``f(**arrays)`` broadcasting over its variables."""
    if not isinstance(source, str) or not source.strip():
        raise ParseError("expression must be a non-empty string")
    try:
        tree = ast.parse(source.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"cannot parse {source!r}: {exc.msg}") from None
    body = _compile_node(tree, tuple(variables))

    def evaluate(**env):
        shape = np.broadcast(*[np.asarray(v) for v in env.values()]).shape if env else ()
        with np.errstate(all="ignore"):
            out = body(env)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    evaluate.source = source
    return evaluate
