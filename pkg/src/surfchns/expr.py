"""Restricted arithmetic expressions in the ambient coordinates.

Configuration files describe initial data and custom normal velocities as
short formulas such as ``"0.3*sin(4*z)"``.  They are parsed into an AST,
checked against a whitelist and evaluated with numpy on vertex arrays.
"""

import ast

import numpy as np

from .errors import ConfigurationError

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh,
    "arctan": np.arctan, "arctan2": np.arctan2, "arcsin": np.arcsin,
    "arccos": np.arccos, "abs": np.abs, "minimum": np.minimum, "maximum": np.maximum,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_VARS = ("x", "y", "z", "r", "t")
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod, ast.USub, ast.UAdd,
)


def compile_expression(text):
    """Parse and validate ``text``; return a code object for :func:`evaluate`."""
    if not isinstance(text, str) or not text.strip():
        raise ConfigurationError(f"expression must be a non-empty string, got {text!r}")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigurationError(f"disallowed syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS \
                and node.id not in _VARS:
            raise ConfigurationError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigurationError(f"only whitelisted functions may be called in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigurationError(f"non-numeric literal in {text!r}")
    return compile(tree, "<expression>", "eval")


def evaluate(text, points, t=0.0):
    """Evaluate a scalar expression at each row of ``points``.

    Returns
    -------
    ndarray, shape (N,)
    """
    code = compile_expression(text) if isinstance(text, str) else text
    pts = np.asarray(points, dtype=float)
    env = dict(_FUNCS)
    env.update(_CONSTS)
    env.update(x=pts[:, 0], y=pts[:, 1], z=pts[:, 2], r=np.linalg.norm(pts, axis=1), t=float(t))
    with np.errstate(all="raise"):
        try:
            val = eval(code, {"__builtins__": {}}, env)  # noqa: S307 - AST whitelisted above
        except FloatingPointError as exc:
            raise ConfigurationError(f"expression {text!r} is not finite on the mesh: {exc}") from None
    return np.broadcast_to(np.asarray(val, dtype=float), (pts.shape[0],)).copy()
