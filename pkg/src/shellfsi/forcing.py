"""Fluid and shell forcing terms given as analytic expressions.

Expressions use the variables ``t, x1, x2`` (fluid force components) and
``t, y`` (shell force). Time and space derivatives are taken symbolically
so the forcing functional needs no differencing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import sympy

from .errors import ParseError

_ALLOWED_FUNCS = {"sin": sympy.sin, "cos": sympy.cos, "exp": sympy.exp, "pi": sympy.pi}
_SAFE_CHARS = re.compile(r"[\w\s.+\-*/()]*")
_NAME = re.compile(r"(?<![\w.])[A-Za-z_]\w*")
_FLUID_VARS = ("t", "x1", "x2")
_SHELL_VARS = ("t", "y")


def parse_expression(text: str, variables) -> sympy.Expr:
    """Parse ``text`` allowing only ``variables``, sums, products, powers, sin, cos, exp."""
    # sympify evaluates its input: admit only arithmetic and known names
    if not _SAFE_CHARS.fullmatch(text):
        raise ParseError(f"expression {text!r} contains characters outside + - * / ** ( ) . digits names")
    names = set(_NAME.findall(text)) - set(variables) - set(_ALLOWED_FUNCS)
    if names:
        raise ParseError(f"expression {text!r} uses unknown names {sorted(names)}")
    symbols = {v: sympy.Symbol(v, real=True) for v in variables}
    local = dict(_ALLOWED_FUNCS, **symbols)
    try:
        expr = sympy.sympify(text, locals=local, rational=False)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ParseError(f"cannot parse expression {text!r}: {exc}") from exc
    unknown = {s.name for s in expr.free_symbols} - set(variables)
    if unknown:
        raise ParseError(f"expression {text!r} uses unknown symbols {sorted(unknown)}")
    allowed = (sympy.sin, sympy.cos, sympy.exp)
    for node in sympy.preorder_traversal(expr):
        if isinstance(node, sympy.Function) and not isinstance(node, allowed):
            raise ParseError(f"function {node.func} is not allowed in {text!r}")
    return expr


def _lambdify(expr, variables):
    syms = [sympy.Symbol(v, real=True) for v in variables]
    fn = sympy.lambdify(syms, expr, modules="numpy")

    def call(*args):
        out = fn(*args)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(*args).shape).copy()

    return call


@dataclass
class Forcing:
    """Fluid force ``f(t, x)`` and shell force ``g(t, y)`` with derivatives.

    Any callable left as ``None`` means the corresponding force vanishes.
    """

    f: object = None
    f_t: object = None
    f_grad: object = None
    g: object = None
    g_t: object = None
    g_y: object = None
    text: tuple = ("0", "0", "0")

    @property
    def has_fluid(self) -> bool:
        return self.f is not None

    @property
    def has_shell(self) -> bool:
        return self.g is not None

    @classmethod
    def zero(cls) -> "Forcing":
        return cls()

    @classmethod
    def from_expressions(cls, f1: str = "0", f2: str = "0", g: str = "0") -> "Forcing":
        e1, e2 = parse_expression(f1, _FLUID_VARS), parse_expression(f2, _FLUID_VARS)
        eg = parse_expression(g, _SHELL_VARS)
        t, x1, x2 = (sympy.Symbol(v, real=True) for v in _FLUID_VARS)
        y = sympy.Symbol("y", real=True)
        out = cls(text=(f1, f2, g))
        if not (e1 == 0 and e2 == 0):
            comps = [_lambdify(e, _FLUID_VARS) for e in (e1, e2)]
            dts = [_lambdify(sympy.diff(e, t), _FLUID_VARS) for e in (e1, e2)]
            grads = [[_lambdify(sympy.diff(e, v), _FLUID_VARS) for v in (x1, x2)] for e in (e1, e2)]

            def f(tt, X, comps=comps):
                return np.stack([c(tt, X[:, 0], X[:, 1]) for c in comps], axis=1)

            def f_t(tt, X, dts=dts):
                return np.stack([c(tt, X[:, 0], X[:, 1]) for c in dts], axis=1)

            def f_grad(tt, X, grads=grads):
                return np.stack([np.stack([c(tt, X[:, 0], X[:, 1]) for c in row], axis=1)
                                 for row in grads], axis=1)

            out.f, out.f_t, out.f_grad = f, f_t, f_grad
        if eg != 0:
            gf = _lambdify(eg, _SHELL_VARS)
            gt = _lambdify(sympy.diff(eg, t), _SHELL_VARS)
            gy = _lambdify(sympy.diff(eg, y), _SHELL_VARS)
            out.g = lambda tt, yy: gf(tt, yy)
            out.g_t = lambda tt, yy: gt(tt, yy)
            out.g_y = lambda tt, yy: gy(tt, yy)
        return out
