"""Right-hand sides: the manufactured solution and the fixed force ``2 (1, x)``."""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import sympy as sp

__all__ = ["Load", "manufactured_load", "fixed_load", "zero_load", "make_load"]

_X, _Y = sp.symbols("x y", real=True)

STREAM = _X * _Y * (1 - _X) * (2 * _X - 1) * (_Y - 1) * (2 * _Y - 1)
PRESSURE = {
    "square": _X**2 - 3 * _Y**2 + sp.Rational(8, 3) * _X * _Y,
    "lshape": _X**2 - 3 * _Y**2 + sp.Rational(24, 7) * _X * _Y,
}


@dataclass(frozen=True)
class Load:
    """Force and, for manufactured problems, the exact solution.

    All callables take ``(x, y)`` arrays.  ``u`` and ``f`` return two
    components, ``grad_u`` returns ``[[du/dx, du/dy], [dv/dx, dv/dy]]``.
    """

    name: str
    f: Callable
    u: Optional[Callable] = None
    grad_u: Optional[Callable] = None
    p: Optional[Callable] = None
    # add the boundary traction term for an exact u with (eps(u) n).t != 0
    traction: bool = False

    @property
    def is_manufactured(self):
        return self.u is not None


def _vectorize(expr_list):
    fn = sp.lambdify((_X, _Y), expr_list, "numpy")

    def call(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = fn(x, y)
        return np.array(_broadcast(out, x.shape))

    return call


def _broadcast(out, shape):
    if isinstance(out, (list, tuple)):
        return [_broadcast(o, shape) for o in out]
    return np.broadcast_to(np.asarray(out, dtype=float), shape)


@lru_cache(maxsize=None)
def manufactured_load(domain="square", nu=0.5):
    """Exact ``u = curl phi``, ``p`` per domain and ``f = -div(2 nu eps(u)) + grad p``."""
    if domain not in PRESSURE:
        raise ValueError(f"unknown domain {domain!r}")
    u = [sp.diff(STREAM, _Y), -sp.diff(STREAM, _X)]
    p = PRESSURE[domain]
    grad = [[sp.diff(ui, v) for v in (_X, _Y)] for ui in u]
    eps = [[(grad[i][j] + grad[j][i]) / 2 for j in range(2)] for i in range(2)]
    nu_s = sp.nsimplify(nu)
    f = [
        sp.expand(-sum(sp.diff(2 * nu_s * eps[i][j], v) for j, v in enumerate((_X, _Y))) + sp.diff(p, (_X, _Y)[i]))
        for i in range(2)
    ]
    pf = sp.lambdify((_X, _Y), p, "numpy")
    return Load(
        name="manufactured",
        f=_vectorize(f),
        u=_vectorize(u),
        grad_u=_vectorize(grad),
        p=lambda x, y: np.broadcast_to(np.asarray(pf(np.asarray(x, float), np.asarray(y, float)), float), np.shape(x)),
        traction=True,
    )


def fixed_load():
    """The force ``f = 2 (1, x)``."""
    return Load(name="fixed", f=lambda x, y: np.array([np.full(np.shape(x), 2.0), 2.0 * np.asarray(x, float)]))


def zero_load():
    return Load(name="zero", f=lambda x, y: np.zeros((2,) + np.shape(x)))


def make_load(name, domain="square", nu=0.5):
    if name == "manufactured":
        return manufactured_load(domain, nu)
    if name == "fixed":
        return fixed_load()
    if name == "zero":
        return zero_load()
    raise ValueError(f"unknown load {name!r}")
