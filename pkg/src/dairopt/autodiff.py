"""Vectorized forward-mode automatic differentiation.

A :class:`Jet` carries an array of values together with first derivatives
(and optionally second derivatives) with respect to ``p`` seed directions.
Derivative arrays append the seed axes to the value shape, so a jet of shape
``S`` stores ``g`` with shape ``S + (p,)`` and ``h`` with shape ``S + (p, p)``.

Problem callables are written against the functions of this module
(``ad.sin``, ``ad.stack`` ...), which fall through to numpy for plain arrays.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Jet", "seed", "value", "sin", "cos", "tan", "exp", "log", "sqrt", "tanh",
    "sinh", "cosh", "arctan", "abs", "square", "where", "stack",
    "concatenate", "sum", "contract", "ad_evaluate", "color_columns",
    "jacobian", "hessian",
]


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class Jet:
    """Truncated Taylor expansion of an array-valued quantity."""

    __slots__ = ("v", "g", "h")
    __array_ufunc__ = None

    def __init__(self, v, g, h=None):
        self.v = np.asarray(v, dtype=float)
        self.g = g
        self.h = h

    # ----- shape handling -------------------------------------------------
    @property
    def shape(self):
        return self.v.shape

    @property
    def ndim(self):
        return self.v.ndim

    @property
    def nseed(self):
        return self.g.shape[-1]

    def __len__(self):
        return self.v.shape[0]

    def __iter__(self):
        for i in range(self.v.shape[0]):
            yield self[i]

    def __getitem__(self, key):
        if key is Ellipsis or (isinstance(key, tuple) and any(k is Ellipsis for k in key)):
            raise IndexError("Ellipsis indexing is not supported on Jet")
        h = None if self.h is None else self.h[key]
        return Jet(self.v[key], self.g[key], h)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        p = self.nseed
        shape = np.empty(self.v.shape).reshape(shape).shape
        h = None if self.h is None else self.h.reshape(shape + (p, p))
        return Jet(self.v.reshape(shape), self.g.reshape(shape + (p,)), h)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], tuple):
            axes = axes[0]
        nd = self.v.ndim
        if not axes:
            axes = tuple(reversed(range(nd)))
        h = None if self.h is None else self.h.transpose(axes + (nd, nd + 1))
        return Jet(self.v.transpose(axes), self.g.transpose(axes + (nd,)), h)

    def __repr__(self):
        order = 1 if self.h is None else 2
        return f"Jet(shape={self.v.shape}, nseed={self.nseed}, order={order})"

    # ----- arithmetic -----------------------------------------------------
    def _unary(self, f0, f1, f2=None):
        """Chain rule for an elementwise map with derivatives f1, f2."""
        d1 = f1[..., None]
        g = d1 * self.g
        h = None
        if self.h is not None:
            h = d1[..., None] * self.h + f2[..., None, None] * _outer(self.g, self.g)
        return Jet(f0, g, h)

    def __neg__(self):
        return Jet(-self.v, -self.g, None if self.h is None else -self.h)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Jet):
            v = self.v + other.v
            g = self.g + other.g
            h = _add_h(self.h, other.h)
            if h is not None and h.shape[:-2] != v.shape:
                h = np.broadcast_to(h, v.shape + h.shape[-2:])
            return Jet(v, g, h)
        other = np.asarray(other, dtype=float)
        v = self.v + other
        g = np.broadcast_to(self.g, v.shape + self.g.shape[-1:])
        h = None if self.h is None else np.broadcast_to(self.h, v.shape + self.h.shape[-2:])
        return Jet(v, g, h)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = self, other
            g = a.g * b.v[..., None] + b.g * a.v[..., None]
            h = None
            if a.h is not None or b.h is not None:
                h = _outer(a.g, b.g) + _outer(b.g, a.g)
                if a.h is not None:
                    h = h + a.h * b.v[..., None, None]
                if b.h is not None:
                    h = h + b.h * a.v[..., None, None]
            return Jet(a.v * b.v, g, h)
        c = np.asarray(other, dtype=float)
        h = None if self.h is None else self.h * c[..., None, None]
        return Jet(self.v * c, self.g * c[..., None], h)

    __rmul__ = __mul__

    def reciprocal(self):
        r = 1.0 / self.v
        return self._unary(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, k):
        if isinstance(k, Jet):
            return exp(k * log(self))
        k = float(k)
        if k == 2.0:
            return self._unary(self.v * self.v, 2.0 * self.v, np.full_like(self.v, 2.0))
        if k == 1.0:
            return self
        if k == 0.0:
            return Jet(np.ones_like(self.v), np.zeros_like(self.g),
                       None if self.h is None else np.zeros_like(self.h))
        v = self.v
        return self._unary(v ** k, k * v ** (k - 1.0), k * (k - 1.0) * v ** (k - 2.0))

    def __rpow__(self, base):
        return exp(self * np.log(base))

    # Comparisons act on values; they exist so branchy user code can run.
    def __lt__(self, other):
        return self.v < value(other)

    def __le__(self, other):
        return self.v <= value(other)

    def __gt__(self, other):
        return self.v > value(other)

    def __ge__(self, other):
        return self.v >= value(other)


def _add_h(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def value(x):
    """Strip derivative information."""
    return x.v if isinstance(x, Jet) else np.asarray(x, dtype=float)


def seed(x, directions=None, order=1):
    """Make a jet from ``x`` (shape ``(n,)`` or ``(E, n)``).

    ``directions`` is an ``(n, p)`` seed matrix; identity when omitted.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if directions is None:
        directions = np.eye(n)
    directions = np.asarray(directions, dtype=float)
    p = directions.shape[1]
    g = np.broadcast_to(directions, x.shape + (p,)).copy()
    h = np.zeros(x.shape + (p, p)) if order >= 2 else None
    return Jet(x, g, h)


# ----- elementary functions ------------------------------------------------

def sin(x):
    if not isinstance(x, Jet):
        return np.sin(x)
    s, c = np.sin(x.v), np.cos(x.v)
    return x._unary(s, c, -s)


def cos(x):
    if not isinstance(x, Jet):
        return np.cos(x)
    s, c = np.sin(x.v), np.cos(x.v)
    return x._unary(c, -s, -c)


def tan(x):
    if not isinstance(x, Jet):
        return np.tan(x)
    t = np.tan(x.v)
    d = 1.0 + t * t
    return x._unary(t, d, 2.0 * t * d)


def exp(x):
    if not isinstance(x, Jet):
        return np.exp(x)
    e = np.exp(x.v)
    return x._unary(e, e, e)


def log(x):
    if not isinstance(x, Jet):
        return np.log(x)
    r = 1.0 / x.v
    return x._unary(np.log(x.v), r, -r * r)


def sqrt(x):
    if not isinstance(x, Jet):
        return np.sqrt(x)
    s = np.sqrt(x.v)
    d = 0.5 / s
    return x._unary(s, d, -0.5 * d / x.v)


def tanh(x):
    if not isinstance(x, Jet):
        return np.tanh(x)
    t = np.tanh(x.v)
    d = 1.0 - t * t
    return x._unary(t, d, -2.0 * t * d)


def sinh(x):
    if not isinstance(x, Jet):
        return np.sinh(x)
    s, c = np.sinh(x.v), np.cosh(x.v)
    return x._unary(s, c, s)


def cosh(x):
    if not isinstance(x, Jet):
        return np.cosh(x)
    s, c = np.sinh(x.v), np.cosh(x.v)
    return x._unary(c, s, c)


def arctan(x):
    if not isinstance(x, Jet):
        return np.arctan(x)
    d = 1.0 / (1.0 + x.v * x.v)
    return x._unary(np.arctan(x.v), d, -2.0 * x.v * d * d)


def abs(x):  # noqa: A001
    """|x| with derivative sign(x); the kink at 0 takes the right-hand slope."""
    if not isinstance(x, Jet):
        return np.abs(x)
    s = np.where(x.v >= 0.0, 1.0, -1.0)
    return x._unary(np.abs(x.v), s, np.zeros_like(x.v))


def square(x):
    if not isinstance(x, Jet):
        return np.square(x)
    return x * x


def where(cond, a, b):
    """Branch selection; derivatives follow the selected branch."""
    cond = np.asarray(value(cond), dtype=bool)
    if not isinstance(a, Jet) and not isinstance(b, Jet):
        return np.where(cond, a, b)
    ref = a if isinstance(a, Jet) else b
    a = _as_jet(a, ref)
    b = _as_jet(b, ref)
    v = np.where(cond, a.v, b.v)
    g = np.where(cond[..., None], a.g, b.g)
    h = None
    if a.h is not None or b.h is not None:
        ah = a.h if a.h is not None else np.zeros(a.g.shape + a.g.shape[-1:])
        bh = b.h if b.h is not None else np.zeros(b.g.shape + b.g.shape[-1:])
        h = np.where(cond[..., None, None], ah, bh)
    return Jet(v, g, h)


def _as_jet(x, ref: Jet) -> Jet:
    if isinstance(x, Jet):
        return x
    x = np.asarray(x, dtype=float)
    p = ref.nseed
    g = np.zeros(x.shape + (p,))
    h = None if ref.h is None else np.zeros(x.shape + (p, p))
    return Jet(x, g, h)


def stack(items: Sequence, axis: int = 0):
    """Stack along a leading value axis (``axis`` must be non-negative)."""
    jets = [it for it in items if isinstance(it, Jet)]
    if not jets:
        return np.stack([np.asarray(it, dtype=float) for it in items], axis=axis)
    ref = jets[0]
    second = any(j.h is not None for j in jets)
    shape = np.broadcast_shapes(*[np.shape(value(it)) for it in items])
    vs, gs, hs = [], [], []
    p = ref.nseed
    for it in items:
        j = _as_jet(it, ref)
        vs.append(np.broadcast_to(j.v, shape))
        gs.append(np.broadcast_to(j.g, shape + (p,)))
        if second:
            jh = j.h if j.h is not None else np.zeros(j.g.shape + (p,))
            hs.append(np.broadcast_to(jh, shape + (p, p)))
    h = np.stack(hs, axis=axis) if second else None
    return Jet(np.stack(vs, axis=axis), np.stack(gs, axis=axis), h)


def concatenate(items: Sequence, axis: int = 0):
    jets = [it for it in items if isinstance(it, Jet)]
    if not jets:
        return np.concatenate([np.asarray(it, dtype=float) for it in items], axis=axis)
    ref = jets[0]
    second = any(j.h is not None for j in jets)
    parts = [_as_jet(it, ref) for it in items]
    p = ref.nseed
    h = None
    if second:
        h = np.concatenate([j.h if j.h is not None else np.zeros(j.g.shape + (p,))
                            for j in parts], axis=axis)
    return Jet(np.concatenate([j.v for j in parts], axis=axis),
               np.concatenate([j.g for j in parts], axis=axis), h)


def sum(x, axis: int | None = None):  # noqa: A001
    """Sum over value axes (all of them when ``axis`` is None)."""
    if not isinstance(x, Jet):
        return np.sum(x, axis=axis)
    if axis is None:
        axes = tuple(range(x.v.ndim))
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % x.v.ndim for a in axes)
    h = None if x.h is None else x.h.sum(axis=axes)
    return Jet(x.v.sum(axis=axes), x.g.sum(axis=axes), h)


def contract(matrix, x):
    """Apply ``matrix`` (``(q, n)``) along the last value axis of ``x``.

    ``matrix`` may carry leading batch axes matching those of ``x``.
    """
    m = np.asarray(matrix, dtype=float)
    if not isinstance(x, Jet):
        return np.einsum("...qi,...i->...q", m, x)
    v = np.einsum("...qi,...i->...q", m, x.v)
    g = np.einsum("...qi,...ip->...qp", m, x.g)
    h = None if x.h is None else np.einsum("...qi,...ipr->...qpr", m, x.h)
    return Jet(v, g, h)


# ----- drivers -------------------------------------------------------------

def ad_evaluate(fun: Callable, x, directions):
    """Values and directional derivatives of ``fun`` at ``x``.

    ``directions`` is ``(n,)`` for a single seed or ``(n, p)`` for ``p``
    seeds. Returns ``(values, derivs)`` where ``derivs`` has shape
    ``values.shape + (p,)`` (the seed axis is dropped for a single seed).
    A ``FloatingPointError`` is raised when values or derivatives are NaN.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(directions, dtype=float)
    single = d.ndim == 1
    if single:
        d = d[:, None]
    out = fun(seed(x, d))
    if not isinstance(out, Jet):
        out = _as_jet(out, seed(x, d))
    vals, der = out.v, out.g
    if np.isnan(vals).any() or np.isnan(der).any():
        raise FloatingPointError("NaN encountered during AD evaluation")
    return vals, (der[..., 0] if single else der)


def color_columns(pattern) -> np.ndarray:
    """Greedy distance-1 coloring of the column intersection graph.

    Columns sharing no nonzero row receive the same color, so one seed per
    color recovers the full Jacobian. Returns one color index per column.
    """
    pat = np.asarray(pattern, dtype=bool)
    ncol = pat.shape[1]
    colors = -np.ones(ncol, dtype=int)
    # rows touched by each color so far
    used: list[np.ndarray] = []
    for j in range(ncol):
        rows = pat[:, j]
        for c, mask in enumerate(used):
            if not np.any(mask & rows):
                colors[j] = c
                mask |= rows
                break
        else:
            colors[j] = len(used)
            used.append(rows.copy())
    return colors


def jacobian(fun: Callable, x, sparsity=None):
    """Jacobian of a vector function by forward mode.

    With a boolean ``sparsity`` pattern the seeds are compressed by column
    coloring; entries outside the pattern are returned as zero.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if sparsity is None:
        vals, der = ad_evaluate(fun, x, np.eye(n))
        return vals, der.reshape(vals.size, n)
    pat = np.asarray(sparsity, dtype=bool)
    colors = color_columns(pat)
    ncolor = colors.max() + 1 if n else 0
    seeds = np.zeros((n, ncolor))
    seeds[np.arange(n), colors] = 1.0
    vals, der = ad_evaluate(fun, x, seeds)
    der = der.reshape(vals.size, ncolor)
    jac = np.where(pat, der[:, colors], 0.0)
    return vals, jac


def hessian(fun: Callable, x):
    """Dense value, gradient and Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = fun(seed(x, order=2))
    return float(out.v), out.g.copy(), out.h.copy()
