"""
Closed-form fields on the unit box.

Fields are finite linear combinations of tensor products of the factors
``sin(k pi x_i)``, ``x_i (1 - x_i)`` and ``1``. A fixed catalog replaces
arbitrary callbacks so that every run is reproducible from its configuration
alone.

Catalog identifiers accepted by :func:`parse_field`:

``sin(k)``
    ``prod_i sin(k pi x_i)``.
``sin(k1,k2,...)``
    One integer per axis.
``bubble``
    ``prod_i x_i (1 - x_i)``.
``series(K,s)``
    ``sum_{k<=K} k**-s sin(k pi x_1) prod_{i>1} sin(pi x_i)``; a rough profile
    when ``s`` is small.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = ["Field", "sine", "bubble", "series", "parse_field"]

# factor codes: k >= 1 -> sin(k pi x); 0 -> x(1-x); -1 -> 1
_BUBBLE = 0
_ONE = -1


def _factor(code, x):
    if code == _ONE:
        return np.ones_like(x), np.zeros_like(x)
    if code == _BUBBLE:
        return x * (1.0 - x), 1.0 - 2.0 * x
    k = code * np.pi
    return np.sin(k * x), k * np.cos(k * x)


@dataclass(frozen=True)
class Field:
    """Linear combination ``sum_t c_t prod_i f_{t,i}(x_i)``.

    Attributes
    ----------
    dim : int
    terms : tuple of (float, tuple of int)
        Coefficient and per-axis factor codes.
    """

    dim: int
    terms: tuple

    def value(self, x):
        """Evaluate at points ``x`` of shape (n_pts, dim)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for c, codes in self.terms:
            v = np.full(x.shape[0], c)
            for i, code in enumerate(codes):
                v = v * _factor(code, x[:, i])[0]
            out += v
        return out

    def grad(self, x):
        """Gradient at points ``x``, shape (n_pts, dim)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        for c, codes in self.terms:
            vals = [_factor(code, x[:, i]) for i, code in enumerate(codes)]
            for j in range(self.dim):
                g = np.full(x.shape[0], c)
                for i, (f, df) in enumerate(vals):
                    g = g * (df if i == j else f)
                out[:, j] += g
        return out

    def __add__(self, other):
        if not isinstance(other, Field) or other.dim != self.dim:
            return NotImplemented
        return Field(self.dim, self.terms + other.terms)

    def __mul__(self, s):
        s = float(s)
        return Field(self.dim, tuple((s * c, codes) for c, codes in self.terms))

    __rmul__ = __mul__


def sine(dim: int, *ks) -> Field:
    """``prod_i sin(k_i pi x_i)``; a single ``k`` applies to every axis."""
    if len(ks) == 1:
        ks = ks * dim
    if len(ks) != dim or any(int(k) < 1 for k in ks):
        raise ConfigurationError(f"need {dim} positive wave numbers, got {ks}")
    return Field(dim, ((1.0, tuple(int(k) for k in ks)),))


def bubble(dim: int) -> Field:
    """``prod_i x_i (1 - x_i)``."""
    return Field(dim, ((1.0, (_BUBBLE,) * dim),))


def series(dim: int, K: int, s: float) -> Field:
    """Sine series with algebraically decaying coefficients ``k**-s``."""
    terms = tuple((float(k) ** (-s), (k,) + (1,) * (dim - 1)) for k in range(1, K + 1))
    return Field(dim, terms)


_RE = re.compile(r"^\s*(\w+)\s*(?:\((.*)\))?\s*$")


def parse_field(spec: str, dim: int) -> Field:
    """Build a catalog field from its identifier (see module docstring)."""
    m = _RE.match(spec)
    if not m:
        raise ConfigurationError(f"malformed field id {spec!r}")
    name, args = m.group(1).lower(), m.group(2)
    vals = [a.strip() for a in args.split(",")] if args else []
    try:
        if name == "sin":
            return sine(dim, *[int(v) for v in vals])
        if name == "bubble" and not vals:
            return bubble(dim)
        if name == "series" and len(vals) == 2:
            return series(dim, int(vals[0]), float(vals[1]))
    except ValueError as exc:
        raise ConfigurationError(f"bad arguments in field id {spec!r}") from exc
    raise ConfigurationError(f"unknown field id {spec!r}")
