"""Gauss-Legendre helpers with node-doubling convergence gates."""

from __future__ import annotations

from functools import lru_cache
from math import gamma as gamma_fn, pi

import numpy as np

from .errors import QuadratureError


@lru_cache(maxsize=64)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre(n: int, a, b):
    """Nodes and weights on [a, b]; array endpoints give one rule per row."""
    x, w = _leggauss(n)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.ndim == 0 and b.ndim == 0:
        return (b - a) / 2 * x + (a + b) / 2, (b - a) / 2 * w
    a, b = a[..., None], b[..., None]
    return (b - a) / 2 * x + (a + b) / 2, (b - a) / 2 * w


def sphere_area(d: int) -> float:
    return 2 * pi ** (d / 2) / gamma_fn(d / 2)


def sphere_abs_coordinate(d: int) -> float:
    """Integral of |omega_j| over the unit sphere S^{d-1}."""
    return 2 * pi ** ((d - 1) / 2) / gamma_fn((d + 1) / 2)


def _converged(old: dict, new: dict, rtol: float) -> bool:
    scale = max(abs(v) for v in new.values())
    return all(abs(new[k] - old[k]) <= rtol * max(abs(new[k]), 1e-12 * scale) for k in new)


def refine(fn, n0: int, rtol: float, max_doublings: int, what: str) -> tuple:
    """Evaluate ``fn(n)`` (a dict of values) with n doubling until every entry moves <= rtol."""
    n = n0
    old = fn(n)
    new = old
    for _ in range(max_doublings):
        n *= 2
        new = fn(n)
        if _converged(old, new, rtol):
            return new, n
        old = new
    raise QuadratureError(f"{what}: no {rtol:.0%} agreement after {max_doublings} "
                          f"doublings (last values {new})")
