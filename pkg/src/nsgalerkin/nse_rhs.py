"""Fourier-side Navier-Stokes nonlinearity on the truncated lattice.

Two evaluation paths share one definition of the truncated sums:

* ``method="fft"``: zero-padded pseudo-spectral products on a grid of
  ``N >= 3M + 1`` points per axis (the 3/2 padding rule), which reproduces
  the truncated convolution on every retained mode without aliasing;
* ``method="direct"``: explicit sums over gamma for every alpha, O(M^{2D}).

The pressure term uses the numerator
``sum_{j,k} sum_gamma gamma_k (alpha_j - gamma_j) v_{j gamma} v_{k (alpha-gamma)}``,
the transform of ``sum_{j,k} (d_k v_j)(d_j v_k)``.  The arrangement with the
indices on the wavevector factors swapped (``form="printed"``) is the product
of two divergences and vanishes identically on solenoidal fields; it is kept
for comparison only.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from numbers import Real

import numpy as np

from .errors import ParameterError
from .params import ScalingParams
from .spectral_core import (ModeField, check_index, is_divergence_free, lattice,
                            radius_squared, shell_spectrum)

TWO_PI = 2.0 * np.pi
FORMS = ("corrected", "printed")


def padded_size(truncation: int) -> int:
    """Smallest odd grid size N with N >= 3M + 1."""
    k = -(-3 * truncation // 2)
    return 2 * k + 1


@lru_cache(maxsize=16)
def _pad_slices(dimension, truncation, n):
    c = (n - 1) // 2
    return (Ellipsis,) + (slice(c - truncation, c + truncation + 1),) * dimension


def to_grid(coeffs: np.ndarray, dimension: int, n: int) -> np.ndarray:
    """Physical values on an n^D grid of trigonometric polynomials given by ``coeffs``.

    The last ``dimension`` axes of ``coeffs`` are the centred lattice.
    """
    truncation = (coeffs.shape[-1] - 1) // 2
    lead = coeffs.shape[:-dimension]
    big = np.zeros(lead + (n,) * dimension, dtype=complex)
    big[_pad_slices(dimension, truncation, n)] = coeffs
    axes = tuple(range(-dimension, 0))
    return np.fft.ifftn(np.fft.ifftshift(big, axes=axes), axes=axes) * n ** dimension


def from_grid(values: np.ndarray, dimension: int, truncation: int) -> np.ndarray:
    n = values.shape[-1]
    axes = tuple(range(-dimension, 0))
    coeffs = np.fft.fftshift(np.fft.fftn(values, axes=axes), axes=axes) / n ** dimension
    return coeffs[_pad_slices(dimension, truncation, n)]


def _inverse_radius_squared(dimension, truncation):
    r2 = radius_squared(dimension, truncation)
    inv = np.zeros(r2.shape)
    np.divide(1.0, r2, out=inv, where=r2 > 0)
    return inv


def _check_form(form):
    if form not in FORMS:
        raise ParameterError(f"form must be one of {FORMS}, got {form!r}")


def _warn_if_compressible(field):
    if not field.divergence_free and not is_divergence_free(field, 1e-10):
        warnings.warn("nonlinear term evaluated on a field that is not divergence-free",
                      RuntimeWarning, stacklevel=3)


# -- FFT path -----------------------------------------------------------------

def _fft_terms(field: ModeField, form: str):
    d, m, l = field.dimension, field.truncation, field.torus_diameter
    n = padded_size(m)
    v = field.amplitudes
    k = lattice(d, m)
    u = to_grid(v, d, n)
    # dv[j, i] = physical d_j v_i
    dv = to_grid((TWO_PI * 1j / l) * k[:, None] * v[None, :], d, n)
    burgers_phys = np.einsum("j...,ji...->i...", u, dv)
    burgers = from_grid(burgers_phys, d, m)

    if form == "corrected":
        # sum_{j,k} (gamma_k v_j)(gamma'_j v_k)  ->  sum_{jk} A[k,j] A[j,k]
        a = to_grid(k[:, None] * v[None, :], d, n)
        prod = np.einsum("kj...,jk...->...", a, a)
    else:
        s = to_grid(np.sum(k * v, axis=0), d, n)
        prod = s * s
    numer = from_grid(prod, d, m)
    leray = (TWO_PI * 1j / l) * k * (numer * _inverse_radius_squared(d, m))
    return burgers, leray


# -- direct path --------------------------------------------------------------

def _direct_terms(field: ModeField, form: str):
    d, m, l = field.dimension, field.truncation, field.torus_diameter
    v = field.amplitudes
    burgers = np.zeros_like(v)
    numer = np.zeros(v.shape[1:], dtype=complex)
    for alpha in product(range(-m, m + 1), repeat=d):
        gam_axes = [np.arange(max(-m, a - m), min(m, a + m) + 1) for a in alpha]
        g_idx = np.ix_(*[g + m for g in gam_axes])
        r_idx = np.ix_(*[a - g + m for a, g in zip(alpha, gam_axes)])
        vg = v[(slice(None),) + g_idx]          # v_{gamma}
        vr = v[(slice(None),) + r_idx]          # v_{alpha - gamma}
        gam = np.array(np.meshgrid(*gam_axes, indexing="ij"))
        rest = np.array(alpha).reshape((d,) + (1,) * d) - gam
        out = tuple(a + m for a in alpha)
        # sum_j gamma_j v_{j(alpha-gamma)} weights every v_{i gamma}
        s = np.sum(gam * vr, axis=0)
        burgers[(slice(None),) + out] = np.sum(s * vg, axis=tuple(range(1, d + 1)))
        if form == "corrected":
            p = np.sum(rest * vg, axis=0)       # sum_j (alpha-gamma)_j v_{j gamma}
            q = s                                # sum_k gamma_k v_{k(alpha-gamma)}
        else:
            p = np.sum(gam * vg, axis=0)        # sum_j gamma_j v_{j gamma}
            q = np.sum(rest * vr, axis=0)       # sum_k (alpha-gamma)_k v_{k(alpha-gamma)}
        numer[out] = np.sum(p * q)
    burgers *= TWO_PI * 1j / l
    k = lattice(d, m)
    leray = (TWO_PI * 1j / l) * k * (numer * _inverse_radius_squared(d, m))
    return burgers, leray


def _terms(field, method, form):
    _check_form(form)
    if method == "fft":
        return _fft_terms(field, form)
    if method == "direct":
        return _direct_terms(field, form)
    raise ParameterError(f"method must be 'fft' or 'direct', got {method!r}")


def burgers_term(field: ModeField, method: str = "fft") -> ModeField:
    """w_{i alpha} = sum_j sum_gamma (2 pi i gamma_j / l) v_{j(alpha-gamma)} v_{i gamma}."""
    _warn_if_compressible(field)
    b, _ = _terms(field, method, "corrected")
    return field.with_amplitudes(b, divergence_free=False)


def leray_term(field: ModeField, method: str = "fft", form: str = "corrected") -> ModeField:
    """Pressure-gradient term; exactly zero at alpha = 0."""
    _warn_if_compressible(field)
    _, p = _terms(field, method, form)
    return field.with_amplitudes(p, divergence_free=False)


@dataclass
class RhsTerms:
    burgers: ModeField
    leray: ModeField
    total: ModeField
    r: float


def _r_of(params) -> float:
    if isinstance(params, ScalingParams):
        return params.r
    if isinstance(params, Real) and params >= 0:
        return float(params)
    raise ParameterError(f"expected ScalingParams or a nonnegative r, got {params!r}")


def rhs(field: ModeField, params, method: str = "fft", form: str = "corrected") -> RhsTerms:
    """Nonlinear right-hand side ``-r burgers + r leray`` (viscous part excluded).

    ``params`` is a :class:`ScalingParams` or a bare scaling factor ``r``.
    """
    r = _r_of(params)
    _warn_if_compressible(field)
    b, p = _terms(field, method, form)
    total = -r * b + r * p
    return RhsTerms(field.with_amplitudes(b, divergence_free=False),
                    field.with_amplitudes(p, divergence_free=False),
                    field.with_amplitudes(total, divergence_free=field.divergence_free),
                    r)


def scaling_identity_check(field: ModeField, r: float, method: str = "fft") -> float:
    """Max relative deviation between rhs at scaling r and r times rhs at scaling 1."""
    if not r > 0:
        raise ParameterError("r must be positive")
    a = rhs(field, r, method).total.amplitudes
    b = r * rhs(field, 1.0, method).total.amplitudes
    scale = np.max(np.abs(a))
    if scale == 0:
        return float(np.max(np.abs(b)))
    return float(np.max(np.abs(a - b)) / scale)


# -- e-matrix -----------------------------------------------------------------

def e_matrix(field: ModeField, params, alpha, gamma, form: str = "corrected") -> np.ndarray:
    """D x D block e_{ij alpha gamma} with sum_j sum_gamma e v_{j gamma} = rhs total at alpha."""
    _check_form(form)
    r = _r_of(params)
    d, m, l = field.dimension, field.truncation, field.torus_diameter
    alpha = np.array(check_index(alpha, d, m))
    gamma = np.array(check_index(gamma, d, m))
    rest = alpha - gamma
    block = np.zeros((d, d), dtype=complex)
    if np.any(np.abs(rest) > m):
        return block
    vr = field.mode(rest)
    block += -r * (TWO_PI * 1j / l) * np.outer(vr, rest)
    a2 = float(alpha @ alpha)
    if a2 > 0:
        if form == "corrected":
            block += r * (TWO_PI * 1j / l) * np.outer(alpha, rest) * (gamma @ vr) / a2
        else:
            block += r * (TWO_PI * 1j / l) * np.outer(alpha, gamma) * (rest @ vr) / a2
    return block


def e_contract(field: ModeField, params, alpha, form: str = "corrected") -> np.ndarray:
    """sum_j sum_gamma e_{ij alpha gamma} v_{j gamma} (the recomposition of rhs at alpha)."""
    m = field.truncation
    out = np.zeros(field.dimension, dtype=complex)
    for gamma in product(range(-m, m + 1), repeat=field.dimension):
        out += e_matrix(field, params, alpha, gamma, form) @ field.mode(gamma)
    return out


def e_matrix_dense(field: ModeField, params, form: str = "corrected") -> np.ndarray:
    """Full matrix E[(i, alpha), (j, gamma)], flattened in C order of the amplitude array."""
    d, m = field.dimension, field.truncation
    points = list(product(range(-m, m + 1), repeat=d))
    n = len(points)
    big = np.zeros((d, n, d, n), dtype=complex)
    for a_i, alpha in enumerate(points):
        for g_i, gamma in enumerate(points):
            big[:, a_i, :, g_i] = e_matrix(field, params, alpha, gamma, form)
    return big.reshape(d * n, d * n)


def write_term_spectra(terms: RhsTerms, path) -> None:
    """Debug dump of per-term shell spectra."""
    rows = {}
    for name in ("burgers", "leray", "total"):
        radii, smax, sl2 = shell_spectrum(getattr(terms, name))
        rows[name] = (radii, smax, sl2)
    radii = rows["total"][0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shell_radius", "burgers_max", "burgers_l2", "leray_max", "leray_l2",
                    "total_max", "total_l2"])
        for s in range(len(radii)):
            row = [radii[s]]
            for name in ("burgers", "leray", "total"):
                row += [rows[name][1][s], rows[name][2][s]]
            w.writerow([repr(float(x)) for x in row])
