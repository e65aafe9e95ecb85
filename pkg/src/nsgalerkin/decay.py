"""Decay-envelope bookkeeping for the quadratic terms.

The convolution constant bounds the Burgers and pressure terms of a field
inside envelope (C, D+2) by c C^2 / (1 + |alpha|^{D+3}).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field as dc_field
from itertools import combinations_with_replacement
from math import fsum, pi, sqrt

import numpy as np

from .errors import ParameterError, UndefinedFitError
from .nse_rhs import rhs
from .quadrature import sphere_area
from .spectral_core import ModeField, fit_decay_envelope, radius


def _beta_grid(d, m):
    axes = np.meshgrid(*[np.arange(-m, m + 1)] * d, indexing="ij")
    beta = np.stack([a.ravel() for a in axes]).astype(float)
    nb = np.sqrt(np.sum(beta ** 2, axis=0))
    return beta, nb, nb / (1 + nb ** (d + 2))


def decay_constant_at(alpha, dimension: int, truncation: int, _grid=None) -> float:
    """(1 + |alpha|^{D+3}) 2 pi (D + D^2) sum_beta |beta| / ((1+|alpha-beta|^{D+2})(1+|beta|^{D+2})).

    The sum is correctly rounded (fsum), so the value is exactly invariant
    under coordinate permutations and sign flips of alpha.
    """
    d, m = dimension, truncation
    beta, _, weight = _grid or _beta_grid(d, m)
    a = np.asarray(alpha, float).reshape(d, 1)
    diff = np.sqrt(np.sum((a - beta) ** 2, axis=0))
    terms = weight / (1 + diff ** (d + 2))
    na = sqrt(float(np.sum(a ** 2)))
    return (1 + na ** (d + 3)) * 2 * pi * (d + d * d) * fsum(terms.tolist())


@dataclass
class DecayConstantReport:
    c: float
    argmax: tuple
    tail_bound: float
    dimension: int
    truncation: int

    @property
    def c_with_tail(self) -> float:
        return self.c + self.tail_bound

    def to_json(self) -> str:
        d = asdict(self)
        d["c_with_tail"] = self.c_with_tail
        return json.dumps(d, indent=2, sort_keys=True)


def convolution_decay_constant(dimension: int, truncation: int) -> DecayConstantReport:
    """Max over the truncated lattice of :func:`decay_constant_at`.

    By symmetry only 0 <= alpha_1 <= ... <= alpha_D is scanned.  The tail of
    the beta-sum outside the cube is bounded by comparison with
    int_{|x| >= M + 1 - sqrt(D)/2} |x|^{-(D+1)} dx = |S^{D-1}| / (M + 1 - sqrt(D)/2),
    using 1/(1+|alpha-beta|^{D+2}) <= 1.
    """
    d, m = dimension, truncation
    if d not in (2, 3):
        raise ParameterError("dimension must be 2 or 3")
    if m < 4:
        raise ParameterError("truncation must be >= 4")
    grid = _beta_grid(d, m)
    best, arg = -1.0, None
    for alpha in combinations_with_replacement(range(m + 1), d):
        v = decay_constant_at(alpha, d, m, grid)
        if v > best:
            best, arg = v, alpha
    na = sqrt(sum(a * a for a in arg))
    tail = (1 + na ** (d + 3)) * 2 * pi * (d + d * d) * sphere_area(d) / (m + 1 - sqrt(d) / 2)
    return DecayConstantReport(best, tuple(int(a) for a in arg), tail, d, m)


@dataclass
class EnvelopeMapCheck:
    worst_ratio: float       # max over interior modes of |out| (1+|alpha|^{D+3}) / (c C^2)
    worst_mode: tuple
    holds: bool
    excluded_modes: int


def check_quadratic_envelope(field: ModeField, c: float, C: float, *, interior_margin: int = 1,
                             method: str = "fft") -> EnvelopeMapCheck:
    """Does the Burgers plus pressure output lie inside envelope (c C^2, D+3)?

    Modes with max_j |alpha_j| > M - interior_margin are excluded.
    """
    d, m = field.dimension, field.truncation
    terms = rhs(field, 1.0, method)
    out = np.maximum(np.abs(terms.burgers.amplitudes), np.abs(terms.leray.amplitudes))
    out = np.max(out, axis=0)
    r = radius(d, m)
    k = field.wavevectors
    interior = np.max(np.abs(k), axis=0) <= m - interior_margin
    ratio = np.where(interior, out * (1 + r ** (d + 3)) / (c * C * C), 0.0)
    idx = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    worst = float(ratio[idx])
    return EnvelopeMapCheck(worst, tuple(int(i) - m for i in idx), worst <= 1.0,
                            int(np.count_nonzero(~interior)))


@dataclass
class EnvelopeRow:
    time: float
    fitted_order: float | None
    tightest_C: float
    envelope_ok: bool


@dataclass
class PreservationReport:
    p: float
    tolerance: float
    rows: list = dc_field(default_factory=list)
    order_ok: bool = True
    constant_ok: bool = True
    max_radius: float | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "fitted_order", "tightest_C", "envelope_ok"])
            for row in self.rows:
                w.writerow([repr(row.time), "" if row.fitted_order is None else repr(row.fitted_order),
                            repr(row.tightest_C), str(row.envelope_ok).lower()])


def verify_envelope_preservation(traj, p: float | None = None, tolerance: float = 0.25,
                                 horizon_C=None, max_radius: float | None = None) -> PreservationReport:
    """Per-snapshot decay fit at exponent p (default D + 2).

    Shells beyond radius M are incomplete on the cube lattice and are
    excluded unless ``max_radius`` says otherwise.  ``horizon_C`` is a
    callable t -> allowed constant (or a number); None skips that check.
    """
    if len(traj.snapshots) == 0:
        raise ParameterError("empty trajectory")
    first = traj.snapshots[0]
    p = first.dimension + 2 if p is None else p
    max_radius = first.truncation if max_radius is None else max_radius
    rep = PreservationReport(p, tolerance, max_radius=max_radius)
    for t, snap in zip(traj.times, traj.snapshots):
        try:
            fit = fit_decay_envelope(snap, p, max_radius)
        except UndefinedFitError:
            rep.rows.append(EnvelopeRow(t, None, 0.0, True))
            continue
        ok_order = fit.fitted_order is None or fit.fitted_order >= p - tolerance
        if horizon_C is None:
            ok_c = True
        else:
            limit = horizon_C(t) if callable(horizon_C) else horizon_C
            ok_c = fit.tightest_constant <= limit
        rep.order_ok &= ok_order
        rep.constant_ok &= ok_c
        rep.rows.append(EnvelopeRow(t, fit.fitted_order, fit.tightest_constant, ok_order and ok_c))
    return rep


def increment_geometric_bound(increment_norms, rho: float, r: float, c: float, C: float,
                              slack: float = 0.1):
    """q = rho r c C^2 and whether every successive increment ratio is <= q (1 + slack)."""
    inc = list(increment_norms)
    if len(inc) < 3:
        raise ParameterError("need at least 3 increments")
    q = rho * r * c * C * C
    ratios = [inc[k + 1] / inc[k] if inc[k] > 0 else 0.0 for k in range(len(inc) - 1)
              if inc[k] > 0 or inc[k + 1] == 0]
    if any(inc[k] == 0 and inc[k + 1] > 0 for k in range(len(inc) - 1)):
        return q, False
    return q, all(x <= q * (1 + slack) for x in ratios)
