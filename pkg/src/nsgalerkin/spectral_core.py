"""Truncated Fourier lattice, mode fields, norms and decay envelopes.

A field on the torus of diameter ``l`` is stored as a dense complex array of
shape ``(D, 2M+1, ..., 2M+1)``; the amplitude of component ``i`` at lattice
index ``alpha`` lives at ``amplitudes[i][alpha + M]``.  The represented
physical field is ``sum_alpha v_alpha exp(2 pi i alpha.x / l)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ParameterError, UndefinedFitError

# amplitudes below either floor are treated as exact zeros by the decay fit;
# the relative one discards roundoff residue such as a drifting zero mode
FLUSH_FLOOR = 1e-300
RELATIVE_FLOOR = 1e-13
# checkpoint files omit modes whose components are all below this
CHECKPOINT_FLOOR = 1e-14
DIVERGENCE_RTOL = 1e-12


@lru_cache(maxsize=32)
def lattice(dimension: int, truncation: int) -> np.ndarray:
    """Integer wavevectors, shape ``(D, 2M+1, ..., 2M+1)`` (read-only)."""
    axis = np.arange(-truncation, truncation + 1)
    grid = np.stack(np.meshgrid(*([axis] * dimension), indexing="ij"))
    grid.setflags(write=False)
    return grid


@lru_cache(maxsize=32)
def radius_squared(dimension: int, truncation: int) -> np.ndarray:
    r2 = np.sum(lattice(dimension, truncation) ** 2, axis=0)
    r2.setflags(write=False)
    return r2


def radius(dimension: int, truncation: int) -> np.ndarray:
    return np.sqrt(radius_squared(dimension, truncation))


def check_index(alpha: Sequence[int], dimension: int, truncation: int) -> tuple:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != dimension:
        raise ParameterError(f"lattice index {alpha} has wrong length for D={dimension}")
    if any(abs(a) > truncation for a in alpha):
        raise ParameterError(f"lattice index {alpha} outside truncation M={truncation}")
    return alpha


@dataclass(frozen=True)
class ModeField:
    """Truncated Fourier amplitudes of a D-component velocity field."""

    amplitudes: np.ndarray
    torus_diameter: float = 1.0
    divergence_free: bool = False

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.ndim < 3:
            raise ParameterError("amplitudes must have shape (D, 2M+1, ..., 2M+1) with D >= 2")
        d = a.shape[0]
        if a.ndim != d + 1:
            raise ParameterError(f"amplitude array rank {a.ndim} does not match D={d}")
        n = a.shape[1]
        if any(s != n for s in a.shape[1:]) or n % 2 == 0 or n < 3:
            raise ParameterError(f"lattice axes must all have equal odd length >= 3, got {a.shape[1:]}")
        if not self.torus_diameter > 0:
            raise ParameterError("torus_diameter must be positive")
        object.__setattr__(self, "amplitudes", a)

    @property
    def dimension(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def truncation(self) -> int:
        return (self.amplitudes.shape[1] - 1) // 2

    @property
    def wavevectors(self) -> np.ndarray:
        return lattice(self.dimension, self.truncation)

    def mode(self, alpha: Sequence[int]) -> np.ndarray:
        alpha = check_index(alpha, self.dimension, self.truncation)
        idx = tuple(a + self.truncation for a in alpha)
        return self.amplitudes[(slice(None),) + idx].copy()

    def with_amplitudes(self, amplitudes, divergence_free=None) -> "ModeField":
        flag = self.divergence_free if divergence_free is None else divergence_free
        return replace(self, amplitudes=amplitudes, divergence_free=flag)

    def copy(self) -> "ModeField":
        return self.with_amplitudes(self.amplitudes.copy())

    def __add__(self, other: "ModeField") -> "ModeField":
        _check_compatible(self, other)
        return self.with_amplitudes(self.amplitudes + other.amplitudes,
                                    divergence_free=self.divergence_free and other.divergence_free)

    def __sub__(self, other: "ModeField") -> "ModeField":
        _check_compatible(self, other)
        return self.with_amplitudes(self.amplitudes - other.amplitudes,
                                    divergence_free=self.divergence_free and other.divergence_free)

    def scaled(self, s: complex) -> "ModeField":
        return self.with_amplitudes(self.amplitudes * s)


def _check_compatible(a: ModeField, b: ModeField) -> None:
    if a.amplitudes.shape != b.amplitudes.shape or a.torus_diameter != b.torus_diameter:
        raise ParameterError("fields live on different lattices")


def zeros(dimension: int, truncation: int, torus_diameter: float = 1.0) -> ModeField:
    if dimension < 2 or truncation < 1:
        raise ParameterError("need D >= 2 and M >= 1")
    shape = (dimension,) + (2 * truncation + 1,) * dimension
    return ModeField(np.zeros(shape, dtype=complex), torus_diameter, divergence_free=True)


def single_mode(dimension, truncation, alpha, vector, torus_diameter=1.0, conjugate_pair=True) -> ModeField:
    """Field with one mode (plus its conjugate partner when ``conjugate_pair``)."""
    alpha = check_index(alpha, dimension, truncation)
    a = zeros(dimension, truncation, torus_diameter).amplitudes
    idx = tuple(x + truncation for x in alpha)
    a[(slice(None),) + idx] = np.asarray(vector, dtype=complex)
    if conjugate_pair and any(alpha):
        neg = tuple(-x + truncation for x in alpha)
        a[(slice(None),) + neg] = np.conj(np.asarray(vector, dtype=complex))
    return ModeField(a, torus_diameter)


# -- symmetry -----------------------------------------------------------------

def _reflect(a: np.ndarray) -> np.ndarray:
    """Array indexed at -alpha."""
    d = a.shape[0]
    return a[(slice(None),) + (slice(None, None, -1),) * d]


def reality_defect(field: ModeField) -> float:
    """max |v_{-alpha} - conj(v_alpha)|; zero for a real physical field."""
    a = field.amplitudes
    return float(np.max(np.abs(_reflect(a) - np.conj(a))))


def enforce_reality(field: ModeField) -> ModeField:
    a = field.amplitudes
    return field.with_amplitudes(0.5 * (a + np.conj(_reflect(a))))


def divergence(field: ModeField) -> np.ndarray:
    """sum_j alpha_j v_{j alpha} at every lattice point."""
    return np.sum(field.wavevectors * field.amplitudes, axis=0)


def divergence_defect(field: ModeField) -> float:
    """Largest |alpha . v_alpha| relative to the largest |alpha| |v_alpha|."""
    scale = np.max(np.sqrt(radius_squared(field.dimension, field.truncation))
                   * np.sqrt(np.sum(np.abs(field.amplitudes) ** 2, axis=0)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(divergence(field))) / scale)


def is_divergence_free(field: ModeField, rtol: float = DIVERGENCE_RTOL) -> bool:
    return divergence_defect(field) <= rtol


# -- norms --------------------------------------------------------------------

def sobolev_weight(r2, m: int) -> np.ndarray:
    """|alpha|^{2m} from |alpha|^2, with the origin weighted 0."""
    r2 = np.asarray(r2, dtype=float)
    return np.where(r2 > 0, r2 ** m, 0.0)


def dual_sobolev_norm(field: ModeField, m: int) -> float:
    """sqrt(sum_i sum_alpha |v_{i alpha}|^2 (1 + |alpha|^{2m})) on the truncated lattice.

    |alpha|^{2m} is taken as 0 at alpha = 0 for every m, including m = 0, so
    the norms are nondecreasing in m.
    """
    if m < 0:
        raise ParameterError(f"Sobolev order must be >= 0, got {m}")
    weight = 1.0 + sobolev_weight(radius_squared(field.dimension, field.truncation), m)
    return float(np.sqrt(np.sum(np.abs(field.amplitudes) ** 2 * weight)))


def sup_mode(field: ModeField) -> float:
    return float(np.max(np.abs(field.amplitudes)))


def l2_modes(field: ModeField) -> float:
    """Euclidean norm of all mode amplitudes (Parseval L2 norm up to l^{D/2})."""
    return float(np.sqrt(np.sum(np.abs(field.amplitudes) ** 2)))


@dataclass
class NormReport:
    """h^m proxy norms per order plus the sup over modes (never blended)."""

    per_order: dict
    sup_mode: float
    label: str = "h^m proxy"


def norm_report(field: ModeField, max_order: int = 5) -> NormReport:
    return NormReport({m: dual_sobolev_norm(field, m) for m in range(max_order + 1)}, sup_mode(field))


# -- projection ---------------------------------------------------------------

def leray_project(field: ModeField) -> ModeField:
    """v_alpha -> v_alpha - alpha (alpha . v_alpha) / |alpha|^2; the zero mode is kept."""
    k = field.wavevectors
    r2 = radius_squared(field.dimension, field.truncation)
    inv = np.zeros(r2.shape)
    np.divide(1.0, r2, out=inv, where=r2 > 0)
    div = np.sum(k * field.amplitudes, axis=0)
    return field.with_amplitudes(field.amplitudes - k * (div * inv), divergence_free=True)


# -- decay envelopes ----------------------------------------------------------

@dataclass(frozen=True)
class DecayEnvelope:
    """|v_{i alpha}| <= constant / (1 + |alpha|^order)."""

    constant: float
    order: float

    def __post_init__(self):
        if not (self.constant > 0 and self.order > 0):
            raise ParameterError(f"envelope needs C > 0 and p > 0, got C={self.constant}, p={self.order}")

    def bound(self, r: np.ndarray) -> np.ndarray:
        return self.constant / (1.0 + np.asarray(r, dtype=float) ** self.order)

    def truncation_tail(self, truncation: int) -> float:
        return self.constant / (1.0 + truncation ** self.order)

    def holds(self, field: ModeField, rtol: float = 1e-12) -> bool:
        r = radius(field.dimension, field.truncation)
        return bool(np.all(np.abs(field.amplitudes) <= self.bound(r) * (1 + rtol)))


@dataclass
class DecayFit:
    envelope: DecayEnvelope | None
    tightest_constant: float
    fitted_order: float | None
    attained_at: tuple
    n_shells: int
    truncation_tail: float


def shell_spectrum(field: ModeField, max_radius: float | None = None):
    """Per exact shell |alpha|: radius, max amplitude and l2 amplitude.

    Returns three arrays sorted by radius.
    """
    r2 = radius_squared(field.dimension, field.truncation).ravel()
    amp = np.abs(field.amplitudes).reshape(field.dimension, -1)
    amax = amp.max(axis=0)
    asq = np.sum(amp ** 2, axis=0)
    keys, inv = np.unique(r2, return_inverse=True)
    shell_max = np.zeros(len(keys))
    np.maximum.at(shell_max, inv, amax)
    shell_l2 = np.sqrt(np.bincount(inv, weights=asq, minlength=len(keys)))
    radii = np.sqrt(keys.astype(float))
    if max_radius is not None:
        keep = radii <= max_radius + 1e-12
        radii, shell_max, shell_l2 = radii[keep], shell_max[keep], shell_l2[keep]
    return radii, shell_max, shell_l2


def fit_order(radii: np.ndarray, amplitudes: np.ndarray) -> float | None:
    """Least-squares decay order of log(amp) = log C - log(1 + r^p) over nonzero shells."""
    floor = max(FLUSH_FLOOR, RELATIVE_FLOOR * float(np.max(amplitudes, initial=0.0)))
    amplitudes = np.where(amplitudes < floor, 0.0, amplitudes)
    keep = amplitudes > 0
    x, y = radii[keep], np.log(amplitudes[keep])
    if np.count_nonzero(x > 0) < 1 or len(x) < 2:
        return None
    logx = np.full(x.shape, -np.inf)
    np.log(x, out=logx, where=x > 0)

    def sse(p):
        g = np.logaddexp(0.0, p * logx)
        resid = y + g
        return float(np.sum((resid - resid.mean()) ** 2))

    res = minimize_scalar(sse, bounds=(1e-3, 80.0), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def fit_decay_envelope(field: ModeField, p_target: float, max_radius: float | None = None) -> DecayFit:
    """Tightest constant at exponent ``p_target`` plus a fitted decay order.

    The fitted order is ``None`` when fewer than two nonzero shells exist
    (e.g. a single mode at the origin).
    """
    amp = np.abs(field.amplitudes)
    amp = np.where(amp < FLUSH_FLOOR, 0.0, amp)
    if not np.any(amp > 0):
        raise UndefinedFitError("decay fit of an all-zero field is undefined")
    r = radius(field.dimension, field.truncation)
    if max_radius is not None:
        amp = np.where(r <= max_radius + 1e-12, amp, 0.0)
    weighted = amp * (1.0 + r ** p_target)
    flat = int(np.argmax(weighted))
    idx = np.unravel_index(flat, weighted.shape)
    c = float(weighted[idx])
    alpha = tuple(int(i) - field.truncation for i in idx[1:])
    radii, smax, _ = shell_spectrum(field, max_radius)
    order = fit_order(radii, smax)
    envelope = DecayEnvelope(c, p_target) if c > 0 else None
    tail = envelope.truncation_tail(field.truncation) if envelope else 0.0
    return DecayFit(envelope, c, order, alpha, int(np.count_nonzero(smax > FLUSH_FLOOR)), tail)


def high_shell_fraction(field: ModeField, fraction: float = 1.0 / 3.0) -> float:
    """Energy share of modes with |alpha| above (1 - fraction) * M."""
    r = radius(field.dimension, field.truncation)
    e = np.sum(np.abs(field.amplitudes) ** 2, axis=0)
    total = e.sum()
    if total == 0:
        return 0.0
    return float(e[r > (1.0 - fraction) * field.truncation].sum() / total)


# -- data synthesis -----------------------------------------------------------

def taylor_green(truncation: int, amplitude: float = 1.0, dimension: int = 3,
                 torus_diameter: float = 1.0) -> ModeField:
    """Taylor-Green vortex: all modes on the single shell |alpha| = sqrt(D).

    D=3: u = A (sin x cos y cos z, -cos x sin y cos z, 0) with x = 2 pi x1 / l etc.
    D=2: u = A (sin x cos y, -cos x sin y).
    """
    if dimension not in (2, 3):
        raise ParameterError("Taylor-Green profile is defined for D = 2 or 3")
    f = zeros(dimension, truncation, torus_diameter)
    a = f.amplitudes
    M = truncation
    signs = np.array(np.meshgrid(*([[-1, 1]] * dimension), indexing="ij")).reshape(dimension, -1).T
    scale = amplitude / 2 ** dimension
    for s in signs:
        idx = tuple(int(x) + M for x in s)
        # sin -> -i s/2, cos -> 1/2 per axis
        a[(0,) + idx] = -1j * s[0] * scale
        a[(1,) + idx] = 1j * s[1] * scale
    return ModeField(a, torus_diameter, divergence_free=True)


def synthesize_data(profile, seed: int = 0, *, dimension: int = 3, truncation: int = 8,
                    torus_diameter: float = 1.0, amplitude: float = 1.0) -> ModeField:
    """Deterministic real, divergence-free, zero-mean data.

    ``profile`` is a :class:`DecayEnvelope` (random data inside it), a
    ``(C, p)`` pair, or the name ``"taylor_green"``.
    """
    if isinstance(profile, str):
        if profile == "taylor_green":
            return taylor_green(truncation, amplitude, dimension, torus_diameter)
        raise ParameterError(f"unknown profile {profile!r}")
    if not isinstance(profile, DecayEnvelope):
        try:
            c, p = profile
        except (TypeError, ValueError):
            raise ParameterError(f"profile must be an envelope, (C, p) or a name, got {profile!r}")
        profile = DecayEnvelope(float(c), float(p))
    rng = np.random.default_rng(seed)
    f = zeros(dimension, truncation, torus_diameter)
    shape = f.amplitudes.shape
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    norm = np.sqrt(np.sum(np.abs(g) ** 2, axis=0))
    norm[norm == 0] = 1.0
    mag = rng.uniform(0.25, 1.0, size=shape[1:])
    r = radius(dimension, truncation)
    # each vector has Euclidean length <= envelope; projection and
    # symmetrisation cannot increase it, so every component stays inside
    a = g / norm * mag * profile.bound(r)
    out = enforce_reality(leray_project(f.with_amplitudes(a)))
    a = out.amplitudes.copy()
    a[(slice(None),) + (truncation,) * dimension] = 0.0
    return out.with_amplitudes(a, divergence_free=True)


def scale_to_norm(field: ModeField, m: int, target: float) -> ModeField:
    n = dual_sobolev_norm(field, m)
    if n == 0:
        raise ParameterError("cannot rescale a zero field")
    return field.scaled(target / n)


# -- I/O ----------------------------------------------------------------------

def to_json_dict(field: ModeField) -> dict:
    a = field.amplitudes
    M = field.truncation
    keep = np.any(np.abs(a) >= CHECKPOINT_FLOOR, axis=0)
    modes = []
    for idx in zip(*np.nonzero(keep)):
        alpha = [int(i) - M for i in idx]
        comps = [[float(z.real), float(z.imag)] for z in a[(slice(None),) + tuple(idx)]]
        modes.append([alpha, comps])
    return {
        "dimension": field.dimension,
        "truncation": M,
        "torus_diameter": field.torus_diameter,
        "divergence_free": field.divergence_free,
        "modes": modes,
    }


def from_json_dict(data: dict) -> ModeField:
    try:
        d, m, l = int(data["dimension"]), int(data["truncation"]), float(data["torus_diameter"])
        f = zeros(d, m, l)
        a = f.amplitudes
        for alpha, comps in data["modes"]:
            alpha = check_index(alpha, d, m)
            idx = tuple(x + m for x in alpha)
            a[(slice(None),) + idx] = [complex(re, im) for re, im in comps]
    except KeyError as exc:
        raise ParameterError(f"checkpoint missing key {exc}") from None
    return ModeField(a, l, bool(data.get("divergence_free", False)))


def save_checkpoint(field: ModeField, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_json_dict(field), fh)


def load_checkpoint(path) -> ModeField:
    with open(path) as fh:
        return from_json_dict(json.load(fh))


def write_shell_csv(field: ModeField, path) -> None:
    radii, smax, sl2 = shell_spectrum(field)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shell_radius", "max_amp", "l2_amp"])
        for row in zip(radii, smax, sl2):
            w.writerow([repr(float(x)) for x in row])
