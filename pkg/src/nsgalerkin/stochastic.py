"""White-noise forcing of the Trotter scheme and the high-frequency breakdown test.

The noise path is W(t) = sum_n N_n K_n(t) with K_n the antiderivative of an
orthonormal family k_n on [0, T]; the N_n are drawn once per trajectory.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy.special import eval_legendre

from .errors import ParameterError
from .params import ScalingParams
from .quadrature import gauss_legendre
from .spectral_core import (ModeField, enforce_reality, fit_order, high_shell_fraction, leray_project,
                            radius_squared, shell_spectrum)
from .trotter import RunOptions, Trajectory, run

BASES = ("legendre",)


def legendre_basis(n: int, t, T: float) -> np.ndarray:
    """k_n(t) = sqrt((2n - 1)/T) P_{n-1}(2t/T - 1), n >= 1; orthonormal on [0, T]."""
    return np.sqrt((2 * n - 1) / T) * eval_legendre(n - 1, 2 * np.asarray(t, float) / T - 1)


def basis_antiderivative(n_terms: int, t: float, T: float) -> np.ndarray:
    """K_n(t) = int_0^t k_n(s) ds for n = 1..n_terms (Gauss-Legendre, exact for these degrees)."""
    if t == 0:
        return np.zeros(n_terms)
    x, w = gauss_legendre(max(n_terms, 1), 0.0, t)
    n = np.arange(1, n_terms + 1)[:, None]
    return np.sum(legendre_basis(n, x[None, :], T) * w[None, :], axis=1)


def gram_matrix(n_terms: int, T: float) -> np.ndarray:
    x, w = gauss_legendre(n_terms + 1, 0.0, T)
    k = legendre_basis(np.arange(1, n_terms + 1)[:, None], x[None, :], T)
    return (k * w) @ k.T


def lowest_shell(dimension: int, truncation: int) -> tuple:
    r2 = radius_squared(dimension, truncation)
    k = np.argwhere(r2 == 1) - truncation
    return tuple(tuple(int(i) for i in row) for row in k)


@dataclass
class NoiseModel:
    T: float
    n_terms: int = 32
    amplitude: float = 1.0
    mode_footprint: tuple | None = None   # None: lowest nonzero shell
    seed: int = 0
    basis: str = "legendre"
    orthonormal: bool = True

    def __post_init__(self):
        if self.basis not in BASES:
            raise ParameterError(f"basis must be one of {BASES}")
        if self.n_terms < 1 or not self.T > 0 or self.amplitude < 0:
            raise ParameterError("need n_terms >= 1, T > 0 and amplitude >= 0")
        if self.mode_footprint is not None:
            if len(self.mode_footprint) == 0:
                raise ParameterError("mode_footprint is empty")
            self.mode_footprint = tuple(tuple(int(a) for a in alpha) for alpha in self.mode_footprint)
        if self.orthonormal:
            defect = float(np.max(np.abs(gram_matrix(self.n_terms, self.T) - np.eye(self.n_terms))))
            if defect > 1e-8:
                raise ParameterError(f"basis orthonormality defect {defect:.2e} > 1e-8")

    def footprint(self, dimension: int, truncation: int) -> tuple:
        fp = self.mode_footprint or lowest_shell(dimension, truncation)
        for alpha in fp:
            if len(alpha) != dimension or max(abs(a) for a in alpha) > truncation:
                raise ParameterError(f"footprint mode {alpha} is off the lattice")
        return fp

    def draws(self, dimension: int, truncation: int) -> np.ndarray:
        """Complex standard normals N_n of shape (n_terms, footprint size, D), E|N|^2 = 1."""
        rng = np.random.default_rng(self.seed)
        shape = (self.n_terms, len(self.footprint(dimension, truncation)), dimension)
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@lru_cache(maxsize=8)
def _antiderivative_table(n_terms, T, dt, steps):
    return np.stack([basis_antiderivative(n_terms, k * dt, T) for k in range(steps + 1)])


def noise_increment(model: NoiseModel, m: int, dt: float, draws: np.ndarray, like: ModeField) -> np.ndarray:
    """Amplitude array of W(m dt) - W((m-1) dt) on the footprint, real and divergence-free."""
    if m < 1:
        raise ParameterError("step index starts at 1")
    d, M = like.dimension, like.truncation
    fp = model.footprint(d, M)
    if draws.shape != (model.n_terms, len(fp), d):
        raise ParameterError(f"draws must have shape {(model.n_terms, len(fp), d)}")
    out = np.zeros_like(like.amplitudes)
    if model.amplitude == 0:
        return out
    dk = basis_antiderivative(model.n_terms, m * dt, model.T) - basis_antiderivative(model.n_terms, (m - 1) * dt, model.T)
    inc = model.amplitude * np.tensordot(dk, draws, axes=(0, 0))   # (footprint, D)
    for alpha, vec in zip(fp, inc):
        out[(slice(None),) + tuple(a + M for a in alpha)] += vec
    f = enforce_reality(like.with_amplitudes(out))
    return leray_project(f).amplitudes


def path_increments(model: NoiseModel, dt: float, steps: int, draws: np.ndarray) -> np.ndarray:
    """Scalar-channel increments amplitude * sum_n N_n dK_n for draws of shape (n_terms,)."""
    table = _antiderivative_table(model.n_terms, model.T, dt, steps)
    return model.amplitude * (np.diff(table, axis=0) @ draws)


@dataclass
class BreakdownReport:
    forced_high_fraction: float
    unforced_high_fraction: float
    forced_order: float | None
    unforced_order: float | None

    @property
    def fraction_higher(self) -> bool:
        return self.forced_high_fraction > self.unforced_high_fraction

    @property
    def order_lower(self) -> bool:
        if self.forced_order is None or self.unforced_order is None:
            return False
        return self.forced_order <= self.unforced_order


def _interior_order(field: ModeField):
    radii, smax, _ = shell_spectrum(field, field.truncation)
    return fit_order(radii, smax)


def run_forced(initial: ModeField, params: ScalingParams, T: float, dt: float, model: NoiseModel,
               options: RunOptions | None = None, unforced: Trajectory | None = None):
    """Forced run plus the paired unforced comparison at T.

    Returns ``(forced, unforced, BreakdownReport)``; a precomputed unforced
    trajectory may be passed in.
    """
    opts = options or RunOptions()
    draws = model.draws(initial.dimension, initial.truncation)
    def noise(step, h):
        return noise_increment(model, step, h, draws, initial)

    forced = run(initial, params, T, dt, opts, forcing=noise if model.amplitude > 0 else None)
    if unforced is None:
        unforced = run(initial, params, T, dt, opts)
    a, b = forced.final, unforced.final
    report = BreakdownReport(high_shell_fraction(a), high_shell_fraction(b),
                             _interior_order(a), _interior_order(b))
    return forced, unforced, report


@dataclass
class BatchSummary:
    seeds: list
    reports: list = dc_field(default_factory=list)

    @property
    def share_fraction_higher(self) -> float:
        return float(np.mean([r.fraction_higher for r in self.reports]))

    @property
    def share_order_lower(self) -> float:
        return float(np.mean([r.order_lower for r in self.reports]))

    def passes(self, level: float = 0.8) -> bool:
        return self.share_fraction_higher >= level and self.share_order_lower >= level

    def to_json(self) -> str:
        return json.dumps({"seeds": self.seeds,
                           "share_fraction_higher": self.share_fraction_higher,
                           "share_order_lower": self.share_order_lower,
                           "pairs": [asdict(r) for r in self.reports]}, indent=2, sort_keys=True)


def run_batch(data_factory, params: ScalingParams, T: float, dt: float, model: NoiseModel, seeds,
              options: RunOptions | None = None) -> BatchSummary:
    """Paired Monte Carlo: for each seed, data_factory(seed) is run forced (noise seed = seed) and unforced."""
    summary = BatchSummary(list(seeds))
    for seed in summary.seeds:
        data = data_factory(seed)
        m = NoiseModel(**{**asdict(model), "seed": seed})
        _, _, rep = run_forced(data, params, T, dt, m, options)
        summary.reports.append(rep)
    return summary


def write_seed_csv(traj: Trajectory, path, max_order: int = 5) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "decay_order", "high_shell_fraction"] + [f"h{m}" for m in range(max_order + 1)])
        for t, snap, rep in zip(traj.times, traj.snapshots, traj.norm_reports):
            order = _interior_order(snap)
            w.writerow([repr(t), "" if order is None else repr(order), repr(high_shell_fraction(snap))]
                       + [repr(rep.per_order[m]) for m in range(max_order + 1)])
