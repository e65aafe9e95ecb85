"""Trotter-product time stepping of the truncated mode system.

Each step composes the exact viscous diagonal with a first-order nonlinear
update: ``v <- exp(-nu r^2 4 pi^2 |alpha|^2 dt / l^2) (v + dt * total(v))``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .errors import BlowUpError, ParameterError, UndefinedFitError
from .nse_rhs import e_matrix_dense, rhs
from .params import ScalingParams
from .spectral_core import (ModeField, NormReport, divergence_defect, dual_sobolev_norm,
                            fit_order, leray_project, norm_report, radius_squared,
                            save_checkpoint, shell_spectrum)

__all__ = ["ScalingParams", "Trajectory", "RunOptions", "ControlRecord", "viscous_factor",
           "viscous_factors", "euler_trotter_step", "controlled_step",
           "exponential_trotter_step", "run", "write_trajectory_csv"]

log = logging.getLogger(__name__)
FOUR_PI_SQ = 4.0 * np.pi ** 2


def viscous_factor(alpha, params: ScalingParams, dt: float) -> float:
    if dt < 0:
        raise ParameterError("dt must be nonnegative")
    a2 = float(np.sum(np.asarray(alpha, dtype=float) ** 2))
    return float(np.exp(-params.nu * params.r ** 2 * FOUR_PI_SQ * a2 * dt / params.l ** 2))


def viscous_factors(dimension: int, truncation: int, params: ScalingParams, dt: float) -> np.ndarray:
    """The viscous factor on the whole lattice, shape (2M+1,)*D."""
    if dt < 0:
        raise ParameterError("dt must be nonnegative")
    r2 = radius_squared(dimension, truncation)
    return np.exp(-params.nu * params.r ** 2 * FOUR_PI_SQ * r2 * dt / params.l ** 2)


def _check_dt(dt):
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")


def _guard_finite(amplitudes, time):
    bad = ~np.isfinite(amplitudes)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        m = (amplitudes.shape[-1] - 1) // 2
        mode = (int(idx[0]), tuple(int(i) - m for i in idx[1:]))
        raise BlowUpError(f"non-finite amplitude at t={time} (component, mode)={mode}",
                          time=time, mode=mode)


def _step_warn(total, dt):
    size = dt * float(np.max(np.abs(total))) if total.size else 0.0
    if size >= 1.0:
        warnings.warn(f"dt * max|rhs| = {size:.3g} >= 1; the explicit update is unreliable",
                      RuntimeWarning, stacklevel=3)


def euler_trotter_step(field: ModeField, params: ScalingParams, dt: float, *,
                       nonlinear: bool = True, method: str = "fft", time: float = 0.0) -> ModeField:
    _check_dt(dt)
    _guard_finite(field.amplitudes, time)
    factor = viscous_factors(field.dimension, field.truncation, params, dt)
    if nonlinear:
        total = rhs(field, params, method).total.amplitudes
        _step_warn(total, dt)
        new = factor * (field.amplitudes + dt * total)
    else:
        new = factor * field.amplitudes
    _guard_finite(new, time + dt)
    return field.with_amplitudes(new, divergence_free=field.divergence_free)


@dataclass
class ControlRecord:
    """Audit record of one controlled step.

    ``control`` is the applied zero-mode shift c_{i0} = -v_{i0}; ``mean_flow``
    is the removed mean velocity that keeps advecting the nonzero modes.  The
    pressure term never sees the control.
    """

    control: np.ndarray
    mean_flow: np.ndarray
    leray_sees_control: bool = False

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.mean_flow))


def controlled_step(field: ModeField, params: ScalingParams, dt: float, *,
                    mean_flow=None, nonlinear: bool = True, method: str = "fft",
                    time: float = 0.0):
    """One step with the zero modes shifted to 0 beforehand.

    ``mean_flow`` carries the mean velocity removed at earlier steps; the
    mean removed now is added to it.  Returns ``(new_field, ControlRecord)``.
    """
    _check_dt(dt)
    _guard_finite(field.amplitudes, time)
    d, m, l = field.dimension, field.truncation, field.torus_diameter
    origin = (slice(None),) + (m,) * d
    v0 = field.amplitudes[origin].copy()
    control = -v0
    prior = np.zeros(d, dtype=complex) if mean_flow is None else np.asarray(mean_flow, dtype=complex)
    u_mean = prior + v0

    vc = field.amplitudes.copy()
    vc[origin] = 0.0
    shifted = field.with_amplitudes(vc)
    factor = viscous_factors(d, m, params, dt)
    if nonlinear:
        terms = rhs(shifted, params, method)
        k = shifted.wavevectors
        # the alpha = gamma term of the convolution: advection by the removed mean
        advect = (2j * np.pi / l) * np.tensordot(u_mean, k, axes=(0, 0)) * vc
        total = terms.total.amplitudes - params.r * advect
        _step_warn(total, dt)
        new = factor * (vc + dt * total)
    else:
        new = factor * vc
    new[origin] = 0.0
    _guard_finite(new, time + dt)
    return (field.with_amplitudes(new, divergence_free=field.divergence_free),
            ControlRecord(control, u_mean))


def exponential_trotter_step(field: ModeField, params: ScalingParams, dt: float,
                             form: str = "corrected") -> ModeField:
    """Comparison step ``factor * expm(dt E(v)) v`` with the dense e-matrix (small M only)."""
    _check_dt(dt)
    e = e_matrix_dense(field, params, form)
    new = (expm(dt * e) @ field.amplitudes.ravel()).reshape(field.amplitudes.shape)
    factor = viscous_factors(field.dimension, field.truncation, params, dt)
    return field.with_amplitudes(factor * new)


# -- run loop -----------------------------------------------------------------

@dataclass
class RunOptions:
    nonlinear: bool = True
    controlled: bool = False
    project: bool = True
    record_every: int = 1
    norm_order: int = 2          # order used by the blow-up ceiling
    max_order: int = 5           # norm reports cover h^0 .. h^max_order
    ceiling_factor: float = 1e6
    fit_decay: bool = True
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    method: str = "fft"

    def __post_init__(self):
        if self.record_every < 1:
            raise ParameterError("record_every must be >= 1")
        if self.checkpoint_every < 0:
            raise ParameterError("checkpoint_every must be >= 0")
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ParameterError("checkpoint_every needs checkpoint_dir")


@dataclass
class Trajectory:
    times: list = dc_field(default_factory=list)
    snapshots: list = dc_field(default_factory=list)
    norm_reports: list = dc_field(default_factory=list)
    envelope_fits: list = dc_field(default_factory=list)
    control_magnitudes: list = dc_field(default_factory=list)
    max_projection_change: float = 0.0

    def append(self, t: float, snap: ModeField, report: NormReport, order, control: float):
        if self.times and not t > self.times[-1]:
            raise ParameterError("trajectory times must be strictly increasing")
        self.times.append(float(t))
        self.snapshots.append(snap)
        self.norm_reports.append(report)
        self.envelope_fits.append(order)
        self.control_magnitudes.append(control)

    @property
    def final(self) -> ModeField:
        return self.snapshots[-1]

    def __len__(self):
        return len(self.times)


def _fitted_order(field: ModeField):
    radii, smax, _ = shell_spectrum(field)
    try:
        return fit_order(radii, smax)
    except UndefinedFitError:
        return None


def step_count(T: float, dt: float) -> int:
    if T < 0:
        raise ParameterError("T must be nonnegative")
    _check_dt(dt)
    n = T / dt
    if abs(n - round(n)) > 1e-9:
        raise ParameterError(f"T/dt = {n!r} is not an integer")
    return int(round(n))


def run(initial: ModeField, params: ScalingParams, T: float, dt: float,
        options: RunOptions | None = None, forcing=None) -> Trajectory:
    """Iterate the (controlled) step from 0 to T.

    ``forcing(step, dt)``, if given, returns an amplitude array added after
    each step and before projection.
    """
    opts = options or RunOptions()
    n = step_count(T, dt)
    traj = Trajectory()

    def record(t, f, control):
        order = _fitted_order(f) if opts.fit_decay else None
        traj.append(t, f, norm_report(f, opts.max_order), order, control)

    state = initial
    record(0.0, state, 0.0)
    h0 = dual_sobolev_norm(initial, opts.norm_order)
    ceiling = opts.ceiling_factor * h0 if h0 > 0 else np.inf
    mean_flow = None
    control_mag = 0.0
    for s in range(1, n + 1):
        t_prev = (s - 1) * dt
        try:
            if opts.controlled:
                state, rec = controlled_step(state, params, dt, mean_flow=mean_flow,
                                             nonlinear=opts.nonlinear, method=opts.method,
                                             time=t_prev)
                mean_flow = rec.mean_flow
                control_mag = rec.magnitude
            else:
                state = euler_trotter_step(state, params, dt, nonlinear=opts.nonlinear,
                                           method=opts.method, time=t_prev)
        except BlowUpError as err:
            err.last_snapshot = traj.snapshots[-1]
            err.trajectory = traj
            raise
        if forcing is not None:
            state = state.with_amplitudes(state.amplitudes + forcing(s, dt))
            _guard_finite(state.amplitudes, s * dt)
        if opts.project:
            projected = leray_project(state)
            change = float(np.max(np.abs(projected.amplitudes - state.amplitudes)))
            traj.max_projection_change = max(traj.max_projection_change, change)
            state = projected
        t = s * dt
        hm = dual_sobolev_norm(state, opts.norm_order)
        if hm > ceiling:
            raise BlowUpError(f"h^{opts.norm_order} norm {hm:.3e} exceeded ceiling {ceiling:.3e} at t={t}",
                              time=t, last_snapshot=state, trajectory=traj)
        if opts.checkpoint_every and s % opts.checkpoint_every == 0:
            Path(opts.checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(state, Path(opts.checkpoint_dir) / f"step_{s:08d}.json")
        if s % opts.record_every == 0 or s == n:
            record(t, state, control_mag)
    if opts.project:
        log.info("largest projection correction over run: %.3e", traj.max_projection_change)
    return traj


def write_trajectory_csv(traj: Trajectory, path) -> None:
    orders = sorted(traj.norm_reports[0].per_order) if traj.norm_reports else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"h{m}" for m in orders]
                   + ["sup_mode", "fitted_decay_order", "zero_mode_control_magnitude"])
        for t, rep, order, c in zip(traj.times, traj.norm_reports, traj.envelope_fits,
                                    traj.control_magnitudes):
            w.writerow([repr(t)] + [repr(rep.per_order[m]) for m in orders]
                       + [repr(rep.sup_mode), "" if order is None else repr(order), repr(c)])


def divergence_history(traj: Trajectory) -> np.ndarray:
    return np.array([divergence_defect(s) for s in traj.snapshots])
