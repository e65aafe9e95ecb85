"""Duhamel-form Picard iteration on a macro interval and step-size selection.

Scaled time ``tau = t / rho``.  On ``[t0, t0 + Delta]`` the iterates are

    v^k(tau) = exp(-lam (tau - t0)) data + int_{t0}^{tau} exp(-lam (tau - s)) rho total(v^{k-1}(s)) ds,

with ``lam = nu rho r^2 4 pi^2 |alpha|^2 / l^2``, sampled on clustered time nodes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field as dc_field
from math import comb, pi, sqrt

import numpy as np

from .errors import ContractionFailure, ParameterError, TimeGridMismatch
from .nse_rhs import rhs
from .params import ScalingParams
from .quadrature import gauss_legendre, refine, sphere_abs_coordinate, sphere_area
from .spectral_core import ModeField, dual_sobolev_norm, radius_squared

DEFAULT_NODES = 9


def lobatto_nodes(n: int, t0: float, delta: float) -> np.ndarray:
    """Chebyshev-Lobatto points on [t0, t0 + delta]; n = 2^j + 1 nests under refinement."""
    if n < 2:
        raise ParameterError("need at least 2 time nodes")
    k = np.arange(n)
    return t0 + delta * (1.0 - np.cos(np.pi * k / (n - 1))) / 2.0


def decay_rates(field: ModeField, params: ScalingParams) -> np.ndarray:
    r2 = radius_squared(field.dimension, field.truncation)
    return params.nu * params.rho * params.r ** 2 * 4 * pi ** 2 * r2 / field.torus_diameter ** 2


def _etd_weights(lam: np.ndarray, h: float):
    """Weights (A, B) so that int_0^h e^{-lam w}[g_a w/h + g_b (1 - w/h)] dw = B g_a + (A - B) g_b."""
    z = lam * h
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    em = np.exp(-zs)
    a = np.where(small, 1 - z / 2 + z ** 2 / 6 - z ** 3 / 24, -np.expm1(-zs) / zs)
    b = np.where(small, 0.5 - z / 3 + z ** 2 / 8 - z ** 3 / 30, (1 - em * (1 + zs)) / zs ** 2)
    return h * a, h * b


def duhamel_iterate(data: ModeField, prev, params: ScalingParams, delta: float,
                    nodes: np.ndarray | None = None, t0: float = 0.0, method: str = "fft") -> list:
    """One Picard map applied to ``prev`` (a list of fields sampled at ``nodes``)."""
    if not delta > 0:
        raise ParameterError("Delta must be positive")
    nodes = lobatto_nodes(DEFAULT_NODES, t0, delta) if nodes is None else np.asarray(nodes, float)
    if len(prev) != len(nodes):
        raise TimeGridMismatch(f"{len(prev)} samples for {len(nodes)} nodes")
    if abs(nodes[0] - t0) > 1e-14 * max(1.0, abs(t0)) or np.any(np.diff(nodes) <= 0):
        raise TimeGridMismatch("nodes must start at t0 and increase strictly")
    lam = decay_rates(data, params)
    g = [params.rho * rhs(p, params, method).total.amplitudes for p in prev]
    out = [data.with_amplitudes(data.amplitudes.copy())]
    integral = np.zeros_like(data.amplitudes)
    for j in range(1, len(nodes)):
        h = nodes[j] - nodes[j - 1]
        a, b = _etd_weights(lam, h)
        integral = np.exp(-lam * h) * integral + b * g[j - 1] + (a - b) * g[j]
        heat = np.exp(-lam * (nodes[j] - t0)) * data.amplitudes
        out.append(data.with_amplitudes(heat + integral))
    return out


def _sup_norm(samples, m):
    return max(dual_sobolev_norm(s, m) for s in samples)


def _sup_diff(a, b, m):
    return max(dual_sobolev_norm(x - y, m) for x, y in zip(a, b))


# -- constants ----------------------------------------------------------------

@dataclass
class QuadConfig:
    n_time: int = 24
    n_radial: int = 24
    rtol: float = 0.01
    max_doublings: int = 6
    y_max: float = 10.0  # Gaussian cut-off in units of sqrt(4 s tau)


@dataclass
class KernelConstants:
    C_G: float
    C_K: float
    C_0gamma: float
    C_1gamma: float
    delta_used: float
    diffusivity: float = 0.0
    parts: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        for name in ("C_G", "C_K", "C_0gamma", "C_1gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be finite and positive, got {v}")


def _gaussian_parts(s: float, delta: float, d: int, n_t: int, n_r: int, y_max: float) -> dict:
    """Space-time norms of G and G_j for diffusivity s on (0, delta), ball and exterior."""
    u, wu = gauss_legendre(n_t, 0.0, 1.0)
    tau = delta * u ** 2
    dtau = 2 * delta * u * wu
    a = np.sqrt(4 * s * tau)
    edge = 1.0 / a
    lo_ball, hi_ball = np.zeros_like(a), np.minimum(edge, y_max)
    lo_ext, hi_ext = np.minimum(edge, y_max), np.full_like(a, y_max)
    yb, wb = gauss_legendre(n_r, lo_ball, hi_ball)
    ye, we = gauss_legendre(n_r, lo_ext, hi_ext)
    area, absj = sphere_area(d), sphere_abs_coordinate(d)
    pd = pi ** (-d / 2)

    def rad(y, w, power, decay):
        return np.sum(w * y ** power * np.exp(-decay * y ** 2), axis=1)

    per_tau = {
        "G_ball_L1": area * pd * rad(yb, wb, d - 1, 1),
        "G_ext_L1": area * pd * rad(ye, we, d - 1, 1),
        "Gj_ball_L1": absj * pd * (2 / a) * rad(yb, wb, d, 1),
        "Gj_ext_L1": absj * pd * (2 / a) * rad(ye, we, d, 1),
        "G_ext_L2sq": area * pi ** (-d) * a ** (-d) * rad(ye, we, d - 1, 2),
        "Gj_ext_L2sq": (area / d) * pi ** (-d) * a ** (-d) * (4 / a ** 2) * rad(ye, we, d + 1, 2),
    }
    out = {k: float(np.sum(v * dtau)) for k, v in per_tau.items()}
    out["G_ext_L2"] = sqrt(out.pop("G_ext_L2sq"))
    out["Gj_ext_L2"] = sqrt(out.pop("Gj_ext_L2sq"))
    return out


def _laplace_parts(d: int, n: int) -> dict:
    """Spatial integrals of |K_{D,i}| = |x_i| / |x|^D on the unit ball and of K^2 outside."""
    t, w = gauss_legendre(n, 0.0, 1.0)
    ball = sphere_abs_coordinate(d) * float(np.sum(w))            # radial integrand is 1
    ext = sphere_area(d) / d * float(np.sum(w * t ** (d - 3)))     # rho = 1/t
    return {"K_ball_L1": ball, "K_ext_L2sq": ext}


def gaussian_norms(s: float, delta: float, d: int, cfg: QuadConfig | None = None) -> dict:
    cfg = cfg or QuadConfig()
    vals, _ = refine(lambda k: _gaussian_parts(s, delta, d, k, k, cfg.y_max),
                     max(cfg.n_time, cfg.n_radial), cfg.rtol, cfg.max_doublings,
                     "Gaussian kernel norms")
    return vals


def laplace_norms(d: int, cfg: QuadConfig | None = None) -> dict:
    cfg = cfg or QuadConfig()
    vals, _ = refine(lambda k: _laplace_parts(d, k), cfg.n_radial, cfg.rtol, cfg.max_doublings,
                     "Laplacian kernel norms")
    return vals


def kernel_constants(params: ScalingParams, delta: float, quad_cfg: QuadConfig | None = None) -> KernelConstants:
    """C_G, C_K for the (rho, r)-scaled kernels and C_0, C_1 for the r = 1 kernels.

    The exterior "L2 and sup" norm of a Fourier transform is bounded by the
    larger of the exterior L2 norm and the exterior L1 norm.
    """
    if not delta > 0:
        raise ParameterError("Delta must be positive")
    cfg = quad_cfg or QuadConfig()
    d = params.D
    s = params.diffusivity
    g = gaussian_norms(s, delta, d, cfg)
    c_g = (g["G_ball_L1"] + d * g["Gj_ball_L1"]
           + g["G_ext_L1"] + g["G_ext_L2"] + d * (g["Gj_ext_L1"] + g["Gj_ext_L2"]))
    k = laplace_norms(d, cfg)
    c_k = 1 + d * delta * k["K_ball_L1"] + d * sqrt(delta * k["K_ext_L2sq"])
    g1 = gaussian_norms(params.rho * params.nu, delta, d, cfg)
    c0 = g1["G_ball_L1"] + max(g1["G_ext_L2"], g1["G_ext_L1"])
    c1 = g1["Gj_ball_L1"] + max(g1["Gj_ext_L2"], g1["Gj_ext_L1"])
    return KernelConstants(c_g, c_k, c0, c1, delta, s, {"scaled": g, "unscaled": g1, "laplace": k})


def multi_index_count(d: int, order: int) -> int:
    """Number of multi-indices beta in N^d with |beta| = order."""
    return comb(order + d - 1, d - 1)


def c_dm(d: int, m: int) -> int:
    """Term count of the derivative expansions up to order m.

    For each |beta| <= m, with |gamma| = max(|beta| - 1, 0): one heat term,
    D * 2^|gamma| Leibniz terms of the convection sum and D^2 * 2^|gamma|
    Leibniz terms of the quadratic pressure source.
    """
    if d < 1 or m < 0:
        raise ParameterError("need D >= 1 and m >= 0")
    total = 0
    for n in range(m + 1):
        g = max(n - 1, 0)
        total += multi_index_count(d, n) * (1 + d * 2 ** g + d * d * 2 ** g)
    return total


@dataclass
class RhoChoice:
    kernel_rule: float                    # 1 / (2 r c_Dm C_G C_K (C0 + 1))
    lipschitz_rule: float | None = None   # 1 / (4 L beta_sum), only when L is given


def choose_rho(C0: float, r: float, consts: KernelConstants, c_Dm: float,
               L: float | None = None, beta_sum: float | None = None, m: int = 2,
               dimension: int = 3) -> RhoChoice:
    """Both step-size rules.

    ``beta_sum`` is sum over |beta| <= m of (C_0beta + C_1beta); when omitted it
    is the multi-index count times (C_0gamma + C_1gamma).
    """
    for name, v in (("C0", C0), ("r", r), ("c_Dm", c_Dm)):
        if not v > 0:
            raise ParameterError(f"{name} must be positive")
    rho_k = 1.0 / (2 * r * c_Dm * consts.C_G * consts.C_K * (C0 + 1))
    rho_l = None
    if L is not None:
        if beta_sum is None:
            n = sum(multi_index_count(dimension, k) for k in range(m + 1))
            beta_sum = n * (consts.C_0gamma + consts.C_1gamma)
        rho_l = 1.0 / (4 * L * beta_sum)
    return RhoChoice(rho_k, rho_l)


def select_rho(params: ScalingParams, C0: float, delta: float, m: int = 2,
               quad_cfg: QuadConfig | None = None, iters: int = 60, rtol: float = 1e-6):
    """Fixed point of rho = kernel_rule(constants(rho)).

    The constants depend on rho through the diffusivity, so the rule is
    iterated; the map is a contraction in log rho.
    """
    cdm = c_dm(params.D, m)
    rho = params.rho
    for _ in range(iters):
        consts = kernel_constants(params.replace(rho=rho), delta, quad_cfg)
        new = choose_rho(C0, params.r, consts, cdm).kernel_rule
        if abs(new - rho) <= rtol * new:
            rho = new
            break
        rho = new
    consts = kernel_constants(params.replace(rho=rho), delta, quad_cfg)
    return rho, consts


# -- solve --------------------------------------------------------------------

@dataclass
class ContractionTrace:
    interval: tuple
    iterates_kept: int
    increment_norms: list
    rho_used: float
    r_used: float
    constants: dict
    converged: bool = False
    measured_ratio: float | None = None
    lipschitz_estimate: float | None = None

    @property
    def ratios(self) -> list:
        inc = self.increment_norms
        return [inc[k + 1] / inc[k] if inc[k] > 0 else float("nan") for k in range(len(inc) - 1)]

    def to_json(self) -> str:
        d = asdict(self)
        d["ratios"] = self.ratios
        return json.dumps(d, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        ratios = [None] + self.ratios
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "increment_norm", "ratio"])
            for k, (inc, q) in enumerate(zip(self.increment_norms, ratios), start=1):
                w.writerow([k, repr(inc), "" if q is None else repr(q)])


@dataclass
class LocalSolution:
    nodes: np.ndarray
    samples: list


def picard_solve(data: ModeField, params: ScalingParams, delta: float, tol: float = 1e-10,
                 kmax: int = 50, *, m: int = 2, n_nodes: int = DEFAULT_NODES, t0: float = 0.0,
                 C0: float | None = None, constants: dict | None = None,
                 method: str = "fft"):
    """Iterate the Picard map until the sup-over-nodes h^m increment is <= tol.

    Raises ContractionFailure when the increment ratio is >= 1 for three
    consecutive iterates.  Returns ``(LocalSolution, ContractionTrace)``.
    """
    if m < 0 or kmax < 1 or not tol > 0:
        raise ParameterError("need m >= 0, kmax >= 1 and tol > 0")
    norm0 = dual_sobolev_norm(data, m)
    if C0 is not None and norm0 > C0 * (1 + 1e-12):
        raise ParameterError(f"data h^{m} norm {norm0:.4g} exceeds C0 = {C0}")
    nodes = lobatto_nodes(n_nodes, t0, delta)
    prev = [data] * len(nodes)
    trace = ContractionTrace((t0, t0 + delta), 0, [], params.rho, params.r,
                             dict(constants or {}, C0=C0))
    prev_totals = None
    lip = 0.0
    streak = 0
    floor = 1e-13 * max(1.0, norm0)
    for k in range(1, kmax + 1):
        new = duhamel_iterate(data, prev, params, delta, nodes, t0, method)
        inc = _sup_diff(new, prev, m)
        trace.increment_norms.append(inc)
        trace.iterates_kept = k
        # Lipschitz estimate from consecutive iterate pairs
        totals = [rhs(p, params, method).total for p in new]
        if prev_totals is not None and inc > floor:
            num = _sup_diff(totals, prev_totals, max(m - 1, 0))
            lip = max(lip, num / inc)
        prev_totals = totals
        if inc <= tol:
            trace.converged = True
            prev = new
            break
        if k >= 2:
            q = trace.increment_norms[-1] / trace.increment_norms[-2]
            streak = streak + 1 if q >= 1 else 0
            if streak >= 3:
                trace.measured_ratio = _measured_ratio(trace.increment_norms, floor)
                raise ContractionFailure(f"increment ratio >= 1 for 3 iterates (last {q:.3g})", trace)
        prev = new
    trace.measured_ratio = _measured_ratio(trace.increment_norms, floor)
    trace.lipschitz_estimate = lip if lip > 0 else None
    trace.constants["L_estimate"] = trace.lipschitz_estimate
    return LocalSolution(nodes, prev), trace


def _measured_ratio(increments, floor):
    qs = [increments[k + 1] / increments[k] for k in range(len(increments) - 1)
          if increments[k] > floor]
    return max(qs) if qs else 0.0


def constants_json(consts: KernelConstants, c_Dm: int | None = None) -> str:
    d = asdict(consts)
    if c_Dm is not None:
        d["c_Dm"] = c_Dm
    return json.dumps(d, indent=2, sort_keys=True)
