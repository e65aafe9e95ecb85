"""Damping ledger: viscous damping against the nonlinear growth bound.

Notation: ``s = rho r^2 nu`` is the scaled diffusivity and the Gaussian is
``G(sigma, y) = (4 pi s sigma)^{-D/2} exp(-|y|^2 / (4 s sigma))`` with
derivatives ``G_j = -y_j / (2 s sigma) G``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass
from math import exp, expm1, lgamma, log, log1p, pi

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ParameterError, TimeGridMismatch
from .nse_rhs import to_grid
from .params import ScalingParams
from .quadrature import gauss_legendre, refine, sphere_area
from .spectral_core import ModeField, l2_modes

Y_MAX = 10.0


# -- Gaussian integrals -------------------------------------------------------

def grr_constant(dimension: int, delta: float) -> float:
    """Sharpest C with |G_j(sigma, y)| <= C / ((4 pi s sigma)^delta |y|^{D+1-2 delta}).

    Equals 2 pi^{delta - D/2} sup_{w>0} w^a e^{-w}, a = D/2 + 1 - delta; the
    sup is taken numerically.
    """
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    a = dimension / 2 + 1 - delta
    res = minimize_scalar(lambda w: -(a * log(w) - w), bounds=(1e-6, 10 * a + 10),
                          method="bounded", options={"xatol": 1e-12})
    return 2 * pi ** (delta - dimension / 2) * exp(-res.fun)


def c_star(dimension: int, delta: float) -> float:
    """Parameter-independent constant of the ball estimate.

    sum_j int_0^T int_{B1} |y_j||G_j| <= (4 pi s)^{-delta} C* T^{1-delta}, with
    C* = D C_grr |S^{D-1}| / (2 delta (1 - delta)); the radial integral of
    rho^{2 delta - 1} gives 1/(2 delta) and the time integral of sigma^{-delta}
    gives T^{1-delta}/(1-delta).
    """
    return dimension * grr_constant(dimension, delta) * sphere_area(dimension) / (2 * delta * (1 - delta))


def _moment_parts(s: float, horizon: float, d: int, n: int) -> dict:
    """sum_j int_0^horizon of int |y_j||G_j| dy over the unit ball and its exterior.

    Per time sigma the integrand is |y|^2/(2 s sigma) G; in the scaled radius
    y = |x| / sqrt(4 s sigma) it is (2 |S|/sqrt(pi)^D) y^{D+1} e^{-y^2}.
    """
    u, wu = gauss_legendre(n, 0.0, 1.0)
    sig = horizon * u ** 2
    dsig = 2 * horizon * u * wu
    edge = 1.0 / np.sqrt(4 * s * sig)
    yb, wb = gauss_legendre(n, np.zeros_like(edge), np.minimum(edge, Y_MAX))
    ext_hi = np.maximum(Y_MAX, edge + 20.0 / np.maximum(edge, 1.0))
    ye, we = gauss_legendre(n, edge, ext_hi)
    k = 2 * sphere_area(d) / pi ** (d / 2)

    def rad(y, w):
        return np.sum(w * y ** (d + 1) * np.exp(-y ** 2), axis=1)

    return {"ball": float(np.sum(k * rad(yb, wb) * dsig)),
            "tail": float(np.sum(k * rad(ye, we) * dsig))}


def gaussian_second_moment(s: float, sigma: float, d: int = 3, n: int = 64) -> float:
    """int y_j^2 G(sigma, y) dy by radial quadrature (closed form 2 s sigma)."""
    y, w = gauss_legendre(n, 0.0, Y_MAX)
    a2 = 4 * s * sigma
    radial = np.sum(w * y ** (d + 1) * np.exp(-y ** 2))
    return float(sphere_area(d) / d * a2 / pi ** (d / 2) * radial)


@dataclass
class TailIntegrals:
    C_star: float
    epsilon_tail: float
    ball_term: float       # C* Delta0^{1-delta}
    ball_integral: float   # the ball integral itself; (4 pi s)^{-delta} ball_term bounds it


def gaussian_tail_integrals(params: ScalingParams, Delta0: float, delta: float | None = None,
                            rtol: float = 0.01) -> TailIntegrals:
    delta = params.delta if delta is None else delta
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    if not Delta0 > 0:
        raise ParameterError("Delta0 must be positive")
    s = params.diffusivity
    if 4 * pi * s < 1:
        warnings.warn("4 pi rho r^2 nu < 1: the ball bound is not guaranteed", RuntimeWarning,
                      stacklevel=2)
    vals, _ = refine(lambda n: _moment_parts(s, Delta0, params.D, n), 32, rtol, 8,
                     "Gaussian moment integrals")
    cs = c_star(params.D, delta)
    return TailIntegrals(cs, vals["tail"], cs * Delta0 ** (1 - delta), vals["ball"])


# -- damping and growth -------------------------------------------------------

@dataclass
class DampingEstimate:
    bound: float
    c_delta_n: float
    actual: float

    @property
    def sound(self) -> bool:
        return self.actual <= self.bound * (1 + 1e-12)


def fourier_damping(field: ModeField, params: ScalingParams, Delta0: float, tau: float) -> DampingEstimate:
    """Two-region bound on the heat-evolved L2 norm and the exact value.

    bound = |v| exp(-4 pi^2 s tau Delta0^2) + c_n 8 D pi^2 s tau Delta0^{1+D}, with
    c_n the largest |v_alpha|^2 over the box |alpha_j| / l <= Delta0.  The bound
    is sound for mean-free fields when Delta0 <= 1 / (2 l); a warning flags
    inputs outside that range.
    """
    if not 0 <= tau <= Delta0:
        raise ParameterError("tau must lie in [0, Delta0]")
    s = params.diffusivity
    d, l = field.dimension, field.torus_diameter
    k = field.wavevectors / l
    amp2 = np.sum(np.abs(field.amplitudes) ** 2, axis=0)
    box = np.all(np.abs(k) <= Delta0, axis=0)
    c_n = float(amp2[box].max()) if np.any(box) else 0.0
    origin = (field.truncation,) * d
    if Delta0 * l > 0.5 or amp2[origin] > 0:
        warnings.warn("damping bound is only guaranteed for mean-free fields with Delta0 <= 1/(2l)",
                      RuntimeWarning, stacklevel=2)
    norm = l2_modes(field)
    bound = norm * exp(-4 * pi ** 2 * s * tau * Delta0 ** 2) + c_n * 8 * d * pi ** 2 * s * tau * Delta0 ** (1 + d)
    xi2 = np.sum(k ** 2, axis=0)
    actual = float(np.sqrt(np.sum(amp2 * np.exp(-8 * pi ** 2 * s * tau * xi2))))
    return DampingEstimate(float(bound), c_n, actual)


def nonlinear_upper_bound(L_m: float, params: ScalingParams, Delta0: float, delta: float | None = None,
                          *, C_star: float | None = None, epsilon: float | None = None) -> float:
    """rho r L_m (4 pi s)^delta (Delta0^{1-delta} C* + eps)."""
    delta = params.delta if delta is None else delta
    if L_m < 0:
        raise ParameterError("L_m must be nonnegative")
    if L_m == 0:
        return 0.0
    if C_star is None or epsilon is None:
        t = gaussian_tail_integrals(params, Delta0, delta)
        C_star = t.C_star if C_star is None else C_star
        epsilon = t.epsilon_tail if epsilon is None else epsilon
    s = params.diffusivity
    return params.rho * params.r * L_m * (4 * pi * s) ** delta * (Delta0 ** (1 - delta) * C_star + epsilon)


def threshold_mu(delta: float) -> float:
    return (2 + delta) / delta


@dataclass
class SSResult:
    lhs: float
    holds: bool
    log_margin: float   # log(growth terms) - log(damping); <= 0 iff holds
    damping: float
    c_D: float
    growth: float
    epsilon: float


def _log1mexp(x: float) -> float:
    """log(1 - e^{-x}) for x > 0."""
    return log(x) + log1p(-x / 2) if x < 1e-8 else log(-expm1(-x))


def _logsumexp(vals):
    vals = [v for v in vals if v > -np.inf]
    if not vals:
        return -np.inf
    m = max(vals)
    return m + log(sum(exp(v - m) for v in vals))


def _safe_log(x: float) -> float:
    return log(x) if x > 0 else -np.inf


def log_epsilon_tail(log_s: float, Delta0: float, d: int) -> float:
    """log of the exterior moment integral, robust to underflow.

    With X = 1 / (4 s Delta0) <= 50 the integral is quadratured; beyond that
    the tail is replaced by the upper bound D Delta0 X^{a-1} e^{-X} / (Gamma(a) (1 - (a-1)/X)),
    a = D/2 + 1, of the regularized upper incomplete gamma function.
    """
    log_x = -(log(4.0) + log_s + log(Delta0))
    if log_x <= log(50.0):
        s = exp(log_s)
        vals, _ = refine(lambda n: _moment_parts(s, Delta0, d, n), 32, 0.01, 8,
                         "Gaussian moment integrals")
        return _safe_log(vals["tail"])
    if log_x > 700:
        return -np.inf
    x = exp(log_x)
    a = d / 2 + 1
    return log(d * Delta0) + (a - 1) * log_x - x - lgamma(a) - log1p(-(a - 1) / x)


def ss_inequality(norm_L2: float, params: ScalingParams, Delta0: float, L_m: float,
                  delta: float | None = None, *, c_delta_n: float = 0.0,
                  C_star: float | None = None, epsilon: float | None = None,
                  log_rho: float | None = None, norm_threshold: float = 1.0) -> SSResult:
    """Evaluate |v|(exp(-4 pi^2 s Delta0^3) - 1) + c_D + rho r L_m (4 pi^2 s)^delta Delta0^{1-delta} C* + eps.

    ``rho`` is ``params.rho`` unless ``log_rho`` is given.  ``holds`` is decided
    in log space, so it stays meaningful when every term underflows; ``lhs``
    is the plain floating-point value.  Norms below ``norm_threshold`` do not
    need damping and trigger a warning.
    """
    delta = params.delta if delta is None else delta
    if norm_L2 <= 0:
        raise ParameterError("norm_L2 must be positive")
    if not Delta0 > 0:
        raise ParameterError("Delta0 must be positive")
    if norm_L2 < norm_threshold:
        warnings.warn(f"norm below the damping threshold {norm_threshold}", RuntimeWarning, stacklevel=2)
    d, r, nu = params.D, params.r, params.nu
    log_rho = log(params.rho) if log_rho is None else log_rho
    if C_star is None:
        C_star = c_star(d, delta)
    log_s = log_rho + 2 * log(r) + log(nu)
    log_eps = _safe_log(epsilon) if epsilon is not None else log_epsilon_tail(log_s, Delta0, d)
    log_x = log(4 * pi ** 2) + log_s + 3 * log(Delta0)
    log_damp = log(norm_L2) + _log1mexp(exp(log_x)) if log_x > -700 else log(norm_L2) + log_x
    log_cd = (_safe_log(c_delta_n) + log(8 * d * pi ** 2) + log_s + (2 + d) * log(Delta0))
    log_growth = (_safe_log(L_m) + log_rho + log(r) + delta * (log(4 * pi ** 2) + log_s)
                  + (1 - delta) * log(Delta0) + log(C_star))
    margin = _logsumexp([log_cd, log_growth, log_eps]) - log_damp

    def ex(v):
        return exp(v) if v > -745 else 0.0

    damping, c_d, growth, eps = ex(log_damp), ex(log_cd), ex(log_growth), ex(log_eps)
    lhs = -damping + c_d + growth + eps
    return SSResult(lhs, bool(margin <= 0), margin, damping, c_d, growth, eps)


@dataclass
class LedgerReport:
    damping_main: float
    damping_exact: float
    nonlinear_bound: float
    c_delta_n: float
    C_star: float
    epsilon_tail: float
    checks: dict
    threshold_mu: float
    rho: float
    Delta0: float
    r: float
    delta: float
    mu: float

    @property
    def feasible(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def feasibility(params: ScalingParams, norm_L2: float = 1.0, L_m: float = 1.0,
                c_delta_n: float = 0.0) -> LedgerReport:
    """All gates with rho = Delta0^mu substituted."""
    delta, mu, D0 = params.delta, params.mu, params.Delta0
    rho = D0 ** mu
    p = params.replace(rho=rho)
    s = p.diffusivity
    thr = threshold_mu(delta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tails = gaussian_tail_integrals(p, D0, delta)
        ss = ss_inequality(norm_L2, p, D0, L_m, delta, c_delta_n=c_delta_n,
                           C_star=tails.C_star, epsilon=tails.epsilon_tail)
    checks = {
        "nu_rho_r2_ge_1": bool(4 * pi * s >= 1),
        "delta_lt_half": bool(delta < 0.5),
        "mu_gt_threshold": bool(mu > thr),
        "exponent_dominance": bool(mu * (1 + delta) + 1 - delta > mu + 3),
        "ss_inequality_holds": ss.holds,
    }
    return LedgerReport(
        damping_main=norm_L2 * 4 * pi ** 2 * s * D0 ** 3,
        damping_exact=norm_L2 * -expm1(-4 * pi ** 2 * s * D0 ** 3),
        nonlinear_bound=nonlinear_upper_bound(L_m, p, D0, delta, C_star=tails.C_star,
                                              epsilon=tails.epsilon_tail),
        c_delta_n=c_delta_n, C_star=tails.C_star, epsilon_tail=tails.epsilon_tail,
        checks=checks, threshold_mu=thr, rho=rho, Delta0=D0, r=p.r, delta=delta, mu=mu)


def find_delta0_star(params: ScalingParams, norm_L2: float = 1.0, L_m: float = 1.0,
                     c_delta_n: float = 0.0, *, lo: float = 1e-300, iters: int = 200):
    """Bisection (in log Delta0) for the threshold below which ss holds.

    rho = Delta0^mu is tied to Delta0 while nu and r stay fixed.  Returns
    ``params.Delta0`` if ss already holds there and ``None`` if it fails even
    at ``lo``.
    """
    c_s = c_star(params.D, params.delta)

    def holds(log_d0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return ss_inequality(norm_L2, params, exp(log_d0), L_m, c_delta_n=c_delta_n,
                                 C_star=c_s, log_rho=params.mu * log_d0).holds

    a, b = log(lo), log(params.Delta0)
    if holds(b):
        return params.Delta0
    if not holds(a):
        return None
    for _ in range(iters):
        mid = (a + b) / 2
        if holds(mid):
            a = mid
        else:
            b = mid
        if b - a < 1e-10:
            break
    return exp(a)


def write_frontier_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "mu", "Delta0", "rho", "r", "damping_main", "nonlinear_bound", "ss_holds"])
        for rep in reports:
            w.writerow([repr(rep.delta), repr(rep.mu), repr(rep.Delta0), repr(rep.rho), repr(rep.r),
                        repr(rep.damping_main), repr(rep.nonlinear_bound),
                        str(rep.checks["ss_inequality_holds"]).lower()])


# -- horizon and uniqueness ---------------------------------------------------

def choose_r_for_horizon(C: float, c: float, T: float, nu: float, margin: float = 0.01):
    """r = (1/nu)(C + c C^2 (1 + T))(1 + margin); returns (r, C*_horizon)."""
    if not (C > 0 and c > 0 and T >= 0 and nu > 0 and margin >= 0):
        raise ParameterError("need C, c, nu > 0, T >= 0 and margin >= 0")
    c_h = C + c * C ** 2 * (1 + T)
    return c_h / nu * (1 + margin), c_h


def l4_norm(field: ModeField) -> float:
    """||v||_{L^4} of the vector field, exact on a grid of 4M+1 points per axis."""
    d, m, l = field.dimension, field.truncation, field.torus_diameter
    n = 4 * m + 1
    u = to_grid(field.amplitudes, d, n)
    mag2 = np.sum(np.abs(u) ** 2, axis=0)
    return float((l ** d * np.mean(mag2 ** 2)) ** 0.25)


@dataclass
class CornwallResult:
    times: np.ndarray
    gap: np.ndarray      # ||v_b - v_a||_{L2}^2
    bound: np.ndarray
    integral: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.gap <= self.bound * (1 + 1e-12) + 1e-300))


def _gap_and_integral(traj_a, traj_b, p):
    ta, tb = np.asarray(traj_a.times), np.asarray(traj_b.times)
    if ta.shape != tb.shape or np.any(np.abs(ta - tb) > 1e-12 * max(1.0, float(np.max(np.abs(ta))))):
        raise TimeGridMismatch("trajectories must share recorded times")
    l = traj_a.snapshots[0].torus_diameter
    d = traj_a.snapshots[0].dimension
    gap = np.array([(l2_modes(b - a) ** 2) * l ** d for a, b in zip(traj_a.snapshots, traj_b.snapshots)])
    n4 = np.array([l4_norm(a) for a in traj_a.snapshots])
    integrand = n4 ** p + n4 ** 2
    steps = np.diff(ta) * (integrand[1:] + integrand[:-1]) / 2
    integral = np.concatenate([[0.0], np.cumsum(steps)])
    return ta, gap, integral


def cornwall_bound(traj_a, traj_b, C_const: float, p: int = 8) -> CornwallResult:
    """gap(t) against gap(0) exp(C int_0^t (||v||_{L4}^p + ||v||_{L4}^2) ds), v from ``traj_a``."""
    if p < 4:
        raise ParameterError("p must be >= 4")
    if C_const < 0:
        raise ParameterError("C_const must be nonnegative")
    t, gap, integral = _gap_and_integral(traj_a, traj_b, p)
    return CornwallResult(t, gap, gap[0] * np.exp(C_const * integral), integral)


def calibrate_cornwall_constant(traj_a, traj_b, p: int = 8, margin: float = 0.05) -> float:
    """Smallest C (times 1 + margin) making the bound hold at every recorded time.

    Returns inf when the initial gap is zero but a later gap is not (the
    bound is then unusable for any finite C).
    """
    t, gap, integral = _gap_and_integral(traj_a, traj_b, p)
    if gap[0] == 0:
        return 0.0 if np.all(gap == 0) else float("inf")
    need = 0.0
    for g, i in zip(gap[1:], integral[1:]):
        if g > gap[0]:
            if i <= 0:
                return float("inf")
            need = max(need, log(g / gap[0]) / i)
    return need * (1 + margin)
