from __future__ import annotations

from dataclasses import dataclass, asdict

from .errors import ParameterError


@dataclass(frozen=True)
class ScalingParams:
    """Parameters of the scaled equation and of the damping ledger.

    nu: viscosity; r: spatial scaling; rho: time scaling; delta in (0, 1);
    mu: step exponent (rho = Delta0**mu in the ledger); Delta0: macro step;
    l: torus diameter; D: dimension.
    """

    nu: float
    r: float = 1.0
    rho: float = 1.0
    delta: float = 0.25
    mu: float = 10.0
    Delta0: float = 0.1
    l: float = 1.0
    D: int = 3

    def __post_init__(self):
        for name in ("nu", "r", "rho", "mu", "Delta0", "l"):
            value = getattr(self, name)
            if not value > 0:
                raise ParameterError(f"{name} must be positive, got {value}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.D) != self.D or self.D < 2:
            raise ParameterError(f"D must be an integer >= 2, got {self.D}")

    def replace(self, **changes) -> "ScalingParams":
        d = asdict(self)
        d.update(changes)
        return ScalingParams(**d)

    @property
    def diffusivity(self) -> float:
        """rho r^2 nu, the effective heat coefficient in scaled time."""
        return self.rho * self.r ** 2 * self.nu
