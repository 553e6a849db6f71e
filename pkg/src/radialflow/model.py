"""Coefficient sets for the radial diffusion-aggregation equation

    u_t = c1 Lap(u^m) + div(u grad(u * (c2 N + c3 K) + V))

with ``N`` the Newtonian potential (``Lap N = delta``), ``K = |x|^q / q``
(``log|x|`` at ``q = 0``) and ``V`` a quadratic confinement.  In radial
symmetry the bracket reduces to an inward speed

    v(r) = (c2 M(r) + c3 Mt(r)) / (sigma_d r^(d-1)) + V'(r)

which multiplies ``dM/dr`` in the mass-function equation.  Positive ``v``
moves mass towards the origin.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .radial import RadialProfile, mass_function


@dataclass(frozen=True)
class KernelSpec:
    variant: Literal["none", "power_law"] = "none"
    q: float | None = None

    def validate(self, d: int) -> None:
        if self.variant == "none":
            return
        if self.variant != "power_law":
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.q is None:
            raise ValueError("power_law kernel needs an exponent q")
        # Lap K = (q+d-2)|x|^(q-2) must be locally integrable (q > 2-d) and
        # radially nonincreasing (q <= 2)
        if not (2 - d < self.q <= 2):
            raise ValueError(f"kernel exponent q={self.q} outside ({2 - d}, 2] for d={d}")

    def laplacian(self, d: int, r):
        if self.variant == "none":
            return np.zeros_like(np.asarray(r, dtype=float))
        return (self.q + d - 2) * np.asarray(r, dtype=float) ** (self.q - 2)


@dataclass(frozen=True)
class PotentialSpec:
    variant: Literal["none", "quadratic"] = "none"
    a: float = 0.0

    def validate(self) -> None:
        if self.variant == "none":
            if self.a != 0.0:
                raise ValueError("potential 'none' cannot carry a coefficient")
            return
        if self.variant != "quadratic":
            raise ValueError(f"unknown potential variant {self.variant!r}")
        if self.a < 0:
            raise ValueError(f"quadratic potential coefficient must be >= 0, got {self.a}")

    def slope(self, r):
        """``V'(r)`` for ``V = a r^2 / 2``."""
        return self.a * np.asarray(r, dtype=float)

    def value(self, r):
        return 0.5 * self.a * np.asarray(r, dtype=float) ** 2


@dataclass(frozen=True)
class ModelSpec:
    d: int
    m: float
    c1: float = 1.0
    c2: float = 0.0
    c3: float = 0.0
    kernel: KernelSpec = KernelSpec()
    potential: PotentialSpec = PotentialSpec()
    name: str = "custom"

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 3:
            raise ValueError(f"dimension must be an integer >= 3, got {self.d}")
        if self.c1 < 0 or self.c3 < 0:
            raise ValueError(f"c1 and c3 must be nonnegative (c1={self.c1}, c3={self.c3})")
        if self.c1 > 0 and not self.m > 1:
            raise ValueError(f"diffusion exponent must exceed 1, got {self.m}")
        self.kernel.validate(self.d)
        self.potential.validate()
        if self.c3 > 0 and self.kernel.variant == "none":
            raise ValueError("c3 > 0 requires a kernel")

    @property
    def is_critical(self) -> bool:
        return abs(self.m - critical_exponent(self.d)) < 1e-14

    @property
    def has_kernel(self) -> bool:
        return self.c3 > 0 and self.kernel.variant != "none"


def critical_exponent(d: int) -> float:
    return 2.0 - 2.0 / d


PRESETS = ("pks_original", "pks_rescaled", "porous_medium", "aggregation", "fokker_planck")


def preset(name: str, d: int, q: float | None = None, a: float | None = None) -> ModelSpec:
    """Named equation instances.

    ``aggregation`` needs ``q``; ``fokker_planck`` needs the confinement
    coefficient ``a``.  The aggregation preset uses ``c2 = -1`` so that the
    Newtonian part repulses and the steady state solves
    ``u = (q+d-2)|x|^(q-2) * u`` on its support.
    """
    if int(d) != d or d < 3:
        raise ValueError(f"dimension must be an integer >= 3, got {d}")
    m = critical_exponent(d)
    if name == "pks_original":
        return ModelSpec(d, m, c1=1.0, c2=1.0, name=name)
    if name == "pks_rescaled":
        return ModelSpec(d, m, c1=1.0, c2=1.0, potential=PotentialSpec("quadratic", 1.0 / d), name=name)
    if name == "porous_medium":
        return ModelSpec(d, m, c1=1.0, name=name)
    if name == "aggregation":
        if q is None:
            raise ValueError("aggregation preset needs q")
        return ModelSpec(
            d, m, c1=0.0, c2=-1.0, c3=1.0, kernel=KernelSpec("power_law", float(q)), name=name
        )
    if name == "fokker_planck":
        if a is None:
            raise ValueError("fokker_planck preset needs a")
        return ModelSpec(d, m, c1=1.0, potential=PotentialSpec("quadratic", float(a)), name=name)
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def with_exponent(spec: ModelSpec, m: float) -> ModelSpec:
    return replace(spec, m=m)


def radial_velocity(spec: ModelSpec, profile: RadialProfile) -> np.ndarray:
    """Inward advective speed at every face; zero at the origin."""
    g = profile.grid
    if g.d != spec.d:
        raise ValueError(f"grid dimension {g.d} does not match model dimension {spec.d}")
    r = g.faces
    mass = mass_function(profile).values
    pull = spec.c2 * mass
    if spec.has_kernel:
        from .nonlocal_fields import m_tilde

        pull = pull + spec.c3 * m_tilde(profile, spec.kernel.q).values
    v = np.zeros_like(r)
    v[1:] = pull[1:] / g.face_areas[1:] + spec.potential.slope(r[1:])
    return v
