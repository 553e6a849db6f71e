"""Scaled stationary profiles as explicit barriers, and mass-function ordering.

A family member is ``R^-d base(./R)``: the same mass, less concentrated for
``R > 1``.  The scaling radius follows a scalar ODE.  In the variable
``S = R^d`` both ODEs become smooth:

    rescaled PKS:   S' = 1 - S
    aggregation:    S' = C1 d (1 - S^((d+q-2)/d))
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .radial import RadialGrid, RadialProfile, mass_function, rescale_profile
from .stationary import StationaryResult


@dataclass(frozen=True, eq=False)
class BarrierFamily:
    base: StationaryResult
    R0: float
    ode: Literal["pks_rescaled", "aggregation"] = "pks_rescaled"
    C1: float | None = None
    q: float | None = None
    role: Literal["subsolution", "supersolution", "exact_solution"] = "exact_solution"

    def __post_init__(self) -> None:
        if not self.R0 > 0:
            raise ValueError(f"R0 must be positive, got {self.R0}")
        if self.ode == "aggregation":
            if self.C1 is None or not self.C1 > 0:
                raise ValueError("aggregation family needs a positive rate constant C1")
            if self.q is None:
                raise ValueError("aggregation family needs the kernel exponent q")
        elif self.ode != "pks_rescaled":
            raise ValueError(f"unknown radius ODE {self.ode!r}")

    @property
    def d(self) -> int:
        return self.base.profile.grid.d

    def with_radius(self, R0: float, role: str | None = None) -> "BarrierFamily":
        return BarrierFamily(self.base, R0, self.ode, self.C1, self.q, role or self.role)


def radius_rhs(family: BarrierFamily) -> Callable[[float], float]:
    """``R'`` as a function of ``R``."""
    d = family.d
    if family.ode == "pks_rescaled":
        return lambda r: (1.0 - r**d) / (d * r ** (d - 1))
    c1, q = family.C1, family.q
    return lambda r: c1 * (1.0 - r ** (d + q - 2)) * r ** (1 - d)


def integrate_radius(
    rhs: Callable[[float], float], R0: float, times: Sequence[float], step: float
) -> np.ndarray:
    """Classical RK4 for ``R' = rhs(R)`` sampled at ``times`` (last step shortened)."""
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    out = np.empty_like(times)
    t, r = 0.0, float(R0)
    for idx in order:
        target = times[idx]
        if target < 0:
            raise ValueError("times must be nonnegative")
        while t < target:
            h = min(step, target - t)
            k1 = rhs(r)
            k2 = rhs(r + 0.5 * h * k1)
            k3 = rhs(r + 0.5 * h * k2)
            k4 = rhs(r + h * k3)
            r += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = target if h == target - t else t + h
        out[idx] = r
    return out


def default_step(family: BarrierFamily) -> float:
    if family.ode == "pks_rescaled":
        return 1e-3
    return 1e-3 / (family.C1 * (family.d + family.q - 2))


def scaling_radius(family: BarrierFamily, tau) -> np.ndarray | float:
    """``R(tau)``; closed form where one exists, RK4 otherwise."""
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(tau_arr < 0):
        raise ValueError("tau must be nonnegative")
    d, r0 = family.d, family.R0
    if family.ode == "pks_rescaled":
        out = (1.0 + (r0**d - 1.0) * np.exp(-tau_arr)) ** (1.0 / d)
    elif family.q == 2:
        out = (1.0 + (r0**d - 1.0) * np.exp(-family.C1 * d * tau_arr)) ** (1.0 / d)
    else:
        out = integrate_radius(radius_rhs(family), r0, tau_arr, default_step(family))
    return float(out[0]) if np.ndim(tau) == 0 else out


def barrier_profile(family: BarrierFamily, tau: float, grid: RadialGrid | None = None) -> RadialProfile:
    """``R(tau)^-d base(./R(tau))`` rebinned onto ``grid``."""
    return rescale_profile(family.base.profile, float(scaling_radius(family, tau)), grid)


@dataclass(frozen=True)
class OrderingReport:
    ordered: bool
    worst_violation: float
    at_radius: float
    tolerance: float

    def as_dict(self) -> dict:
        return {
            "ordered": self.ordered,
            "worst_violation": self.worst_violation,
            "at_radius": self.at_radius,
        }


def check_ordering(lower: RadialProfile, upper: RadialProfile, tol: float = 0.0) -> OrderingReport:
    """Whether ``lower`` is less concentrated than ``upper``: ``M_lower <= M_upper``.

    ``worst_violation`` is ``max(M_lower - M_upper)`` over faces (negative when
    strictly ordered) and ``at_radius`` the face where it occurs.
    """
    if lower.grid != upper.grid:
        raise ValueError("profiles live on different grids")
    gap = mass_function(lower).values - mass_function(upper).values
    k = int(np.argmax(gap))
    worst = float(gap[k])
    return OrderingReport(worst <= tol, worst, float(lower.grid.faces[k]), tol)


def aggregation_rate_constant(us: StationaryResult, d: int | None = None) -> float:
    """``C_A / d`` with ``C_A`` the mean density of ``u_s`` on its support ball."""
    d = us.profile.grid.d if d is None else d
    radius = us.support_radius
    if not (radius > 0 and math.isfinite(radius)):
        raise ValueError("steady state has a degenerate support")
    volume = us.profile.grid.sigma / d * radius**d
    return us.total_mass / volume / d


def aggregation_families(
    us: StationaryResult, q: float, R_sub: float, R_super: float
) -> tuple[BarrierFamily, BarrierFamily]:
    """Subsolution (``R0 > 1``) and supersolution (``R0 < 1``) families.

    Both use ``C1 = C_A/d``.  Since ``M(r; u_s) >= C_A |B(0, r)|`` inside the
    support, the barrier inequality for the scaled steady state holds with this
    constant whether the family contracts (``R0 > 1``) or expands (``R0 < 1``).
    """
    if not (R_sub >= 1 >= R_super > 0):
        raise ValueError("need R_sub >= 1 >= R_super > 0")
    c1 = aggregation_rate_constant(us)
    sub = BarrierFamily(us, R_sub, "aggregation", c1, q, "subsolution")
    sup = BarrierFamily(us, R_super, "aggregation", c1, q, "supersolution")
    return sub, sup


def bracketing_radii(
    base: RadialProfile, profile: RadialProfile, lo: float = 1e-3, hi: float = 1e3
) -> tuple[float, float]:
    """Radii ``(R_in, R_out)`` with ``base_{R_out} < profile < base_{R_in}``.

    ``base_R = R^-d base(./R)``.  ``R_in`` is the largest radius whose member
    still dominates the profile and ``R_out`` the smallest radius dominated by
    it, each found by bisection on ``log R``.
    """
    grid = profile.grid
    m_prof = mass_function(profile).values
    m_base = mass_function(base)

    def member(r):
        vals = np.asarray(m_base(grid.faces / r))
        return vals

    def dominates(r):  # profile < base_r
        return np.all(m_prof <= member(r) + 1e-13 * profile.mass)

    def dominated(r):  # base_r < profile
        return np.all(member(r) <= m_prof + 1e-13 * profile.mass)

    def search(pred, a, b, want_largest):
        if not pred(a if want_largest else b):
            raise ValueError("profile cannot be bracketed by the scaled family in the search range")
        la, lb = math.log(a), math.log(b)
        for _ in range(100):
            mid = 0.5 * (la + lb)
            ok = pred(math.exp(mid))
            if want_largest:
                la, lb = (mid, lb) if ok else (la, mid)
            else:
                la, lb = (la, mid) if ok else (mid, lb)
        return math.exp(la if want_largest else lb)

    r_in = search(dominates, lo, hi, True)
    r_out = search(dominated, lo, hi, False)
    return r_in, r_out


def critical_density_bound(initial: RadialProfile, u1: StationaryResult) -> float:
    """``L^inf`` bound for the critical-mass PKS flow from comparison with ``u_R``.

    The decreasing rearrangement of the data is dominated by ``u_R1`` for the
    largest such ``R1``; the bound is ``R1^-d u_1(0)``.
    """
    from .radial import decreasing_rearrangement

    star = decreasing_rearrangement(initial)
    d = initial.grid.d
    m_star = mass_function(star).values
    faces = initial.grid.faces
    # u_1 in closed mass-function form on its own fine grid
    m1 = mass_function(u1.profile)
    scale = star.mass / u1.total_mass

    def dominates(r):
        vals = np.asarray(m1(np.minimum(faces / r, m1.grid.r_max)))
        return np.all(m_star <= scale * vals * (1 + 1e-12) + 1e-13 * star.mass)

    la, lb = math.log(1e-6), math.log(1e6)
    if not dominates(math.exp(la)):
        raise ValueError("no member of the stationary family dominates the data")
    for _ in range(200):
        mid = 0.5 * (la + lb)
        la, lb = (mid, lb) if dominates(math.exp(mid)) else (la, mid)
    r1 = math.exp(la)
    return float(r1 ** (-d) * u1.central_density)
