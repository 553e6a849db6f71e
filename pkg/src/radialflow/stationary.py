"""Stationary and self-similar profiles.

Critical PKS profiles are written in the pressure ``p = m/(m-1) u^(m-1)``:

    p' = -a r - c2 M / (sigma_d r^(d-1)),    M' = sigma_d r^(d-1) u(p),

integrated outward from ``p(0) = p0`` by classical RK4 until ``p`` reaches
zero.  ``a = 0`` gives the critical family ``u_R``; ``a = 1/d`` the rescaled
profile ``mu_A``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import optimize
from scipy.integrate import cumulative_simpson
from scipy.special import beta as beta_fn, betainc

from .model import critical_exponent, preset
from .nonlocal_fields import face_kernel_matrix
from .radial import MassFunction, RadialGrid, RadialProfile, density_from_mass, sphere_area


class ShootingError(RuntimeError):
    pass


class SupercriticalMassError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StationaryResult:
    profile: RadialProfile
    support_radius: float
    total_mass: float
    central_density: float
    residual: float
    kind: str = ""
    info: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "support_radius": self.support_radius,
            "total_mass": self.total_mass,
            "central_density": self.central_density,
            "residual": self.residual,
        }


@njit(cache=True)
def _rhs(r, p, mass, a, c2, d, sigma, inv_m1, m_over):
    if r > 0.0:
        area = sigma * r ** (d - 1)
        dp = -a * r - c2 * mass / area
    else:
        area = 0.0
        dp = 0.0
    u = (p / m_over) ** inv_m1 if p > 0.0 else 0.0
    return dp, area * u


@njit(cache=True)
def _rk4(r, p, mass, h, a, c2, d, sigma, inv_m1, m_over):
    k1p, k1m = _rhs(r, p, mass, a, c2, d, sigma, inv_m1, m_over)
    k2p, k2m = _rhs(r + 0.5 * h, p + 0.5 * h * k1p, mass + 0.5 * h * k1m, a, c2, d, sigma, inv_m1, m_over)
    k3p, k3m = _rhs(r + 0.5 * h, p + 0.5 * h * k2p, mass + 0.5 * h * k2m, a, c2, d, sigma, inv_m1, m_over)
    k4p, k4m = _rhs(r + h, p + h * k3p, mass + h * k3m, a, c2, d, sigma, inv_m1, m_over)
    return (
        p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        mass + h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m),
    )


@njit(cache=True)
def _shoot_kernel(p0, a, c2, d, h, max_steps):
    sigma = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    m = 2.0 - 2.0 / d
    inv_m1 = 1.0 / (m - 1.0)
    m_over = m / (m - 1.0)
    rs = np.empty(max_steps + 1)
    ps = np.empty(max_steps + 1)
    ms = np.empty(max_steps + 1)
    rs[0] = 0.0
    ps[0] = p0
    ms[0] = 0.0
    # The coefficient M/r^(d-1) varies on the scale r, so plain RK4 steps near
    # the origin carry an O(h^2) global error.  Start with a series step and
    # resolve the first few coarse steps with fine substeps.
    fine = 64
    hf = h / fine
    u0 = (p0 / m_over) ** inv_m1
    alpha = a + c2 * u0 / d
    u1 = -inv_m1 * u0 * alpha / (2.0 * p0)
    p = p0 - 0.5 * alpha * hf * hf - c2 * u1 * hf**4 / (4.0 * (d + 2.0))
    mass = sigma * (u0 * hf**d / d + u1 * hf ** (d + 2) / (d + 2.0))
    if p <= 0.0:
        return -2, h, mass, rs[:1], ps[:1], ms[:1]
    for i in range(max_steps):
        r = i * h
        if i < 16:
            p_new = p
            m_new = mass
            j0 = 1 if i == 0 else 0
            for j in range(j0, fine):
                p_new, m_new = _rk4(r + j * hf, p_new, m_new, hf, a, c2, d, sigma, inv_m1, m_over)
                if p_new <= 0.0:
                    break
        else:
            p_new, m_new = _rk4(r, p, mass, h, a, c2, d, sigma, inv_m1, m_over)
        if i == 0 and p_new <= 0.0:
            return -2, h, mass, rs[:1], ps[:1], ms[:1]
        if p_new <= 0.0:
            lo = 0.0
            hi = h
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                pm, _mm = _rk4(r, p, mass, mid, a, c2, d, sigma, inv_m1, m_over)
                if pm > 0.0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-16 * (r + h):
                    break
            s = 0.5 * (lo + hi)
            _pp, m_star = _rk4(r, p, mass, s, a, c2, d, sigma, inv_m1, m_over)
            return i, r + s, m_star, rs[: i + 1], ps[: i + 1], ms[: i + 1]
        p = p_new
        mass = m_new
        rs[i + 1] = (i + 1) * h
        ps[i + 1] = p
        ms[i + 1] = mass
    return -1, rs[max_steps], mass, rs, ps, ms


def _pressure(d: int, density: float) -> float:
    m = critical_exponent(d)
    return m / (m - 1.0) * density ** (m - 1.0)


def _natural_length(d: int, h: float, a: float) -> float:
    p0 = _pressure(d, h)
    length = math.sqrt(p0 / h)
    if a > 0:
        length = min(length, math.sqrt(p0 / a))
    return length


@dataclass
class _Shot:
    steps: int
    radius: float
    mass: float
    r: np.ndarray
    p: np.ndarray
    M: np.ndarray


def _shoot(d: int, h: float, a: float, c2: float, step: float, max_steps: int) -> _Shot:
    n, r_star, m_star, r, p, mm = _shoot_kernel(_pressure(d, h), a, c2, d, step, max_steps)
    if n == -2:
        raise ShootingError("step larger than the profile; refine the step")
    if n < 0:
        raise ShootingError(
            f"profile did not reach zero within r = {max_steps * step:.6g} "
            f"(central density {h:.6g}, last pressure {p[-1]:.3e})"
        )
    return _Shot(n, r_star, m_star, r, p, mm)


def _support_and_mass(d, h, a, c2, steps_per_length, max_length=1e3):
    step = _natural_length(d, h, a) / steps_per_length
    max_steps = int(max_length * steps_per_length)
    shot = _shoot(d, h, a, c2, step, max_steps)
    return shot


def _profile_on_grid(d, h, a, c2, grid: RadialGrid, substeps: int, mass_target=None):
    """Integrate with steps aligned to the grid faces and build cell averages."""
    step = grid.dr / substeps
    max_steps = grid.n_cells * substeps
    n, r_star, m_star, r, p, mm = _shoot_kernel(_pressure(d, h), a, c2, d, step, max_steps)
    if n == -2:
        raise ShootingError("grid spacing larger than the profile; refine the grid")
    if n < 0:
        raise ShootingError(
            f"support exceeds the grid (r_max = {grid.r_max:.6g}); enlarge the grid"
        )
    faces_m = np.full(grid.n_cells + 1, m_star)
    n_face = n // substeps  # faces at or below the last full step
    faces_m[: n_face + 1] = mm[: n_face * substeps + 1 : substeps]
    faces_m[0] = 0.0
    faces_m = np.maximum.accumulate(faces_m)
    profile = density_from_mass(MassFunction(grid, faces_m))
    if mass_target is not None:
        profile = profile.scaled_mass(mass_target)

    # integrated residual of p' = -a r - c2 M/(sigma r^(d-1)) along the solution
    sigma = sphere_area(d)
    rr, pp, mmm = r[: n + 1], p[: n + 1], mm[: n + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        f = -a * rr - c2 * np.where(rr > 0, mmm / (sigma * rr ** (d - 1)), 0.0)
    if rr.size >= 3:
        integral = np.concatenate(([0.0], cumulative_simpson(f, x=rr)))
        residual = float(np.max(np.abs(pp - pp[0] - integral)) / pp[0])
    else:
        residual = 0.0
    return profile, r_star, m_star, residual


def _auto_grid(d: int, radius: float, n_cells: int, pad: float = 1.25) -> RadialGrid:
    return RadialGrid(d, radius * pad, n_cells)


def solve_u1(
    d: int,
    central_density: float = 1.0,
    grid: RadialGrid | None = None,
    n_cells: int = 256,
    steps_per_length: int = 2000,
    substeps: int = 16,
) -> StationaryResult:
    """Critical stationary profile with prescribed central density.

    ``m/(m-1) Lap u^(m-1) + u = 0`` up to its first zero.  At the critical
    exponent the mass of this profile does not depend on the central density.
    """
    if central_density <= 0:
        raise ValueError("central density must be positive")
    shot = _support_and_mass(d, central_density, 0.0, 1.0, steps_per_length)
    grid = _auto_grid(d, shot.radius, n_cells) if grid is None else grid
    profile, _r, _m, residual = _profile_on_grid(d, central_density, 0.0, 1.0, grid, substeps, shot.mass)
    return StationaryResult(
        profile, shot.radius, shot.mass, central_density, residual, kind="u1",
        info={"step": _natural_length(d, central_density, 0.0) / steps_per_length},
    )


@lru_cache(maxsize=None)
def critical_mass(d: int, steps_per_length: int = 2000) -> float:
    """Mass of the critical stationary family, Richardson-extrapolated in the step."""
    coarse = _support_and_mass(d, 1.0, 0.0, 1.0, steps_per_length).mass
    fine = _support_and_mass(d, 1.0, 0.0, 1.0, 2 * steps_per_length).mass
    return fine + (fine - coarse) / 15.0


def _rescaled_mass(d: int, h: float, steps_per_length: int) -> float:
    return _support_and_mass(d, h, 1.0 / d, 1.0, steps_per_length).mass


def central_density_for_mass(d: int, mass: float, steps_per_length: int = 1000) -> float:
    """Central density of ``mu_A`` by bisection on the shooting map."""
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    mc = critical_mass(d)
    if mass >= mc:
        raise SupercriticalMassError(
            f"no compactly supported rescaled profile for mass {mass:.6g} >= M_c = {mc:.6g}"
        )

    def f(log_h):
        return _rescaled_mass(d, math.exp(log_h), steps_per_length) / mass - 1.0

    lo, hi = 0.0, 0.0
    while f(lo) > 0:
        lo -= 2.0
        if lo < -300:
            raise ShootingError("could not bracket the central density from below")
    while f(hi) < 0:
        hi += 2.0
        if hi > 300:
            raise SupercriticalMassError(f"mass {mass:.6g} not reached by the shooting map")
    log_h = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return math.exp(log_h)


def solve_mu_A(
    d: int,
    mass: float,
    grid: RadialGrid | None = None,
    n_cells: int = 256,
    steps_per_length: int = 1000,
    substeps: int = 16,
) -> StationaryResult:
    """Stationary profile of the rescaled critical PKS equation with mass ``mass``."""
    h = central_density_for_mass(d, mass, steps_per_length)
    shot = _support_and_mass(d, h, 1.0 / d, 1.0, steps_per_length)
    grid = _auto_grid(d, shot.radius, n_cells) if grid is None else grid
    profile, _r, _m, residual = _profile_on_grid(d, h, 1.0 / d, 1.0, grid, substeps, mass)
    return StationaryResult(
        profile, shot.radius, mass, h, residual, kind="mu_A",
        info={"shot_mass": shot.mass},
    )


def porous_medium_limit(d: int, central_density: float, a: float = None):
    """``(C - (m-1) a r^2 / (2m))_+^(1/(m-1))`` with ``C`` set by the central density.

    The rescaled profile drops to this shape when the interaction is negligible.
    """
    m = critical_exponent(d)
    a = 1.0 / d if a is None else a
    c = central_density ** (m - 1.0)
    b = a * (m - 1.0) / (2.0 * m)
    return lambda r: np.maximum(c - b * np.asarray(r) ** 2, 0.0) ** (1.0 / (m - 1.0))


def fokker_planck_profile(
    d: int, a: float, mass: float, grid: RadialGrid | None = None, n_cells: int = 256
) -> StationaryResult:
    """Stationary Barenblatt profile of ``u_t = Lap u^m + div(u grad(a|x|^2/2))``.

    ``u = (C - b r^2)_+^k`` with ``b = a(m-1)/(2m)``, ``k = 1/(m-1)``; the mass
    integral is a Beta function so ``C`` follows in closed form.
    """
    if not (a > 0 and mass > 0):
        raise ValueError("need a > 0 and mass > 0")
    m = critical_exponent(d)
    k = 1.0 / (m - 1.0)
    b = a * (m - 1.0) / (2.0 * m)
    sigma = sphere_area(d)
    unit = 0.5 * sigma * beta_fn(d / 2.0, k + 1.0) * b ** (-d / 2.0)
    c = (mass / unit) ** (1.0 / (k + d / 2.0))
    radius = math.sqrt(c / b)
    grid = _auto_grid(d, radius, n_cells) if grid is None else grid
    if grid.r_max < radius:
        raise ValueError(f"support radius {radius:.6g} exceeds grid r_max {grid.r_max:.6g}")
    s2 = np.minimum(grid.faces / radius, 1.0) ** 2
    faces_m = mass * betainc(d / 2.0, k + 1.0, s2)
    profile = density_from_mass(MassFunction(grid, faces_m))
    return StationaryResult(
        profile, radius, mass, c**k, 0.0, kind="fokker_planck", info={"C": c, "b": b},
    )


def _cell_operator(grid: RadialGrid, q: float) -> np.ndarray:
    t = face_kernel_matrix(grid, q)
    return np.diff(t, axis=0) / grid.volumes[:, None]


def steady_radius_estimate(d: int, q: float, n_cells: int = 128) -> float:
    """Support radius of the aggregation steady state.

    The steady state is the Perron vector of ``u -> (q+d-2)|x|^(q-2) * u``
    restricted to a ball, at the radius where its eigenvalue equals 1.  The
    eigenvalue scales like ``R^(d+q-2)``, so one eigen-solve on the unit ball
    fixes the radius, independently of the mass.
    """
    grid = RadialGrid(d, 1.0, n_cells)
    k = _cell_operator(grid, q)
    lam = np.max(np.real(np.linalg.eigvals(k)))
    return float(lam ** (-1.0 / (d + q - 2.0)))


def _null_vector(grid: RadialGrid, t: np.ndarray, k: int) -> np.ndarray:
    """Cell values on cells ``0..k`` with zero face speed on faces ``1..k``."""
    vol = grid.volumes[: k + 1]
    lower = np.tril(np.ones((k + 1, k + 1)), -1)[1:, :] * vol[None, :]  # M at faces 1..k
    e = lower - t[1 : k + 1, : k + 1]
    _u, _s, vt = np.linalg.svd(e)
    x = vt[-1]
    return x if x.sum() >= 0 else -x


def solve_us(
    d: int,
    q: float,
    mass: float,
    grid: RadialGrid | None = None,
    n_cells: int = 256,
    tol: float = 1e-10,
) -> StationaryResult:
    """Steady state of the repulsive-attractive aggregation equation.

    Solves the discrete steady-state problem of the finite-volume flux used by
    :mod:`radialflow.evolution`: on cells ``0..k`` the face speed
    ``(-M + Mt) / (sigma r^(d-1))`` vanishes, which is a homogeneous linear
    system with a one-dimensional null space; the mass fixes the scale.  The
    outermost occupied cell is partially filled and the speed on its outer
    face must point inward.
    """
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    if not (2 - d < q <= 2):
        raise ValueError(f"kernel exponent q={q} outside ({2 - d}, 2] for d={d}")
    radius_est = steady_radius_estimate(d, q)
    grid = _auto_grid(d, radius_est, n_cells) if grid is None else grid
    if grid.r_max <= radius_est:
        raise ValueError(f"grid r_max {grid.r_max:.6g} does not contain R_A ~ {radius_est:.6g}")
    t = face_kernel_matrix(grid, float(q))
    k0 = min(int(radius_est / grid.dr), grid.n_cells - 2)
    history = []
    order = sorted(range(max(k0 - 4, 1), min(k0 + 5, grid.n_cells - 1)), key=lambda k: abs(k - k0))
    for k in order:
        x = _null_vector(grid, t, k)
        vol = grid.volumes[: k + 1]
        total = float(x @ vol)
        if total <= 0:
            history.append((k, "nonpositive mass"))
            continue
        u = x * (mass / total)
        outer_pull = float(t[k + 1, : k + 1] @ u) - mass
        ok_sign = np.all(u >= -tol * u.max())
        ok_last = u[k] <= u[k - 1] * (1 + 1e-9) if q <= 2 and k > 0 else True
        history.append((k, float(u.min()), outer_pull))
        if ok_sign and ok_last and outer_pull >= -tol * mass:
            values = np.zeros(grid.n_cells)
            values[: k + 1] = np.maximum(u, 0.0)
            profile = RadialProfile(grid, values)
            m_faces = np.concatenate(([0.0], np.cumsum(values * grid.volumes)))
            mt = t @ values
            defect = np.abs(m_faces[1 : k + 1] - mt[1 : k + 1]) / mass
            # partially filled outer cell: extend the neighbouring density
            fill = values[k] * grid.volumes[k] / max(values[k - 1], 1e-300)
            radius = (grid.face_volumes[k] + fill) * d / grid.sigma
            radius = float(radius ** (1.0 / d))
            return StationaryResult(
                profile, radius, mass, float(values[0]), float(defect.max(initial=0.0)),
                kind="u_s", info={"q": q, "cells": k + 1, "radius_estimate": radius_est},
            )
    raise ShootingError(f"no admissible discrete steady state near R_A ~ {radius_est:.6g}: {history}")
