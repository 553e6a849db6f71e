"""Energies, moments, radial Wasserstein distances and rate fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .model import ModelSpec, critical_exponent, preset
from .radial import RadialProfile, mass_function, quantile, second_moment


def entropy(profile: RadialProfile, m: float) -> float:
    """``int u^m / (m-1) dx``."""
    if not m > 1:
        raise ValueError(f"m must exceed 1, got {m}")
    return float(np.sum(profile.values**m * profile.grid.volumes) / (m - 1.0))


def interaction_energy(profile: RadialProfile) -> float:
    """``int u (u * N) dx = -int_0^inf M^2 / (sigma_d r^(d-1)) dr``.

    Exact for cellwise-constant densities: inside a cell ``M = alpha + beta r^d``
    and the integrand is a sum of three powers of ``r``.  Beyond ``r_max`` the
    mass is constant and the tail integrates in closed form.
    """
    g = profile.grid
    d = g.d
    u = profile.values
    mf = mass_function(profile).values
    lo, hi = g.faces[:-1], g.faces[1:]
    beta = u * g.sigma / d
    alpha = mf[:-1] - beta * lo**d
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(lo > 0, alpha**2 * (hi ** (2 - d) - lo ** (2 - d)) / (2 - d), 0.0)
    t2 = alpha * beta * (hi**2 - lo**2)
    t3 = beta**2 * (hi ** (d + 2) - lo ** (d + 2)) / (d + 2)
    inner = np.sum(t1 + t2 + t3)
    tail = mf[-1] ** 2 * g.r_max ** (2 - d) / (d - 2)
    return float(-(inner + tail) / g.sigma)


def free_energy(profile: RadialProfile, m: float | None = None) -> float:
    """``int u^m/(m-1) + (1/2) int u (u * N)``."""
    m = critical_exponent(profile.grid.d) if m is None else m
    return entropy(profile, m) + 0.5 * interaction_energy(profile)


def rescaled_energy(profile: RadialProfile, d: int | None = None) -> float:
    """Free energy plus the confinement term ``int |x|^2 u / (2d)``."""
    d = profile.grid.d if d is None else d
    return free_energy(profile, critical_exponent(d)) + second_moment(profile) / (2.0 * d)


def dissipation_defect(
    profile: RadialProfile, m: float | None = None, spec: ModelSpec | None = None
) -> float:
    """``int u |d_r p + v|^2 dx`` with pressure ``p = m/(m-1) u^(m-1)``.

    Uses the scheme's face velocities ``w`` and transported face densities:
    ``sum dr S w^2 u_face``, which vanishes exactly on discrete equilibria.  ``spec`` defaults to the
    original critical PKS model.
    """
    from .evolution import face_velocities

    g = profile.grid
    if spec is None:
        spec = preset("pks_original", g.d)
    if m is not None and m != spec.m:
        spec = replace(spec, m=m)
    w, u_face = face_velocities(profile, spec)
    return float(np.sum(g.dr * g.face_areas[1:-1] * w[1:-1] ** 2 * u_face[1:-1]))


def virial_check(
    times: Sequence[float], profiles: Sequence[RadialProfile], d: int | None = None
) -> dict:
    """Compare ``dM2/dt`` with ``2(d-2) F`` at interior snapshots.

    Centred differences on possibly uneven spacing.  Returns the times,
    both sides and relative residuals ``|lhs - rhs| / |rhs|``.
    """
    if len(profiles) < 3 or len(times) != len(profiles):
        raise ValueError("need at least 3 snapshots with matching times")
    d = profiles[0].grid.d if d is None else d
    t = np.asarray(times, dtype=float)
    m2 = np.array([second_moment(p) for p in profiles])
    energy = np.array([free_energy(p, critical_exponent(d)) for p in profiles])
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    # second-order centred derivative on a nonuniform grid
    lhs = (
        -h1 / (h0 * (h0 + h1)) * m2[:-2]
        + (h1 - h0) / (h0 * h1) * m2[1:-1]
        + h0 / (h1 * (h0 + h1)) * m2[2:]
    )
    rhs = 2.0 * (d - 2) * energy[1:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(lhs - rhs) / np.abs(rhs)
    return {"t": t[1:-1], "dm2_dt": lhs, "virial": rhs, "relative": rel, "m2": m2, "energy": energy}


def hls_ratio(profile: RadialProfile, m: float | None = None) -> float:
    """``|int u (u * N)| / (||u||_1^(2/d) ||u||_m^m)``."""
    d = profile.grid.d
    m = critical_exponent(d) if m is None else m
    mass = profile.mass
    if not mass > 0:
        raise ValueError("hls_ratio of the zero profile is undefined")
    norm_m = float(np.sum(profile.values**m * profile.grid.volumes))
    return abs(interaction_energy(profile)) / (mass ** (2.0 / d) * norm_m)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def wasserstein(p: float, a: RadialProfile, b: RadialProfile, rtol: float = 1e-8) -> float:
    """``W_p`` between ``a/|a|`` and ``b/|b|`` through the radial quantile coupling.

    Both quantile functions have ``Q^d`` affine in the mass level between
    breakpoints, so the integral is split at the union of breakpoints.  The
    first segment uses ``s = s1 t^d`` to remove the ``s^(1/d)`` cusp.
    """
    if p < 1:
        raise ValueError("order p must be >= 1")
    if a.grid.d != b.grid.d:
        raise ValueError("dimension mismatch")
    ma, mb = a.mass, b.mass
    if not (ma > 0 and mb > 0):
        raise ValueError("Wasserstein distance needs nonzero profiles")
    if abs(ma - mb) > rtol * max(ma, mb):
        raise ValueError(f"mass mismatch: {ma!r} vs {mb!r}")
    fa, fb = mass_function(a), mass_function(b)
    levels = np.union1d(fa.values / ma, fb.values / mb)
    levels = levels[(levels > 0) & (levels < 1)]
    breaks = np.concatenate(([0.0], levels, [1.0]))
    lo, hi = breaks[:-1], breaks[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]

    x01 = 0.5 * (_GL_X + 1.0)
    w01 = 0.5 * _GL_W
    # first segment: s = s1 t^d
    d = a.grid.d
    s_first = hi[0] * x01**d
    w_first = w01 * d * hi[0] * x01 ** (d - 1)
    s_rest = (lo[1:, None] + (hi - lo)[1:, None] * x01[None, :]).ravel()
    w_rest = ((hi - lo)[1:, None] * w01[None, :]).ravel()
    s = np.concatenate((s_first, s_rest))
    w = np.concatenate((w_first, w_rest))
    qa = quantile(fa, s * ma)
    qb = quantile(fb, s * mb)
    return float(np.sum(w * np.abs(qa - qb) ** p) ** (1.0 / p))


@dataclass(frozen=True)
class RateFit:
    mode: str
    exponent: float
    log_prefactor: float
    r2: float
    window: tuple[float, float]
    n_points: int

    @property
    def prefactor(self) -> float:
        return math.exp(self.log_prefactor)

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "log_prefactor": self.log_prefactor,
            "r2": self.r2,
            "window": list(self.window),
        }


def _as_columns(series) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(series, tuple) and len(series) == 2:
        t, v = series
        return np.asarray(t, dtype=float), np.asarray(v, dtype=float)
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be (times, values) or a list of (time, value) pairs")
    return arr[:, 0], arr[:, 1]


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), min(max(r2, 0.0), 1.0)


def fit_rate(series, mode: str = "exponential", window: tuple[float, float] | None = None) -> RateFit:
    """Least-squares rate of ``value ~ C e^(k t)`` or ``value ~ C t^k``.

    The default window drops the first 20% of the time span.
    """
    if mode in ("exp", "exponential"):
        mode = "exponential"
    elif mode in ("alg", "algebraic"):
        mode = "algebraic"
    else:
        raise ValueError(f"mode must be exponential or algebraic, got {mode!r}")
    t, v = _as_columns(series)
    if window is None:
        window = (t.min() + 0.2 * (t.max() - t.min()), t.max())
    sel = (t >= window[0]) & (t <= window[1])
    t, v = t[sel], v[sel]
    if t.size < 5:
        raise ValueError(f"need at least 5 points in the fit window, got {t.size}")
    if np.any(v <= 0):
        raise ValueError("values must be positive inside the fit window")
    if mode == "algebraic":
        if np.any(t <= 0):
            raise ValueError("algebraic fits need positive times")
        x = np.log(t)
    else:
        x = t
    slope, intercept, r2 = _linear_fit(x, np.log(v))
    return RateFit(mode, slope, intercept, r2, (float(window[0]), float(window[1])), int(t.size))


def sup_density_scaling(
    masses: Sequence[float],
    d: int,
    tau: float = 2.0,
    n_cells: int = 128,
    radius_factor: float = 1.0,
    initial_radius: float | None = None,
) -> tuple[RateFit, np.ndarray]:
    """Slope of ``log sup u(tau)`` against ``log A`` for the rescaled PKS flow.

    Each run starts from the shape ``(1 - (r/R)^2)_+`` scaled to mass ``A``.
    By default ``R`` is ``radius_factor`` times the support of the small-mass
    stationary profile of that mass, so the data share one shape in the
    variables where small-mass profiles coincide; pass ``initial_radius`` to
    keep one support for all masses instead.
    """
    from .evolution import StepControl, evolve
    from .radial import RadialGrid
    from .stationary import critical_mass, fokker_planck_profile

    masses = np.asarray(masses, dtype=float)
    if masses.size < 2:
        raise ValueError("need at least two masses")
    mc = critical_mass(d)
    if np.any(masses >= 0.5 * mc) or np.any(masses <= 0):
        raise ValueError("masses must lie in (0, M_c/2)")
    spec = preset("pks_rescaled", d)
    sups = []
    for a in masses:
        if initial_radius is None:
            radius = radius_factor * fokker_planck_profile(d, 1.0 / d, float(a)).support_radius
        else:
            radius = initial_radius
        grid = RadialGrid(d, 2.5 * max(radius, fokker_planck_profile(d, 1.0 / d, float(a)).support_radius), n_cells)
        shape = RadialProfile.from_function(grid, lambda r: np.maximum(1.0 - (r / radius) ** 2, 0.0))
        traj = evolve(shape.scaled_mass(float(a)), spec, StepControl(), tau, raise_on_signal=True)
        sups.append(traj.final.profile.sup)
    sups = np.asarray(sups)
    slope, intercept, r2 = _linear_fit(np.log(masses), np.log(sups))
    fit = RateFit("algebraic", slope, intercept, r2, (float(masses.min()), float(masses.max())), int(masses.size))
    return fit, sups
