"""Radial grids, density profiles and mass functions.

Everything in the package lives on a uniform cell-centred grid in the radial
variable of ``R^d``.  Densities are stored per cell; the cumulative mass
``M(r)`` is stored at cell faces, so it is exactly nondecreasing whenever the
density is nonnegative.  Inside a cell the density is taken to be constant,
which makes ``M`` affine in ``r**d`` between faces; every interpolation in
this module uses that rule.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in ``R^d``."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(d: int, r: float | np.ndarray) -> float | np.ndarray:
    return sphere_area(d) / d * np.asarray(r, dtype=float) ** d


@dataclass(frozen=True)
class RadialGrid:
    d: int
    r_max: float
    n_cells: int

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 3:
            raise ValueError(f"dimension must be an integer >= 3, got {self.d}")
        if not self.r_max > 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 8:
            raise ValueError(f"n_cells must be an integer >= 8, got {self.n_cells}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "r_max", float(self.r_max))

    @cached_property
    def sigma(self) -> float:
        return sphere_area(self.d)

    @cached_property
    def dr(self) -> float:
        return self.r_max / self.n_cells

    @cached_property
    def faces(self) -> np.ndarray:
        f = np.arange(self.n_cells + 1) * self.dr
        f[-1] = self.r_max
        f.flags.writeable = False
        return f

    @cached_property
    def centers(self) -> np.ndarray:
        c = (np.arange(self.n_cells) + 0.5) * self.dr
        c.flags.writeable = False
        return c

    @cached_property
    def face_volumes(self) -> np.ndarray:
        """Volume of the ball bounded by each face."""
        v = self.sigma / self.d * self.faces**self.d
        v.flags.writeable = False
        return v

    @cached_property
    def volumes(self) -> np.ndarray:
        v = np.diff(self.face_volumes)
        v.flags.writeable = False
        return v

    @cached_property
    def face_areas(self) -> np.ndarray:
        """``sigma_d r^(d-1)`` at each face (zero at the origin)."""
        a = self.sigma * self.faces ** (self.d - 1)
        a.flags.writeable = False
        return a

    def scaled(self, factor: float) -> "RadialGrid":
        """Same number of cells, radius multiplied by ``factor``."""
        return RadialGrid(self.d, self.r_max * factor, self.n_cells)


def _check_same_grid(a: RadialGrid, b: RadialGrid) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """Nonnegative cell-averaged density on a :class:`RadialGrid`."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        u = np.array(self.values, dtype=float)
        if u.shape != (self.grid.n_cells,):
            raise ValueError(
                f"expected {self.grid.n_cells} cell values, got shape {u.shape}"
            )
        if not np.all(np.isfinite(u)):
            raise ValueError("profile contains non-finite values")
        if np.any(u < 0):
            i = int(np.argmax(u < 0))
            raise ValueError(f"negative density {u[i]:.3e} in cell {i}")
        u.flags.writeable = False
        object.__setattr__(self, "values", u)

    @classmethod
    def zeros(cls, grid: RadialGrid) -> "RadialProfile":
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def from_function(cls, grid: RadialGrid, f, n_quad: int = 8) -> "RadialProfile":
        """Cell averages of a radial function by Gauss-Legendre in ``r``."""
        x, w = np.polynomial.legendre.leggauss(n_quad)
        lo, hi = grid.faces[:-1], grid.faces[1:]
        r = 0.5 * (hi - lo)[:, None] * x[None, :] + 0.5 * (hi + lo)[:, None]
        jac = 0.5 * (hi - lo)[:, None] * w[None, :] * grid.sigma * r ** (grid.d - 1)
        mass = np.sum(np.asarray(f(r), dtype=float) * jac, axis=1)
        return cls(grid, mass / grid.volumes)

    @property
    def cell_masses(self) -> np.ndarray:
        return self.values * self.grid.volumes

    @property
    def mass(self) -> float:
        return float(np.sum(self.cell_masses))

    @property
    def sup(self) -> float:
        return float(self.values.max())

    @property
    def support_index(self) -> int:
        """Number of cells up to and including the outermost positive one."""
        nz = np.flatnonzero(self.values > 0)
        return 0 if nz.size == 0 else int(nz[-1]) + 1

    @property
    def support_radius(self) -> float:
        return float(self.grid.faces[self.support_index])

    def is_nonincreasing(self, rtol: float = 0.0) -> bool:
        u = self.values
        return bool(np.all(u[1:] <= u[:-1] * (1.0 + rtol)))

    def with_values(self, values: np.ndarray) -> "RadialProfile":
        return RadialProfile(self.grid, values)

    def scaled_mass(self, mass: float) -> "RadialProfile":
        """Multiply the density so the total mass equals ``mass``."""
        current = self.mass
        if current <= 0:
            raise ValueError("cannot renormalise a zero profile")
        return RadialProfile(self.grid, self.values * (mass / current))

    def to_csv(self, path: str | Path) -> None:
        write_profile_csv(self, path)


@dataclass(frozen=True, eq=False)
class MassFunction:
    """Cumulative mass at the ``n_cells + 1`` faces of a grid."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.values, dtype=float)
        if m.shape != (self.grid.n_cells + 1,):
            raise ValueError(
                f"expected {self.grid.n_cells + 1} face values, got shape {m.shape}"
            )
        m.flags.writeable = False
        object.__setattr__(self, "values", m)

    @property
    def total(self) -> float:
        return float(self.values[-1])

    def __call__(self, r) -> np.ndarray | float:
        """Evaluate ``M(r)``; constant beyond ``r_max``."""
        g = self.grid
        r_arr = np.asarray(r, dtype=float)
        out = np.interp(np.minimum(r_arr, g.r_max) ** g.d, g.faces**g.d, self.values)
        return float(out) if out.ndim == 0 else out


def mass_function(profile: RadialProfile) -> MassFunction:
    m = np.concatenate(([0.0], np.cumsum(profile.cell_masses)))
    return MassFunction(profile.grid, m)


def density_from_mass(m: MassFunction) -> RadialProfile:
    dm = np.diff(m.values)
    if abs(m.values[0]) > 0:
        raise ValueError(f"mass function must vanish at the origin, got {m.values[0]}")
    scale = max(abs(m.total), np.finfo(float).tiny)
    bad = np.flatnonzero(dm < -1e-14 * scale)
    if bad.size:
        f = int(bad[0]) + 1
        raise ValueError(
            f"mass function decreases at face {f} (r = {m.grid.faces[f]:.6g}): "
            f"{m.values[f - 1]:.6g} -> {m.values[f]:.6g}"
        )
    return RadialProfile(m.grid, np.maximum(dm, 0.0) / m.grid.volumes)


def quantile(m: MassFunction, s) -> np.ndarray | float:
    """Smallest radius ``r`` with ``M(r) >= s``.

    Between faces ``M`` is affine in ``r**d`` (constant density per cell), so
    the inverse is exact for piecewise-constant profiles.
    """
    g = m.grid
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    total = m.total
    tol = 1e-12 * max(abs(total), 1.0)
    if np.any(s_arr < -tol) or np.any(s_arr > total + tol):
        raise ValueError(f"quantile level outside [0, {total}]")
    s_arr = np.clip(s_arr, 0.0, total)
    mv = m.values
    k = np.searchsorted(mv, s_arr, side="left")
    k = np.clip(k, 1, g.n_cells)
    lo, hi = mv[k - 1], mv[k]
    span = hi - lo
    frac = np.where(span > 0, (s_arr - lo) / np.where(span > 0, span, 1.0), 1.0)
    frac = np.clip(frac, 0.0, 1.0)
    fd = g.faces**g.d
    r = (fd[k - 1] + frac * (fd[k] - fd[k - 1])) ** (1.0 / g.d)
    r = np.where(s_arr <= 0, 0.0, r)
    return float(r[0]) if np.ndim(s) == 0 else r


def decreasing_rearrangement(profile: RadialProfile) -> RadialProfile:
    """Radially nonincreasing profile with the same distribution function.

    Cells are sorted by value and laid out outward by volume; the resulting
    step function is averaged back onto the grid cells, so mass is exact and
    level sets are preserved up to one cell volume.
    """
    g = profile.grid
    u = profile.values
    order = np.argsort(-u, kind="stable")
    vol_sorted = g.volumes[order]
    cum_vol = np.concatenate(([0.0], np.cumsum(vol_sorted)))
    cum_mass = np.concatenate(([0.0], np.cumsum(u[order] * vol_sorted)))
    target = np.concatenate(([0.0], np.cumsum(g.volumes)))
    mass_at = np.interp(target, cum_vol, cum_mass)
    out = np.diff(mass_at) / g.volumes
    # averaging a nonincreasing step function keeps it nonincreasing; remove
    # round-off inversions so the output is exactly monotone
    out = np.minimum.accumulate(np.maximum(out, 0.0))
    return RadialProfile(g, out)


def second_moment(profile: RadialProfile) -> float:
    """``int |x|^2 u dx``, integrated exactly for the piecewise-constant density."""
    g = profile.grid
    f = g.faces
    cell_r2 = g.sigma / (g.d + 2) * (f[1:] ** (g.d + 2) - f[:-1] ** (g.d + 2))
    return float(np.sum(profile.values * cell_r2))


def remap_mass(m: MassFunction, grid: RadialGrid, scale: float = 1.0) -> MassFunction:
    """Mass function of ``R^-d u(./R)`` (``R = scale``) sampled on ``grid``.

    Exact for piecewise-constant densities.  Raises if mass would be lost
    beyond the new grid's outer face.
    """
    if grid.d != m.grid.d:
        raise ValueError("dimension mismatch")
    values = np.asarray(m(grid.faces / scale))
    values[0] = 0.0
    lost = m.total - values[-1]
    if lost > 1e-12 * max(abs(m.total), 1e-300):
        raise ValueError(
            f"support overflows grid (r_max = {grid.r_max:.6g}); "
            f"mass {lost:.3e} would be lost"
        )
    values[-1] = m.total
    return MassFunction(grid, np.maximum.accumulate(values))


def rescale_profile(
    profile: RadialProfile, scale: float, grid: RadialGrid | None = None
) -> RadialProfile:
    """Mass-invariant dilation ``u_R(x) = R^-d u(x/R)`` rebinned onto ``grid``."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    grid = profile.grid if grid is None else grid
    return density_from_mass(remap_mass(mass_function(profile), grid, scale))


def rebin(profile: RadialProfile, grid: RadialGrid) -> RadialProfile:
    """Conservative transfer onto another grid of the same dimension."""
    return rescale_profile(profile, 1.0, grid)


def write_profile_csv(profile: RadialProfile, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "u"])
        for r, u in zip(profile.grid.centers, profile.values):
            w.writerow([repr(float(r)), repr(float(u))])


def read_profile_csv(path: str | Path, d: int) -> RadialProfile:
    """Read an ``r,u`` CSV written on a uniform grid of cell centres."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"r", "u"}:
        raise ValueError(f"{path}: expected header 'r,u'")
    r = np.array([float(row["r"]) for row in rows])
    u = np.array([float(row["u"]) for row in rows])
    n = r.size
    dr = 2.0 * r[0]
    if n < 8 or not np.allclose(r, (np.arange(n) + 0.5) * dr, rtol=1e-9, atol=0):
        raise ValueError(f"{path}: radii are not uniform cell centres")
    return RadialProfile(RadialGrid(d, dr * n, n), u)
