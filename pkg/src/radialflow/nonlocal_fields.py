"""Radial evaluation of the nonlocal terms.

The Newtonian part only needs the mass function: ``d/dr (u * N) = M / (sigma_d r^(d-1))``.

For the power-law part we work with ``Mt(r) = int_{B(0,r)} (Lap K * u)``.  For a
source of unit density on the shell ``a < |y| < b``

    Mt(r) = sigma_d int_a^b rho^(d-1) Phi(r, rho) d rho,

where ``Phi(r, rho)`` is the flux of ``grad K(. - y)`` through the sphere of
radius ``r`` for a point ``|y| = rho``.  ``Phi`` equals
``sigma_d r^(d-1) d/dr`` of the spherical mean of ``|x - y|^q / q``, and that mean
is ``max(r, rho)^q 2F1(-q/2, 1 - d/2 - q/2; d/2; (min/max)^2)``.  The
hypergeometric series converges at ``rho = r`` whenever ``q > 2 - d``, so ``Phi``
is bounded and the shell integral only needs ordinary Gauss-Legendre nodes.
Cell averages of ``Lap K * u`` are differences of ``Mt`` over cell volumes, so
the two outputs are consistent by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import hyp2f1

from .radial import MassFunction, RadialGrid, RadialProfile, mass_function, sphere_area


@dataclass(frozen=True)
class AngularQuadrature:
    """Gauss-Legendre rule on ``[0, pi]`` carrying the weight ``sin^(d-2)``."""

    d: int
    n_ang: int = 64

    @property
    def nodes(self) -> np.ndarray:
        return self._rule()[0]

    @property
    def weights(self) -> np.ndarray:
        return self._rule()[1]

    def _rule(self) -> tuple[np.ndarray, np.ndarray]:
        return _angular_rule(self.d, self.n_ang)

    @property
    def total_weight(self) -> float:
        """``int_0^pi sin^(d-2)(theta) d theta`` in closed form."""
        return sphere_area(self.d) / sphere_area(self.d - 1)

    def mean(self, f) -> np.ndarray:
        """Spherical mean of ``f(theta)``; ``f`` broadcasts over a trailing node axis."""
        vals = f(self.nodes)
        return np.tensordot(vals, self.weights, axes=([-1], [0])) / self.weights.sum()


@lru_cache(maxsize=None)
def _angular_rule(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    theta = 0.5 * np.pi * (x + 1.0)
    weights = 0.5 * np.pi * w * np.sin(theta) ** (d - 2)
    theta.flags.writeable = False
    weights.flags.writeable = False
    return theta, weights


def newtonian_slope(m: MassFunction, r) -> np.ndarray | float:
    """``d/dr (N * u)`` at radius ``r > 0``."""
    g = m.grid
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("newtonian_slope is undefined at r = 0 (the velocity there is 0)")
    out = np.asarray(m(r_arr)) / (g.sigma * r_arr ** (g.d - 1))
    return float(out) if out.ndim == 0 else out


def _check_q(d: int, q: float) -> None:
    if not (2 - d < q <= 2):
        raise ValueError(f"kernel exponent q={q} outside ({2 - d}, 2] for d={d}")


def flux_density(r, rho, d: int, q: float) -> np.ndarray:
    """``d/dr`` of the spherical mean of ``|x-y|^q / q`` (``log|x-y|`` at ``q = 0``).

    ``r = |x|`` and ``rho = |y|``; the mean runs over the direction of ``y``.
    Multiplying by ``sigma_d r^(d-1)`` gives the flux ``Phi``.
    """
    r, rho = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(rho, dtype=float))
    a, b, c = -q / 2.0, 1.0 - d / 2.0 - q / 2.0, d / 2.0
    inner = rho < r
    big = np.where(inner, r, rho)
    small = np.where(inner, rho, r)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(big > 0, (small / big) ** 2, 0.0)
    # (1/q) dG/dz, finite as q -> 0
    p = -(b / (2.0 * c)) * hyp2f1(a + 1.0, b + 1.0, c + 1.0, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_inner = r ** (q - 1.0) * (hyp2f1(a, b, c, z) - 2.0 * z * p)
        out_outer = 2.0 * rho ** (q - 2.0) * r * p
    out = np.where(inner, out_inner, out_outer)
    return np.where(r > 0, out, 0.0)


def flux_density_angular(r, rho, d: int, q: float, quad: AngularQuadrature | None = None):
    """Same quantity as :func:`flux_density` by direct angular quadrature.

    Independent of the hypergeometric closed form; accurate away from
    ``rho == r`` and used as a cross-check.
    """
    quad = AngularQuadrature(d) if quad is None else quad
    r = np.asarray(r, dtype=float)[..., None]
    rho = np.asarray(rho, dtype=float)[..., None]

    def integrand(theta):
        ct = np.cos(theta)
        dist2 = r * r + rho * rho - 2.0 * r * rho * ct
        with np.errstate(divide="ignore", invalid="ignore"):
            val = dist2 ** ((q - 2.0) / 2.0) * (r - rho * ct)
        return np.where(dist2 > 0, val, 0.0)

    return quad.mean(integrand)


@lru_cache(maxsize=32)
def face_kernel_matrix(grid: RadialGrid, q: float, n_radial: int = 16) -> np.ndarray:
    """Matrix ``T`` with ``Mt(r_f) = sum_j T[f, j] u_j`` for cellwise-constant ``u``.

    Shape ``(n_cells + 1, n_cells)``.  Built once per ``(grid, q)``.
    """
    _check_q(grid.d, q)
    d = grid.d
    x, w = np.polynomial.legendre.leggauss(n_radial)
    lo, hi = grid.faces[:-1], grid.faces[1:]
    half = 0.5 * (hi - lo)
    rho = half[:, None] * x[None, :] + 0.5 * (hi + lo)[:, None]  # (n, k)
    wts = half[:, None] * w[None, :] * grid.sigma * rho ** (d - 1)
    r = grid.faces[:, None, None]
    psi = flux_density(r, rho[None, :, :], d, q)  # (n+1, n, k)
    t = grid.face_areas[:, None] * np.einsum("fjk,jk->fj", psi, wts)
    t[0] = 0.0
    t.flags.writeable = False
    return t


def m_tilde(profile: RadialProfile, q: float) -> MassFunction:
    """``int_{B(0,r)} (q+d-2)|x|^(q-2) * u dx`` at every face."""
    t = face_kernel_matrix(profile.grid, float(q))
    return MassFunction(profile.grid, t @ profile.values)


def kernel_convolution(profile: RadialProfile, q: float) -> RadialProfile:
    """Cell averages of ``(q+d-2)|x|^(q-2) * u``."""
    mt = m_tilde(profile, q).values
    w = np.diff(mt) / profile.grid.volumes
    return RadialProfile(profile.grid, np.maximum(w, 0.0))


def kernel_mass(d: int, q: float, radius: float) -> float:
    """``int_{B(0,R)} (q+d-2)|x|^(q-2) dx``, the local L1 norm of ``Lap K``."""
    _check_q(d, q)
    return sphere_area(d) * radius ** (q + d - 2)


def newtonian_field(profile: RadialProfile) -> np.ndarray:
    """``M / (sigma_d r^(d-1))`` at the faces (zero at the origin)."""
    g = profile.grid
    m = mass_function(profile).values
    out = np.zeros_like(m)
    out[1:] = m[1:] / g.face_areas[1:]
    return out
