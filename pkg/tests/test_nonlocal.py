from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from radialflow.nonlocal_fields import (
    AngularQuadrature,
    face_kernel_matrix,
    flux_density,
    flux_density_angular,
    kernel_convolution,
    kernel_mass,
    m_tilde,
    newtonian_field,
    newtonian_slope,
)
from radialflow.radial import RadialGrid, RadialProfile, mass_function, sphere_area


@pytest.mark.parametrize("d", [3, 4, 5, 7])
def test_angular_weights(d):
    quad = AngularQuadrature(d, 48)
    assert np.all(quad.weights > 0)
    assert quad.weights.sum() == pytest.approx(quad.total_weight, rel=1e-12)


@pytest.mark.parametrize("d", [3, 4])
@pytest.mark.parametrize("q", [-0.5, 0.0, 0.7, 1.5, 2.0])
def test_flux_density_matches_angular_quadrature(d, q):
    if q <= 2 - d:
        pytest.skip("kernel not integrable")
    r = np.array([0.3, 0.8, 1.7])
    rho = np.array([1.1, 0.2, 0.9])
    closed = flux_density(r, rho, d, q)
    direct = flux_density_angular(r, rho, d, q, AngularQuadrature(d, 200))
    assert np.allclose(closed, direct, rtol=1e-9)


@pytest.mark.parametrize("r", [0.5, 2.0])
def test_flux_density_log_kernel_oracle(r):
    # q = 0, d = 3: r-derivative of the spherical mean of log|x - y| with |y| = 1,
    # by adaptive quadrature over the direction cosine and a central difference
    def mean_log(s):
        return integrate.quad(lambda c: 0.5 * math.log(s * s + 1 - 2 * s * c), -1, 1, epsabs=1e-14)[0] / 2

    h = 1e-5
    fd = (mean_log(r + h) - mean_log(r - h)) / (2 * h)
    assert flux_density(r, 1.0, 3, 0.0) == pytest.approx(fd, rel=1e-7)


@given(arrays(np.float64, 40, elements=st.floats(0.0, 5.0)))
def test_kernel_convolution_q2_is_constant(u):
    # Lap(|x|^2/2) = d, so the convolution equals d times the mass everywhere
    if u.sum() == 0:
        return
    g = RadialGrid(3, 1.5, u.size)
    p = RadialProfile(g, u)
    w = kernel_convolution(p, 2.0).values
    assert np.max(np.abs(w - 3.0 * p.mass)) <= 1e-10 * 3.0 * p.mass


def test_m_tilde_of_uniform_ball_far_field():
    # for r beyond the support Mt(r) equals int_{B_r} Lap K * u = mass * kernel ball mass
    # averaged, which for q = 2 is d |B_r| mass
    g = RadialGrid(3, 2.0, 64)
    p = RadialProfile(g, (g.centers < 0.5).astype(float))
    mt = m_tilde(p, 2.0).values
    assert np.allclose(mt, 3.0 * p.mass * g.face_volumes, rtol=1e-11)


def test_face_kernel_matrix_is_cached_and_read_only():
    g = RadialGrid(3, 1.0, 16)
    t1 = face_kernel_matrix(g, 1.5)
    assert face_kernel_matrix(g, 1.5) is t1
    assert not t1.flags.writeable
    assert t1.shape == (17, 16)
    with pytest.raises(ValueError):
        face_kernel_matrix(g, -1.5)


def test_kernel_mass():
    assert kernel_mass(3, 2.0, 2.0) == pytest.approx(sphere_area(3) * 8.0)
    assert kernel_mass(3, 1.0, 1.0) == pytest.approx(4 * math.pi)


def test_kernel_convolution_point_like_source():
    # a small central ball acts as a point mass: Lap K * u ~ mass (q+d-2)|x|^(q-2)
    g = RadialGrid(3, 2.0, 400)
    p = RadialProfile(g, (g.centers < 0.01).astype(float))
    q = 1.0
    w = kernel_convolution(p, q).values
    far = g.centers > 1.0
    expect = p.mass * (q + 1) * g.centers[far] ** (q - 2)
    assert np.allclose(w[far], expect, rtol=1e-3)


def test_newtonian_field_and_slope():
    g = RadialGrid(3, 1.0, 32)
    p = RadialProfile(g, np.ones(32))
    field = newtonian_field(p)
    # uniform density: M / (4 pi r^2) = r / 3
    assert np.allclose(field[1:], g.faces[1:] / 3, rtol=1e-13)
    m = mass_function(p)
    assert newtonian_slope(m, 0.5) == pytest.approx(0.5 / 3, rel=1e-13)
    with pytest.raises(ValueError):
        newtonian_slope(m, 0.0)
