from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radialflow.diagnostics import (
    dissipation_defect,
    entropy,
    fit_rate,
    free_energy,
    hls_ratio,
    interaction_energy,
    rescaled_energy,
    virial_check,
    wasserstein,
)
from radialflow.evolution import StepControl, discrete_equilibrium, evolve
from radialflow.model import preset
from radialflow.radial import RadialGrid, RadialProfile, rescale_profile, second_moment
from radialflow.stationary import critical_mass, solve_u1

GRID = RadialGrid(3, 2.0, 200)


def ball(radius: float, grid: RadialGrid = GRID) -> RadialProfile:
    """Unit-mass indicator of ``B(0, radius)``, exact when ``radius`` is a face."""
    return RadialProfile(grid, (grid.centers < radius).astype(float)).scaled_mass(1.0)


face_radii = st.integers(10, 200).map(lambda k: k * GRID.dr)


@given(face_radii, face_radii)
def test_w2_uniform_balls_closed_form(a, b):
    # quantile of a uniform ball of radius a is a s^(1/3); W2^2 = (a-b)^2 * 3/5
    assert wasserstein(2, ball(a), ball(b)) == pytest.approx(abs(a - b) * math.sqrt(3 / 5), rel=1e-8, abs=1e-12)


@given(face_radii, face_radii, st.floats(1.0, 4.0))
def test_wp_uniform_balls_closed_form(a, b, p):
    expect = abs(a - b) * (3 / (p + 3)) ** (1 / p)
    assert wasserstein(p, ball(a), ball(b)) == pytest.approx(expect, rel=1e-8, abs=1e-12)


profiles = arrays(np.float64, 24, elements=st.floats(0.0, 10.0))


@given(profiles, profiles, profiles)
def test_w2_is_a_metric(u, v, w):
    assume(u.sum() > 0 and v.sum() > 0 and w.sum() > 0)
    g = RadialGrid(3, 1.0, 24)
    a, b, c = (RadialProfile(g, x).scaled_mass(1.0) for x in (u, v, w))
    ab, ba = wasserstein(2, a, b), wasserstein(2, b, a)
    assert ab == pytest.approx(ba, rel=1e-12, abs=1e-14)
    assert wasserstein(2, a, a) == 0.0
    assert ab <= wasserstein(2, a, c) + wasserstein(2, c, b) + 1e-12


def test_w2_dilation():
    # W2(u, u_R) = |R - 1| sqrt(M2(u)/mass) for a dilation of the same profile
    g = RadialGrid(3, 3.0, 300)
    p = RadialProfile.from_function(g, lambda r: np.maximum(1 - r**2, 0)).scaled_mass(1.0)
    q = rescale_profile(p, 1.7, g.scaled(1.7))
    assert wasserstein(2, p, q) == pytest.approx(0.7 * math.sqrt(second_moment(p)), rel=1e-8)


def test_wasserstein_rejects_mass_mismatch():
    with pytest.raises(ValueError, match="mass mismatch"):
        wasserstein(2, ball(0.5), ball(0.5).scaled_mass(2.0))
    with pytest.raises(ValueError):
        wasserstein(0.5, ball(0.5), ball(0.5))


@pytest.mark.parametrize("k", [20, 57, 100])
def test_interaction_energy_uniform_ball(k):
    # self-interaction of a uniform ball of mass A, radius R in d = 3: -3 A^2 / (10 pi R)
    radius = k * GRID.dr
    p = ball(radius).scaled_mass(2.5)
    assert interaction_energy(p) == pytest.approx(-3 * 2.5**2 / (10 * math.pi * radius), rel=1e-12)


def test_entropy_and_free_energy_of_ball():
    p = ball(0.5)
    vol = 4 / 3 * math.pi * 0.5**3
    m = 4 / 3
    assert entropy(p, m) == pytest.approx(vol ** (1 - m) / (m - 1), rel=1e-12)
    assert free_energy(p) == pytest.approx(entropy(p, m) + 0.5 * interaction_energy(p), rel=1e-14)
    assert rescaled_energy(p) == pytest.approx(free_energy(p) + second_moment(p) / 6, rel=1e-14)
    with pytest.raises(ValueError):
        entropy(p, 1.0)


def test_free_energy_of_critical_profile_vanishes():
    # stationary critical profiles have zero energy (virial identity with dM2/dt = 0)
    res = solve_u1(3, 1.0, n_cells=1024)
    p = res.profile
    assert abs(free_energy(p)) < 1e-4 * entropy(p, 4 / 3)


@given(st.floats(0.3, 3.0), st.floats(0.1, 10.0))
def test_hls_ratio_scaling_invariance(scale, factor):
    g = RadialGrid(3, 1.0, 64)
    p = RadialProfile.from_function(g, lambda r: np.maximum(1 - (r / 0.3) ** 2, 0))
    q = rescale_profile(p, scale, g.scaled(scale)).with_values(
        factor * rescale_profile(p, scale, g.scaled(scale)).values
    )
    assert hls_ratio(q) == pytest.approx(hls_ratio(p), rel=1e-10)


def test_hls_ratio_of_zero_profile():
    with pytest.raises(ValueError):
        hls_ratio(RadialProfile.zeros(GRID))


def test_dissipation_defect_vanishes_at_discrete_equilibrium():
    g = RadialGrid(3, 8.0, 128)
    spec = preset("pks_original", 3)
    eq = discrete_equilibrium(spec, g, central_density=8.0)
    assert dissipation_defect(eq) < 1e-18 * eq.mass
    assert dissipation_defect(ball(1.0)) > 0


@given(st.floats(-3.0, 3.0), st.floats(-2.0, 2.0))
def test_fit_rate_recovers_exact_exponential(k, logc):
    t = np.linspace(0, 5, 40)
    fit = fit_rate((t, np.exp(logc + k * t)), "exp", window=(0, 5))
    assert fit.exponent == pytest.approx(k, abs=1e-10)
    assert fit.log_prefactor == pytest.approx(logc, abs=1e-9)
    if abs(k) > 1e-3:  # R^2 is ill-conditioned for flat data
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)


@given(st.floats(-2.0, 2.0))
def test_fit_rate_recovers_exact_power_law(k):
    t = np.linspace(1, 50, 60)
    fit = fit_rate(list(zip(t, 3.0 * t**k)), "alg")
    assert fit.exponent == pytest.approx(k, abs=1e-10)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-9)
    assert fit.window[0] == pytest.approx(1 + 0.2 * 49)


def test_fit_rate_errors():
    t = np.linspace(0, 1, 4)
    with pytest.raises(ValueError, match="at least 5"):
        fit_rate((t, np.exp(t)), "exp")
    with pytest.raises(ValueError, match="mode"):
        fit_rate((t, np.exp(t)), "log")
    t = np.linspace(0, 1, 10)
    with pytest.raises(ValueError, match="positive"):
        fit_rate((t, -np.exp(t)), "exp")


def test_ode_decay_rate_matches_linearisation():
    # the aggregation radius ODE relaxes at rate C1 (d + q - 2) near R = 1
    from radialflow.barriers import radius_rhs, BarrierFamily, integrate_radius
    from radialflow.stationary import solve_us

    us = solve_us(3, 1.0, 1.0, n_cells=64)
    fam = BarrierFamily(us, 1.2, "aggregation", 0.8, 1.0)
    t = np.linspace(0, 6, 61)
    r = integrate_radius(radius_rhs(fam), 1.2, t, 1e-3)
    fit = fit_rate((t, np.abs(r - 1.0)), "exp", window=(2, 6))
    assert fit.exponent == pytest.approx(-0.8 * 2.0, rel=0.05)


def test_virial_check_on_short_subcritical_run():
    g = RadialGrid(3, 12.0, 128)
    p = RadialProfile.from_function(g, lambda r: np.maximum(1 - (r / 3) ** 2, 0)).scaled_mass(
        0.5 * critical_mass(3)
    )
    traj = evolve(p, preset("pks_original", 3), StepControl(), 1.0, snapshot_times=np.linspace(0, 1, 11))
    out = virial_check(traj.times, traj.profiles)
    assert out["relative"].max() < 0.05
    with pytest.raises(ValueError):
        virial_check(traj.times[:2], traj.profiles[:2])


def test_virial_derivative_exact_for_quadratics():
    # the nonuniform centred difference is exact on quadratic M2(t)
    g = RadialGrid(3, 4.0, 64)
    base = ball(1.0, g)
    times = np.array([0.0, 0.1, 0.35, 0.4, 1.0])
    profs = [rescale_profile(base, math.sqrt(1 + t), g.scaled(math.sqrt(1 + t))) for t in times]
    out = virial_check(times, profs)
    assert np.allclose(out["dm2_dt"], second_moment(base), rtol=1e-9)
