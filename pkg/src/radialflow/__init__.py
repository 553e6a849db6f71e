"""Radially symmetric diffusion-aggregation equations.

Finite-volume evolution, stationary profiles, barrier families and
Wasserstein diagnostics for critical Patlak-Keller-Segel, porous medium,
Fokker-Planck and repulsive-attractive aggregation flows.
"""
from __future__ import annotations

from .barriers import (
    BarrierFamily,
    OrderingReport,
    aggregation_families,
    aggregation_rate_constant,
    barrier_profile,
    bracketing_radii,
    check_ordering,
    critical_density_bound,
    integrate_radius,
    radius_rhs,
    scaling_radius,
)
from .diagnostics import (
    RateFit,
    dissipation_defect,
    entropy,
    fit_rate,
    free_energy,
    hls_ratio,
    interaction_energy,
    rescaled_energy,
    sup_density_scaling,
    virial_check,
    wasserstein,
)
from .evolution import (
    BlowUpSuspected,
    DomainOverflowError,
    EvolutionError,
    EvolutionState,
    StepControl,
    Trajectory,
    advance,
    discrete_equilibrium,
    evolve,
    face_rates,
    face_velocities,
    mass_form_residual,
    rescale_to_similarity,
    stable_dt,
    step,
)
from .model import KernelSpec, ModelSpec, PotentialSpec, critical_exponent, preset, radial_velocity
from .nonlocal_fields import (
    AngularQuadrature,
    face_kernel_matrix,
    kernel_convolution,
    m_tilde,
    newtonian_field,
)
from .radial import (
    MassFunction,
    RadialGrid,
    RadialProfile,
    decreasing_rearrangement,
    density_from_mass,
    mass_function,
    quantile,
    read_profile_csv,
    rebin,
    remap_mass,
    rescale_profile,
    second_moment,
    write_profile_csv,
)
from .stationary import (
    ShootingError,
    StationaryResult,
    SupercriticalMassError,
    critical_mass,
    fokker_planck_profile,
    solve_mu_A,
    solve_u1,
    solve_us,
)

__version__ = "0.1.0"
