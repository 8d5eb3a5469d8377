"""Rectified flow matching laboratory.

Closed-form and kernel-regression velocity fields, (smoothed) iterative
rectification, and optimal-transport baselines on particle couplings.
"""

__version__ = "0.1.0"

from .couplings import (  # noqa: E402
    Both,
    GaussianJointCoupling,
    GmmJointCoupling,
    MapCoupling,
    ParticleCoupling,
    Scale1,
    Shift1,
    affine_transform,
    interp_cov,
    interpolate,
    load_particles,
    save_particles,
    smooth_coupling,
)
from .distributions import (  # noqa: E402
    GaussianDist,
    GmmDist,
    ParticleSet,
    gaussian_sample,
    gmm_log_density,
    gmm_sample,
    matrix_sqrt_psd,
)
from .integrators import (  # noqa: E402
    IntegratorConfig,
    Trajectory,
    detect_collapse,
    integrate_ode,
    integrate_sde,
)
from .ot import (  # noqa: E402
    TransportPlan,
    bures_wasserstein,
    discrete_ot_exact,
    energy_distance,
    energy_permutation_test,
    gaussian_ot_map,
    quantile_ot_1d,
    sinkhorn,
    transport_cost,
)
from .rectification import (  # noqa: E402
    ClosedForm,
    IterationReport,
    Kernel,
    NoiseSchedule,
    loss_eval,
    optimality_gap,
    rectify,
    smoothed_rectify_iterate,
)
from .velocity import (  # noqa: E402
    VelocityField,
    affine_wrap,
    gaussian_field,
    gaussian_velocity,
    gmm_field,
    gmm_velocity,
    jacobian_symmetry_check,
    kernel_field,
    kernel_velocity,
    scenario_field,
    scenario_velocity,
)

__all__ = [
    "__version__",
    "Both",
    "GaussianJointCoupling",
    "GmmJointCoupling",
    "MapCoupling",
    "ParticleCoupling",
    "Scale1",
    "Shift1",
    "affine_transform",
    "interp_cov",
    "interpolate",
    "load_particles",
    "save_particles",
    "smooth_coupling",
    "GaussianDist",
    "GmmDist",
    "ParticleSet",
    "gaussian_sample",
    "gmm_log_density",
    "gmm_sample",
    "matrix_sqrt_psd",
    "IntegratorConfig",
    "Trajectory",
    "detect_collapse",
    "integrate_ode",
    "integrate_sde",
    "TransportPlan",
    "bures_wasserstein",
    "discrete_ot_exact",
    "energy_distance",
    "energy_permutation_test",
    "gaussian_ot_map",
    "quantile_ot_1d",
    "sinkhorn",
    "transport_cost",
    "ClosedForm",
    "IterationReport",
    "Kernel",
    "NoiseSchedule",
    "loss_eval",
    "optimality_gap",
    "rectify",
    "smoothed_rectify_iterate",
    "VelocityField",
    "affine_wrap",
    "gaussian_field",
    "gaussian_velocity",
    "gmm_field",
    "gmm_velocity",
    "jacobian_symmetry_check",
    "kernel_field",
    "kernel_velocity",
    "scenario_field",
    "scenario_velocity",
]
