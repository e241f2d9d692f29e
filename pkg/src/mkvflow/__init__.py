"""Spectral toolbox for mean-field diffusions with rough interaction kernels."""

from .grids import (
    GridSpec,
    ScalarField,
    VectorField,
    heat_apply,
    heat_gradient,
    bessel_apply,
    field_derivative,
    gaussian_density,
    grid_delta,
    random_band_limited,
)
from .norms import (
    SobolevIndex,
    BallLattice,
    local_neg_norm,
    measure_dual_norm,
    measure_dual_bracket,
    operator_exponent_probe,
    heat_norm_exponent,
)
from .kernels import (
    KernelSpec,
    RieszOrder,
    DiracDerivative,
    ConstantVector,
    GridSampled,
    TimeModulation,
    NemytskiiSpec,
    realize_kernel,
    drift_from_kernel,
    nemytskii_drift,
    kernel_norm_study,
    make_kernel,
)
from .metrics import (
    DiscreteMeasure,
    GaussianSpec,
    wasserstein_1d,
    wasserstein_discrete,
    relative_entropy,
    total_variation,
)
from .solver import (
    FlowParams,
    MeasureFlow,
    SolveReport,
    eta_theta_params,
    phi_apply,
    weighted_flow_distance,
    picard_solve,
    time_shift_solve,
    tau_n_formula,
)
from .particles import (
    ParticleEnsemble,
    SimConfig,
    simulate_particles,
    empirical_density,
    chaos_convergence_study,
)
from .experiments import (
    ExperimentConfig,
    RunReport,
    run_experiment,
    fit_exponent,
    emit_report,
    parse_config,
)

__version__ = "0.1.0"
