"""quadmeas: numerical lab for an all-optical projective quadrature measurement.

The package builds, in a truncated Fock basis, the outcome-indexed family of
reduction operators realized by mixing the signal with a squeezed probe on a
beam splitter, homodyning the probe, and applying outcome-dependent feedback
plus squeezing corrections to the signal — and verifies that the family acts
as a Gaussian-smeared quadrature projector of tunable width.

Submodules
----------
fock        truncated-basis states, ladder/Gaussian operators, guard bands
kernel      outcome grids, reduction families, probability operators, densities
scheme      the beam-splitter/feedback pipeline and its operator-identity checks
gaussian    exact covariance-matrix oracle for all Gaussian expectations
montecarlo  seeded sampling of outcomes, conditioning, repeatability runs
cli         `quadmeas` command-line interface (verify / pom / sample / sweep)
"""

from .errors import (
    QuadmeasError,
    ParameterError,
    DimensionMismatchError,
    GridRangeError,
    ZeroProbabilityError,
    InfeasibleFeedbackError,
    DegenerateCovarianceError,
)
from .fock import (
    GUARD_FRACTION,
    guard_level,
    StateVector,
    JointState,
    Operator,
    DensityOperator,
    vacuum_state,
    fock_state,
    coherent_state,
    squeezed_vacuum,
    make_annihilation,
    make_creation,
    make_number,
    make_quadrature,
    make_phase_rotation,
    make_displacement,
    make_squeeze,
    make_beam_splitter,
    quadrature_eigenvector,
    quadrature_eigenvector_matrix,
    function_of_quadrature,
    joint_state,
    joint_operator,
    partial_trace,
    expectation,
    variance,
    trace_distance,
    fidelity_to_pure,
)
from .kernel import (
    OutcomeGrid,
    ReductionOperatorFamily,
    PomDensity,
    OutcomeDensity,
    reduction_from_interaction,
    pom_from_reduction,
    born_density,
    quadrature_density,
    reduce_state,
    conditional_density,
    vn_target_family,
    spectral_kernel_family,
    widen_grid_for_density,
    fitted_kernel_width,
)
from .scheme import (
    SchemeParams,
    StageMask,
    FeedbackSpec,
    PsaStage,
    PsaSpec,
    SchemeFamilyBuilder,
    PipelineResult,
    BchReport,
    GaussianSchemeOracle,
    build_scheme_family,
    verify_bch_factorization,
    measurement_width,
    presqueeze_param,
    backsqueeze_param,
    feedback_coefficient,
    feedback_displacement,
    psa_from_params,
)
from .gaussian import (
    GaussianState,
    SymplecticTransform,
    vacuum_gaussian,
    coherent_gaussian,
    squeeze_symplectic,
    beam_splitter_symplectic,
    tensor_product,
    condition_on_quadrature,
    quadrature_statistics,
    normal_pdf,
    outcome_moments,
    posterior_moments,
    predictive_variance_second_scheme,
    gap_variance_ideal_second,
    conjugate_variance_after,
)
from .montecarlo import (
    RngSeed,
    TrialRecord,
    TrialEngine,
    RepeatabilityStats,
    sample_outcome,
    sample_outcomes,
    ks_against_density,
    ks_critical_value,
    finite_lo_displacement,
    run_trial,
    repeatability_experiment,
    summarize_repeatability,
)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
