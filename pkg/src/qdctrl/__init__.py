"""Lindbladian decision-making simulator with Lyapunov feedback control."""

__version__ = "0.1.0"

from .quantum_core import (
    BasisIndex,
    Tolerances,
    TOL,
    commutator,
    anticommutator,
    dagger,
    frobenius_norm,
    trace,
    population,
    populations,
    pure_state,
    uniform_state,
    action_projector,
    all_projectors,
    validate_density,
    assert_density,
)
from .lindblad_model import (
    ModelParams,
    TStepKrausSet,
    StabilityError,
    SteadyStateError,
    subjective_utility,
    hamiltonian,
    cognitive_matrix,
    lindblad_apply,
    lindblad_superoperator,
    steady_state,
    kraus_set,
    apply_channel,
    posterior_outcomes,
    action_distribution,
    measure,
)
from .sensor import (
    NatureModel,
    TDistribution,
    ZeroMassError,
    sample_state,
    sample_observation,
    bayes_update,
    target_action,
    sample_T,
)
from .controller import (
    SigmaError,
    RMatrix,
    SigmaWeights,
    ControlModel,
    channel_derivatives,
    build_R,
    build_R_mixture,
    stochasticity_check,
    solve_sigma,
    sigma_weights,
    lyapunov_V,
    expected_V,
    choose_u,
    validate_sigma,
)
from .verifier import (
    SystemUnderTest,
    estimate_drift,
    convergence_probability,
    subsequence_check,
    wrap_decision_system,
    halving_system,
    random_walk_system,
)
from .experiments import (
    ExperimentConfig,
    TrajectoryRow,
    ValidationAbort,
    run_closed_loop,
    run_sweep,
    run_stp_surface,
    run_oscillation,
    run_verify,
    emit,
    load_csv_rows,
    first_sustained_round,
)
