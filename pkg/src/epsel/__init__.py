"""Expectation propagation for compressed sensing with unitarily invariant
matrices, its state evolution, and finite-N diagnostics."""
from .diagnostics import (
    ErrorTrace,
    IdentityReport,
    average_traces,
    instrumented_run,
    lemma1_check,
    orthogonality_report,
    trace_law_trials,
)
from .ensembles import (
    EnsembleSpec,
    MeasurementModel,
    SpectralDensity,
    build_measurement,
    limiting_spectrum,
    model_from_matrix,
    sample_haar_unitary,
    sample_noise,
)
from .ep_core import EpTrajectory, gamma_coeff, lmmse_step, run_ep
from .estimator import EPRecovery
from .experiment import ExperimentConfig, compare_se_mc, run_experiment, sweep_threshold
from .exceptions import *  # noqa: F401,F403
from .priors import PriorSpec, extrinsic_denoise, mmse, posterior_mean, sample_signal
from .state_evolution import (
    CovarianceTables,
    cross_gamma,
    phi_a_to_b,
    phi_b_to_a,
    predict_error_covariance,
    se_fixed_points,
    se_recursion,
)
from .report import emit_report

__version__ = "0.1.0"
