"""Spectral Galerkin Navier-Stokes solver and regularity toolkit on the periodic torus."""

__version__ = "0.1.0"

from .errors import (BlowUpError, ConfigError, ContractionFailure, ParameterError, QuadratureError,
                     TimeGridMismatch, UndefinedFitError)
from .params import ScalingParams
from .spectral_core import (DecayEnvelope, ModeField, dual_sobolev_norm, leray_project, norm_report,
                            single_mode, synthesize_data, taylor_green, zeros)
from .nse_rhs import burgers_term, e_matrix, leray_term, rhs
from .trotter import RunOptions, Trajectory, controlled_step, euler_trotter_step, run
from .picard import choose_rho, kernel_constants, picard_solve, select_rho
from .ledger import feasibility, find_delta0_star, fourier_damping, ss_inequality, threshold_mu
from .decay import convolution_decay_constant, verify_envelope_preservation
from .stochastic import NoiseModel, run_forced

__all__ = [
    "BlowUpError", "ConfigError", "ContractionFailure", "ParameterError", "QuadratureError",
    "TimeGridMismatch", "UndefinedFitError", "ScalingParams", "DecayEnvelope", "ModeField",
    "dual_sobolev_norm", "leray_project", "norm_report", "single_mode", "synthesize_data",
    "taylor_green", "zeros", "burgers_term", "e_matrix", "leray_term", "rhs", "RunOptions",
    "Trajectory", "controlled_step", "euler_trotter_step", "run", "choose_rho", "kernel_constants",
    "picard_solve", "select_rho", "feasibility", "find_delta0_star", "fourier_damping",
    "ss_inequality", "threshold_mu", "convolution_decay_constant", "verify_envelope_preservation",
    "NoiseModel", "run_forced",
]
