"""Certified and numerical entropy-decay constants for reversible Markov chains."""

__version__ = "0.1.0"

from .bochner import (Certificate, RFunction, bochner_residual, bochner_sides, canonical_r,
                      certified_kappa, check_assumption_A, check_P1, check_P2, check_P3,
                      gamma_form)
from .chain import (Chain, Generator, Measure, StateSpace, apply_generator, build_chain,
                    build_generator, check_reversibility, enumerate_states, stationary_measure)
from .estimation import (EstimateReport, RatioOptions, brute_force_constant, minimize_ratio,
                         spectral_gap)
from .evolution import (Trajectory, counterexample_42, detect_nonconvexity, entropy_decay_check,
                        evolve, fit_decay_rate)
from .functionals import (dirichlet_form, entropy, mlsi_form, relative_entropy,
                          second_derivative_form, variance)
from .models import ModelError, ModelSpec, make_preset
from .perturbation import (SmoothedRates, measure_ratio_bounds, smooth_rates, transfer_constant,
                           verify_hypotheses)
from .report import Report

__all__ = [
    "Certificate", "Chain", "EstimateReport", "Generator", "Measure", "ModelError", "ModelSpec",
    "RFunction", "RatioOptions", "Report", "SmoothedRates", "StateSpace", "Trajectory",
    "apply_generator", "bochner_residual", "bochner_sides", "brute_force_constant", "build_chain",
    "build_generator", "canonical_r", "certified_kappa", "check_P1", "check_P2", "check_P3",
    "check_assumption_A", "check_reversibility", "counterexample_42", "detect_nonconvexity",
    "dirichlet_form", "entropy", "entropy_decay_check", "enumerate_states", "evolve",
    "fit_decay_rate", "gamma_form", "make_preset", "measure_ratio_bounds", "minimize_ratio",
    "mlsi_form", "relative_entropy", "second_derivative_form", "smooth_rates", "spectral_gap",
    "stationary_measure", "transfer_constant", "variance", "verify_hypotheses",
]
