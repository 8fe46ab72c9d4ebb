"""Frequency estimation under local differential privacy with posterior-mean calibration."""

__version__ = "0.1.0"

from .exceptions import (DegeneratePosteriorError, DegenerateSampleError, FitError,
                         InvalidParameterError, ParseError)
from .protocols import (Domain, FrequencyTable, ItemSetUser, PerturbedReport, ProtocolSpec,
                        ReportBatch, aggregate, basic_rappor_spec, krr_spec, make_spec,
                        olh_spec, oue_spec, perturb, perturb_many, support_counts)
from .calibrate import (CalibrationConfig, NoiseModel, Posterior, PriorModel, calibrate_all,
                        calibrate_one, fit_mean_variance, fit_mle, fit_prior, noise_model_for,
                        posterior, predictive_pmf, prior_pmf, significance_threshold,
                        zero_below_threshold)
from .data import SyntheticSpec, TransactionDataset, read_transactions, synthesize
from .evaluation import Scenario, run_experiment, run_pipeline

__all__ = [
    "__version__", "DegeneratePosteriorError", "DegenerateSampleError", "FitError",
    "InvalidParameterError", "ParseError", "Domain", "FrequencyTable", "ItemSetUser",
    "PerturbedReport", "ProtocolSpec", "ReportBatch", "aggregate", "basic_rappor_spec",
    "krr_spec", "make_spec", "olh_spec", "oue_spec", "perturb", "perturb_many",
    "support_counts", "CalibrationConfig", "NoiseModel", "Posterior", "PriorModel",
    "calibrate_all", "calibrate_one", "fit_mean_variance", "fit_mle", "fit_prior",
    "noise_model_for", "posterior", "predictive_pmf", "prior_pmf", "significance_threshold",
    "zero_below_threshold", "SyntheticSpec", "TransactionDataset", "read_transactions",
    "synthesize", "Scenario", "run_experiment", "run_pipeline",
]
