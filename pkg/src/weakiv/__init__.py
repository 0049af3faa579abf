"""Weak-instrument-robust IV estimation and diagnostics."""

from .errors import (
    BootstrapInstabilityError,
    ClusterCountError,
    CollinearityError,
    ConfigError,
    DataError,
    DegenerateFirstStageError,
    DegreesOfFreedomError,
    IVError,
    NumericalError,
    ParseError,
    PreconditionError,
    SingularVCovError,
    UnsupportedAlphaError,
)
from .regression import Dataset, FitResult, VCovSpec, fwl_residualize, ols_fit, sandwich_vcov
from .iv import DiscrepancyReport, IVModel, component_fits, discrepancy, naive_ols, tsls_fit, wald_ratio
from .strength import StrengthReport, bootstrap_f, effective_f, partial_f, rho_d_dhat, strength_report
from .inference import (
    InferenceResult,
    IntervalSet,
    analytic_infer,
    ar_confidence_set,
    ar_infer,
    ar_test,
    bootstrap_infer,
    tf_adjust,
    tf_infer,
)

__version__ = "0.1.0"
