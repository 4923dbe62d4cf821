"""Weighted generalised covariance measure (WGCM) tests for conditional independence."""

__version__ = "0.1.0"

from .citests import (
    MethodConfig,
    SelectionResult,
    TestResult,
    gcm_test,
    holm_adjust,
    mwgcm_est_test,
    mwgcm_fix_test,
    run_test,
    select_variables,
    wgcm_est_test,
    wgcm_fix_test,
)
from .datamodel import Dataset, SplitPlan, load_csv, split, subset
from .regress import RegressorSpec, fit, predict, residuals

__all__ = [
    "Dataset",
    "MethodConfig",
    "RegressorSpec",
    "SelectionResult",
    "SplitPlan",
    "TestResult",
    "fit",
    "gcm_test",
    "holm_adjust",
    "load_csv",
    "mwgcm_est_test",
    "mwgcm_fix_test",
    "predict",
    "residuals",
    "run_test",
    "select_variables",
    "split",
    "subset",
    "wgcm_est_test",
    "wgcm_fix_test",
]
