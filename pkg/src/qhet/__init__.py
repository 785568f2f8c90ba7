"""Heterogeneity of standardized mean differences: Q statistics with
constant effective-sample-size weights, tau^2 estimators, intervals, tests
and a Monte Carlo study harness."""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    DegenerateStudyError,
    DomainError,
    InsufficientStudiesError,
    NumericError,
    QhetError,
    UsageError,
)
from .estimators import Tau2Estimate, Tau2Method, estimate, tau2_iv, tau2_median_farebrother, tau2_moment_ss
from .hetero import TestResult, test_heterogeneity, upper_tail_p
from .intervals import IntervalMethod, Tau2Interval, interval, profile_pvalue
from .qstat import QValue, WeightScheme, centering_matrix, expected_q, q_statistics, q_weighted
from .quadform import (
    ApproxMethod,
    ChiSquareMixture,
    VarianceMode,
    bj_cdf,
    farebrother_cdf,
    gamma_two_moment_cdf,
    kdb_cdf,
    kdb_df,
    mixture_from_q,
    null_cdf_qiv,
)
from .smd import (
    EffectEstimate,
    EffectSet,
    StudySummary,
    bias_correction_j,
    effective_sample_size,
    hedges_g,
    sample_g,
    var_g_conditional,
    var_g_unconditional,
)
