"""Statistical tests, effect sizes, logistic regression and corrections."""

from .contingency import chi_square_independence
from .logistic import INTERCEPT, IRLSLogisticRegression, SingularInformationError, logistic_regression
from .multiple import benjamini_hochberg, bonferroni_threshold
from .results import Coefficient, EffectSize, RegressionResult, TestResult, describe_effect
from .two_sample import mann_whitney_u, permutation_test, two_proportion_z, welch_t_test

__all__ = [
    "INTERCEPT",
    "Coefficient",
    "EffectSize",
    "IRLSLogisticRegression",
    "RegressionResult",
    "SingularInformationError",
    "TestResult",
    "benjamini_hochberg",
    "bonferroni_threshold",
    "chi_square_independence",
    "describe_effect",
    "logistic_regression",
    "mann_whitney_u",
    "permutation_test",
    "two_proportion_z",
    "welch_t_test",
]
