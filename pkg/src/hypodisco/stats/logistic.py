"""Logistic regression by iteratively reweighted least squares."""

from __future__ import annotations

import logging
import math
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .results import Coefficient, RegressionResult
from .special import normal_two_sided_p

logger = logging.getLogger(__name__)

INTERCEPT = "intercept"
SEPARATION_BOUND = 15.0
_COND_LIMIT = 1e13


class SingularInformationError(ValueError):
    """The Fisher information matrix cannot be inverted."""


def _expit(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _loglik(y: np.ndarray, eta: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _design(features, names: Sequence[str] | None) -> tuple[np.ndarray, list[str]]:
    if isinstance(features, Mapping):
        names = list(features.keys())
        cols = [np.asarray(features[k], dtype=float).ravel() for k in names]
        x = np.column_stack(cols) if cols else np.zeros((0, 0))
    else:
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        names = list(names) if names is not None else [f"x{i}" for i in range(x.shape[1])]
    if len(names) != x.shape[1]:
        raise ValueError(f"{len(names)} names for {x.shape[1]} columns")
    if len(set(names)) != len(names) or INTERCEPT in names:
        raise ValueError(f"column names must be unique and not {INTERCEPT!r}")
    return x, names


def fit_irls(
    x: np.ndarray,
    y: np.ndarray,
    max_iterations: int = 50,
    tolerance: float = 1e-8,
    ridge_penalty: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, int, bool, list[str]]:
    """Newton-Raphson on the logistic log-likelihood.

    ``x`` must already contain the intercept in column 0, which is never
    penalized. Returns (beta, covariance, iterations, converged, warnings).
    """
    n, p = x.shape
    penalty = np.full(p, ridge_penalty)
    penalty[0] = 0.0
    beta = np.zeros(p)
    warnings: list[str] = []
    converged = False
    separated = False
    eta = x @ beta
    ll = _loglik(y, eta) - 0.5 * float(penalty @ beta**2)
    it = 0
    for it in range(1, max_iterations + 1):
        mu = _expit(eta)
        w = mu * (1.0 - mu)
        grad = x.T @ (y - mu) - penalty * beta
        info = (x * w[:, None]).T @ x + np.diag(penalty)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformationError("information matrix is singular") from exc
        # step halving keeps the penalized likelihood non-decreasing
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            cand_eta = x @ cand
            cand_ll = _loglik(y, cand_eta) - 0.5 * float(penalty @ cand**2)
            if cand_ll >= ll - 1e-12 * abs(ll):
                break
            scale *= 0.5
        update = scale * step
        beta, eta, ll = cand, cand_eta, cand_ll
        if float(np.max(np.abs(update))) < tolerance:
            converged = True
            break
        if ridge_penalty == 0.0 and float(np.max(np.abs(beta))) > SEPARATION_BOUND:
            separated = True
            break
    if separated or (not converged and float(np.max(np.abs(beta))) > SEPARATION_BOUND):
        converged = False
        warnings.append("separation: coefficients diverge; the outcome is (nearly) perfectly predicted")
    elif not converged:
        warnings.append(f"IRLS did not converge in {max_iterations} iterations")

    mu = _expit(eta)
    w = mu * (1.0 - mu)
    info = (x * w[:, None]).T @ x + np.diag(penalty)
    if separated:
        cov = np.linalg.pinv(info)
    else:
        if not np.all(np.isfinite(info)) or np.linalg.cond(info) > _COND_LIMIT:
            raise SingularInformationError(
                "information matrix is singular (collinear or constant columns?)"
            )
        cov = np.linalg.inv(info)
    return beta, cov, it, converged, warnings


def logistic_regression(
    features,
    outcome,
    names: Sequence[str] | None = None,
    max_iterations: int = 50,
    tolerance: float = 1e-8,
    ridge_penalty: float = 0.0,
) -> RegressionResult:
    """Maximum-likelihood logistic fit with Wald inference.

    ``features`` is either a mapping of column name to values or a 2-D
    array (``names`` then labels the columns). An intercept is added.
    """
    x, names = _design(features, names)
    y = np.asarray(outcome, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0]} feature rows but {y.size} outcomes")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("outcome must be binary 0/1")
    if y.min() == y.max():
        raise ValueError("outcome must contain both classes")
    if not np.isfinite(x).all():
        raise ValueError("features contain missing or infinite values")
    design = np.column_stack([np.ones(y.size), x])
    beta, cov, iterations, converged, warnings = fit_irls(
        design, y, max_iterations, tolerance, ridge_penalty
    )
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    coefs: dict[str, Coefficient] = {}
    for name, b, s in zip([INTERCEPT, *names], beta, se):
        z = float(b / s) if s > 0 else math.copysign(math.inf, b) if b != 0 else 0.0
        coefs[name] = Coefficient(beta=float(b), std_err=float(s), wald_z=z, p=normal_two_sided_p(z))
    for w in warnings:
        logger.warning("logistic_regression: %s", w)
    return RegressionResult(
        coefficients=coefs,
        n=int(y.size),
        converged=converged,
        iterations=iterations,
        log_likelihood=_loglik(y, design @ beta),
        warnings=tuple(warnings),
    )


class IRLSLogisticRegression(ClassifierMixin, BaseEstimator):
    """Binary logistic regression fitted by IRLS, with Wald statistics.

    Parameters
    ----------
    max_iter : int
        Newton iteration cap.
    tol : float
        Convergence threshold on the largest absolute coefficient update.
    ridge : float
        L2 penalty on the slopes (the intercept is never penalized).
    feature_names : sequence of str, optional
        Names used as keys of ``result_.coefficients``.

    Attributes
    ----------
    classes_ : ndarray of shape (2,)
        ``classes_[1]`` is the positive class.
    coef_ : ndarray of shape (1, n_features)
    intercept_ : ndarray of shape (1,)
    result_ : RegressionResult
    """

    def __init__(self, max_iter=50, tol=1e-8, ridge=0.0, feature_names=None):
        self.max_iter = max_iter
        self.tol = tol
        self.ridge = ridge
        self.feature_names = feature_names

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise ValueError(f"expected 2 classes, got {self.classes_.size}")
        target = (y == self.classes_[1]).astype(float)
        names = self.feature_names
        if names is None:
            names = [f"x{i}" for i in range(X.shape[1])]
        self.result_ = logistic_regression(
            X, target, names=names, max_iterations=self.max_iter,
            tolerance=self.tol, ridge_penalty=self.ridge,
        )
        coefs = [c.beta for c in self.result_.coefficients.values()]
        self.intercept_ = np.array(coefs[:1])
        self.coef_ = np.array([coefs[1:]])
        self.n_iter_ = self.result_.iterations
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_[0] + self.intercept_[0]

    def predict_proba(self, X):
        p = _expit(np.asarray(self.decision_function(X), dtype=float))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]
