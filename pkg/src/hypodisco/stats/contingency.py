"""Pearson chi-square test of independence for r x c count tables."""

from __future__ import annotations

import logging
import math

import numpy as np

from .results import EffectSize, TestResult
from .special import chi2_sf

logger = logging.getLogger(__name__)


def chi_square_independence(table) -> TestResult:
    """Pearson chi-square on a count matrix; effect is Cramer's V.

    No Yates correction is applied. Expected counts below 5 only add a
    warning; an all-zero row or column is an error.
    """
    obs = np.asarray(table, dtype=float)
    if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[1] < 2:
        raise ValueError(f"need at least a 2x2 table, got shape {obs.shape}")
    if (obs < 0).any() or np.isnan(obs).any():
        raise ValueError("counts must be non-negative numbers")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if (rows == 0).any() or (cols == 0).any():
        raise ValueError("degenerate margin: a row or column sums to zero")
    total = float(obs.sum())
    expected = np.outer(rows, cols) / total
    stat = float(((obs - expected) ** 2 / expected).sum())
    r, c = obs.shape
    df = (r - 1) * (c - 1)
    warnings: list[str] = []
    if (expected < 5).any():
        warnings.append("some expected counts are below 5; the chi-square approximation may be poor")
        logger.warning("chi_square_independence: %s", warnings[-1])
    v = math.sqrt(stat / (total * (min(r, c) - 1)))
    return TestResult(
        test_name="chi_square",
        statistic=stat,
        degrees_of_freedom=float(df),
        p_two_sided=min(1.0, chi2_sf(stat, df)),
        effect=EffectSize("cramers_v", min(v, 1.0)),
        group_sizes=tuple(int(x) for x in rows),
        warnings=tuple(warnings),
    )
