"""Two-group tests: Welch t, Mann-Whitney U, two-proportion z, permutation."""

from __future__ import annotations

import logging
import math
from typing import Literal

import numpy as np

from .results import EffectSize, TestResult
from .special import normal_two_sided_p, student_t_two_sided_p

logger = logging.getLogger(__name__)

_Z975 = 1.959963984540054


def _as_samples(values, name: str, min_size: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if np.isnan(arr).any():
        raise ValueError(f"{name} contains NaN; drop missing values first")
    if arr.size < min_size:
        raise ValueError(f"{name} needs at least {min_size} observations, got {arr.size}")
    return arr


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by their average rank."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=float)
    # boundaries of tie blocks in the sorted order
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], values.size]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def welch_t_test(a, b) -> TestResult:
    """Welch's unequal-variance t test; effect is Cohen's d (pooled SD)."""
    a = _as_samples(a, "a", 2)
    b = _as_samples(b, "b", 2)
    na, nb = a.size, b.size
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    diff = ma - mb
    warnings: list[str] = []

    sa, sb = va / na, vb / nb
    se2 = sa + sb
    if se2 == 0.0:
        if diff == 0.0:
            warnings.append("degenerate: both groups have zero variance and equal means")
            t, p = 0.0, 1.0
        else:
            warnings.append("degenerate: both groups have zero variance; p taken at its limit 0")
            t, p = math.copysign(math.inf, diff), 0.0
        df = float(na + nb - 2)
    else:
        t = diff / math.sqrt(se2)
        df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
        p = student_t_two_sided_p(t, df)

    pooled_var = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
    if pooled_var > 0:
        d = diff / math.sqrt(pooled_var)
        se_d = math.sqrt((na + nb) / (na * nb) + d * d / (2.0 * (na + nb)))
        effect = EffectSize("cohens_d", d, d - _Z975 * se_d, d + _Z975 * se_d)
    else:
        d = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        effect = EffectSize("cohens_d", d)
    for w in warnings:
        logger.warning("welch_t_test: %s", w)
    return TestResult(
        test_name="welch_t",
        statistic=t,
        degrees_of_freedom=df,
        p_two_sided=p,
        effect=effect,
        group_sizes=(na, nb),
        warnings=tuple(warnings),
    )


def mann_whitney_u(a, b) -> TestResult:
    """Mann-Whitney U with tie-corrected normal approximation.

    The statistic is U for group ``a`` (pairs where a beats b, ties count
    one half). The effect is the rank-biserial correlation
    ``2 U_a / (n_a n_b) - 1``, so a sample lying wholly below ``b`` scores -1.
    """
    a = _as_samples(a, "a", 1)
    b = _as_samples(b, "b", 1)
    na, nb = a.size, b.size
    n = na + nb
    if n < 8:
        raise ValueError(f"normal approximation needs |a| + |b| >= 8, got {n}")
    pooled = np.concatenate([a, b])
    ranks = midranks(pooled)
    u_a = float(ranks[:na].sum()) - na * (na + 1) / 2.0
    mu = na * nb / 2.0
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float((counts.astype(float) ** 3 - counts).sum()) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    warnings: list[str] = []
    if var <= 0.0:
        warnings.append("degenerate: all values identical")
        return TestResult(
            test_name="mann_whitney_u",
            statistic=u_a,
            p_two_sided=1.0,
            effect=EffectSize("rank_biserial_r", 0.0),
            group_sizes=(na, nb),
            warnings=tuple(warnings),
        )
    z = max(abs(u_a - mu) - 0.5, 0.0) / math.sqrt(var)
    p = normal_two_sided_p(z)
    r = min(1.0, max(-1.0, 2.0 * u_a / (na * nb) - 1.0))
    return TestResult(
        test_name="mann_whitney_u",
        statistic=u_a,
        p_two_sided=p,
        effect=EffectSize("rank_biserial_r", r),
        group_sizes=(na, nb),
        warnings=tuple(warnings),
    )


def two_proportion_z(x1: int, n1: int, x2: int, n2: int) -> TestResult:
    """Pooled two-proportion z test.

    The primary effect is the relative risk ``(x1/n1) / (x2/n2)``; the odds
    ratio rides along in ``extra_effects``. Zero cells make the odds ratio
    use a Haldane-Anscombe +0.5 correction.
    """
    for name, x, n in (("group 1", x1, n1), ("group 2", x2, n2)):
        if n < 1 or not 0 <= x <= n:
            raise ValueError(f"{name}: need 0 <= successes <= trials and trials >= 1, got {x}/{n}")
    warnings: list[str] = []
    p1, p2 = x1 / n1, x2 / n2
    pooled = (x1 + x2) / (n1 + n2)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    if se == 0.0:
        warnings.append("degenerate: pooled proportion is 0 or 1")
        z, p = 0.0, 1.0
    else:
        z = (p1 - p2) / se
        p = normal_two_sided_p(z)

    if x2 == 0:
        warnings.append("relative risk undefined (no successes in group 2); reported as +inf")
        rr = EffectSize("relative_risk", math.inf)
    elif x1 == 0:
        warnings.append("relative risk is 0 (no successes in group 1); reported as NaN")
        rr = EffectSize("relative_risk", math.nan)
    else:
        rr_val = p1 / p2
        se_log = math.sqrt(1 / x1 - 1 / n1 + 1 / x2 - 1 / n2)
        rr = EffectSize(
            "relative_risk",
            rr_val,
            math.exp(math.log(rr_val) - _Z975 * se_log),
            math.exp(math.log(rr_val) + _Z975 * se_log),
        )

    a, b, c, d = float(x1), float(n1 - x1), float(x2), float(n2 - x2)
    if min(a, b, c, d) == 0:
        warnings.append("zero cell: odds ratio uses +0.5 correction")
        a, b, c, d = a + 0.5, b + 0.5, c + 0.5, d + 0.5
    or_val = a * d / (b * c)
    se_log_or = math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    odds = EffectSize(
        "odds_ratio",
        or_val,
        math.exp(math.log(or_val) - _Z975 * se_log_or),
        math.exp(math.log(or_val) + _Z975 * se_log_or),
    )
    for w in warnings:
        logger.warning("two_proportion_z: %s", w)
    return TestResult(
        test_name="two_proportion_z",
        statistic=z,
        p_two_sided=p,
        effect=rr,
        extra_effects=(odds,),
        group_sizes=(n1, n2),
        warnings=tuple(warnings),
    )


def _u_from_ranks(rank_rows: np.ndarray, na: int) -> np.ndarray:
    return rank_rows[:, :na].sum(axis=1) - na * (na + 1) / 2.0


def permutation_test(
    a,
    b,
    statistic: Literal["mean_diff", "u_statistic"] = "mean_diff",
    iterations: int = 10_000,
    rng_seed: int = 0,
    chunk_size: int = 20_000,
) -> float:
    """Two-sided permutation p-value with add-one smoothing.

    Group labels are reshuffled ``iterations`` times; the p-value counts
    relabelings whose statistic is at least as far from its null centre as
    the observed one: ``(count + 1) / (iterations + 1)``.
    """
    if iterations < 1000:
        raise ValueError("permutation_test needs at least 1000 iterations")
    a = _as_samples(a, "a", 1)
    b = _as_samples(b, "b", 1)
    na = a.size
    pooled = np.concatenate([a, b])
    if statistic == "mean_diff":
        values = pooled
        def stat(rows: np.ndarray) -> np.ndarray:
            return rows[:, :na].mean(axis=1) - rows[:, na:].mean(axis=1)
        center = 0.0
    elif statistic == "u_statistic":
        values = midranks(pooled)
        def stat(rows: np.ndarray) -> np.ndarray:
            return _u_from_ranks(rows, na)
        center = na * b.size / 2.0
    else:
        raise ValueError(f"unknown permutation statistic {statistic!r}")

    observed = abs(float(stat(values[None, :])[0]) - center)
    # guard against float noise in sums of identical multisets
    threshold = observed - 1e-9 * max(1.0, observed)
    rng = np.random.default_rng(rng_seed)
    hits = 0
    done = 0
    while done < iterations:
        m = min(chunk_size, iterations - done)
        rows = rng.permuted(np.broadcast_to(values, (m, values.size)), axis=1)
        hits += int(np.count_nonzero(np.abs(stat(rows) - center) >= threshold))
        done += m
    return (hits + 1) / (iterations + 1)
