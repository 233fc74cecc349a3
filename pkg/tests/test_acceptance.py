"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a line for the terminal summary, so a full run ends
with one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import itertools
import json
import math
import shutil
import socket
import time
from pathlib import Path

import numpy as np
import pytest

from hypodisco.agents import AnalysisReport
from hypodisco.cli import main
from hypodisco.inference import FeatureMatrix, count_significant
from hypodisco.search import HypothesisBank, HypothesisRecord, min_pairwise_distance, prune_bank
from hypodisco.stats import (
    bonferroni_threshold,
    chi_square_independence,
    logistic_regression,
    mann_whitney_u,
    two_proportion_z,
    welch_t_test,
)
from hypodisco.stats.special import normal_two_sided_p

from conftest import ACCEPTANCE, FIXTURES

ORACLE_ITERATIONS = 200_000
INSTANCES = 20
CHUNK = 20_000
_REPORT = AnalysisReport("h", True, "inconclusive")


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))


def cli(*argv) -> int:
    return main([str(a) for a in argv])


# ---------------------------------------------------------------- criterion 1 oracles


def _welch_stat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    va, vb = a.var(axis=-1, ddof=1), b.var(axis=-1, ddof=1)
    return (a.mean(axis=-1) - b.mean(axis=-1)) / np.sqrt(va / a.shape[-1] + vb / b.shape[-1])


def _shuffled(rng: np.random.Generator, pooled: np.ndarray):
    done = 0
    while done < ORACLE_ITERATIONS:
        size = min(CHUNK, ORACLE_ITERATIONS - done)
        yield rng.permuted(np.broadcast_to(pooled, (size, pooled.size)), axis=1)
        done += size


def welch_oracle(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> float:
    observed = abs(_welch_stat(a, b))
    pooled, na = np.concatenate([a, b]), a.size
    hits = sum(int((np.abs(_welch_stat(r[:, :na], r[:, na:])) >= observed * (1 - 1e-12)).sum())
               for r in _shuffled(rng, pooled))
    return hits / ORACLE_ITERATIONS


def mann_whitney_oracle(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> float:
    pooled, na, nb = np.concatenate([a, b]), a.size, b.size
    order = pooled.argsort(kind="stable")
    ranks = np.empty(pooled.size)
    ranks[order] = np.arange(1, pooled.size + 1)
    for v in np.unique(pooled):  # midranks for ties
        ranks[pooled == v] = ranks[pooled == v].mean()
    centre = na * nb / 2.0
    observed = abs(ranks[:na].sum() - na * (na + 1) / 2.0 - centre)
    hits = sum(int((np.abs(r[:, :na].sum(axis=1) - na * (na + 1) / 2.0 - centre) >= observed - 1e-9).sum())
               for r in _shuffled(rng, ranks))
    return hits / ORACLE_ITERATIONS


def two_proportion_oracle(x1: int, n1: int, x2: int, n2: int, rng: np.random.Generator) -> float:
    # relabelling the pooled 0/1 outcomes leaves group-1 successes hypergeometric
    k, n = x1 + x2, n1 + n2
    draws = rng.hypergeometric(k, n - k, n1, size=ORACLE_ITERATIONS)
    observed = abs(x1 / n1 - x2 / n2)
    return float(np.mean(np.abs(draws / n1 - (k - draws) / n2) >= observed - 1e-12))


def chi_square_oracle(table: np.ndarray, rng: np.random.Generator) -> float:
    # relabelling rows between the two groups leaves group-1 counts multivariate hypergeometric
    cols, n1 = table.sum(axis=0), int(table[0].sum())
    n = table.sum()
    first = rng.multivariate_hypergeometric(cols, n1, size=ORACLE_ITERATIONS)
    sims = np.stack([first, cols - first], axis=1)
    expected = np.outer(table.sum(axis=1), cols) / n
    stat = lambda t: (((t - expected) ** 2) / expected).sum(axis=(-2, -1))  # noqa: E731
    return float(np.mean(stat(sims) >= stat(table) * (1 - 1e-12)))


def sizes(rng: np.random.Generator) -> tuple[int, int]:
    return int(rng.integers(8, 41)), int(rng.integers(8, 41))


def welch_instances(rng):
    for _ in range(INSTANCES):
        na, nb = sizes(rng)
        yield rng.normal(0, 1, na), rng.normal(rng.uniform(0, 1.2), rng.uniform(0.5, 2.0), nb)


def proportion_instances(rng):
    made = 0
    while made < INSTANCES:
        n1, n2 = sizes(rng)
        x1, x2 = int(rng.binomial(n1, rng.uniform(0.15, 0.85))), int(rng.binomial(n2, rng.uniform(0.15, 0.85)))
        if 0 < x1 + x2 < n1 + n2:
            made += 1
            yield x1, n1, x2, n2


def table_instances(rng):
    made = 0
    while made < INSTANCES:
        n1, n2 = sizes(rng)
        c = int(rng.integers(2, 5))
        table = np.stack([rng.multinomial(n1, rng.dirichlet(np.ones(c))),
                          rng.multinomial(n2, rng.dirichlet(np.ones(c)))])
        if (table.sum(axis=0) > 0).all():
            made += 1
            yield table


def _compare(name: str, pairs: list[tuple[float, float]], seconds: float) -> None:
    diffs = [abs(p - q) for p, q in pairs]
    worst = max(diffs)
    record(1, worst <= 0.02,
           f"{name} worst |p - oracle| {worst:.4f} over {len(pairs)} instances ({seconds:.1f}s)")
    assert worst <= 0.02, f"{name}: {sum(d > 0.02 for d in diffs)} of {len(diffs)} instances off by more than 0.02"


_RUNTIME: dict[str, float] = {}


def test_criterion_1_welch():
    rng, start = np.random.default_rng(101), time.perf_counter()
    pairs = [(welch_t_test(a, b).p_two_sided, welch_oracle(a, b, rng)) for a, b in welch_instances(rng)]
    _RUNTIME["welch"] = time.perf_counter() - start
    _compare("welch_t_test", pairs, _RUNTIME["welch"])


def test_criterion_1_mann_whitney():
    rng, start = np.random.default_rng(102), time.perf_counter()
    pairs = [(mann_whitney_u(a, b).p_two_sided, mann_whitney_oracle(a, b, rng)) for a, b in welch_instances(rng)]
    _RUNTIME["mann_whitney"] = time.perf_counter() - start
    _compare("mann_whitney_u", pairs, _RUNTIME["mann_whitney"])


def test_criterion_1_chi_square():
    rng, start = np.random.default_rng(103), time.perf_counter()
    pairs = [(chi_square_independence(t).p_two_sided, chi_square_oracle(t, rng)) for t in table_instances(rng)]
    _RUNTIME["chi_square"] = time.perf_counter() - start
    _compare("chi_square_independence", pairs, _RUNTIME["chi_square"])


def test_criterion_1_two_proportion():
    rng, start = np.random.default_rng(104), time.perf_counter()
    pairs = [(two_proportion_z(*xs).p_two_sided, two_proportion_oracle(*xs, rng)) for xs in proportion_instances(rng)]
    _RUNTIME["two_proportion"] = time.perf_counter() - start
    _compare("two_proportion_z", pairs, _RUNTIME["two_proportion"])


def test_criterion_1_runtime():
    total = sum(_RUNTIME.values())
    complete = len(_RUNTIME) == 4
    record(1, complete and total < 60, f"runtime {total:.1f}s for the four oracle suites")
    assert complete and total < 60


# ---------------------------------------------------------------- criterion 2


def test_criterion_2_logistic_identity():
    rng = np.random.default_rng(202)
    worst_slope = worst_intercept = worst_p = 0.0
    for _ in range(200):
        a, b, c, d = (int(v) for v in rng.integers(1, 101, size=4))
        x = np.r_[np.ones(a + b), np.zeros(c + d)][:, None]
        y = np.r_[np.ones(a), np.zeros(b), np.ones(c), np.zeros(d)]
        fit = logistic_regression(x, y, names=["x"])
        slope, intercept = fit.coefficients["x"], fit.coefficients["intercept"]
        worst_slope = max(worst_slope, abs(slope.beta - math.log(a * d / (b * c))))
        worst_intercept = max(worst_intercept, abs(intercept.beta - math.log(c / d)))
        worst_p = max(worst_p, abs(slope.p - normal_two_sided_p(slope.wald_z)))
    ok = worst_slope < 1e-6 and worst_intercept < 1e-6 and worst_p < 1e-9
    record(2, ok, f"200 tables: max slope err {worst_slope:.1e}, intercept err {worst_intercept:.1e}, "
                  f"Wald p err {worst_p:.1e}")
    assert ok


# ---------------------------------------------------------------- criteria 3 and 4


def test_criterion_3_ab_arithmetic():
    r = two_proportion_z(15100, 200000, 3400, 200000)
    rr = r.effect.value
    uplift = round((rr - 1) * 100)
    ok = r.effect.kind == "relative_risk" and abs(rr - 4.44) <= 0.01 and uplift == 344 and r.p_two_sided < 1e-6
    record(3, ok, f"relative risk {rr:.4f}, uplift +{uplift}%, p {r.p_two_sided:.1e}")
    assert ok


def test_criterion_4_bonferroni():
    t = bonferroni_threshold(0.05, 4)
    record(4, t == 0.0125, f"bonferroni_threshold(0.05, 4) = {t!r}")
    assert t == 0.0125


# ---------------------------------------------------------------- criteria 5 and 6


@pytest.fixture
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


def reports(log: Path) -> list[dict]:
    return [e for e in map(json.loads, log.read_text().splitlines()) if e["event"] == "report"]


def test_criterion_5_planted_signal(tmp_path, no_network):
    start = time.perf_counter()
    code = cli("discover", "--config", FIXTURES / "planted_config.yaml", "--transport", "replay",
               "--transcripts", FIXTURES / "planted_transcripts.jsonl", "--out", tmp_path)
    seconds = time.perf_counter() - start
    bank = HypothesisBank.load(tmp_path / "bank.jsonl")
    planted = [r for r in bank if "honestly" in r.text]
    oracle = (0.4 / 0.6) / (0.2 / 0.8)
    odds = planted[0].report.effect_of("odds_ratio").value if planted else math.nan
    p = planted[0].report.headline_p if planted else math.nan
    ok = code == 0 and bool(planted) and p < 0.0125 and abs(odds / oracle - 1) <= 0.2 and seconds < 60
    record(5, ok, f"accepted {planted[0].id if planted else None}, p {p:.2e}, OR {odds:.3f} vs {oracle:.3f}, "
                  f"{seconds:.1f}s, offline")
    assert ok


def test_criterion_6_planted_confound(tmp_path, no_network):
    code = cli("discover", "--config", FIXTURES / "confound_config.yaml", "--out", tmp_path)
    reps = reports(tmp_path / "session.jsonl")
    first, controlled = reps[0]["report"], reps[-1]["report"]
    controls = [k for k in controlled["results"][0]["result"]["coefficients"] if k.startswith("party")]
    bank = HypothesisBank.load(tmp_path / "bank.jsonl")
    ok = (code == 0 and first["verdict"] == "supported" and controlled["verdict"] == "unsupported"
          and bool(controls) and controlled["headline_p"] > 0.05 and len(bank) == 0)
    record(6, ok, f"uncontrolled p {first['headline_p']:.1e}; with {controls} phrase p "
                  f"{controlled['headline_p']:.3f}, verdict {controlled['verdict']}, bank size {len(bank)}")
    assert ok


# ---------------------------------------------------------------- criterion 7


def test_criterion_7_greedy_dispersion():
    rng = np.random.default_rng(707)
    worst, below = math.inf, 0
    for _ in range(100):
        n, k = int(rng.integers(2, 11)), int(rng.integers(2, 6))
        v = rng.normal(size=(n, int(rng.integers(2, 8))))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        bank = HypothesisBank(k, [HypothesisRecord(f"h{j:03d}-1", f"t{j}", j, 1, _REPORT, True, tuple(row))
                                  for j, row in enumerate(v)])
        kept, _ = prune_bank(bank)
        if len(kept) < 2:
            continue
        optimum = max(min_pairwise_distance(v[list(s)]) for s in itertools.combinations(range(n), len(kept)))
        ratio = min_pairwise_distance(kept.embeddings()) / optimum if optimum > 0 else 1.0
        worst = min(worst, ratio)
        below += ratio < 0.5
    record(7, below == 0, f"100 instances, worst ratio to brute-force optimum {worst:.3f}, {below} below 0.5")
    assert below == 0


# ---------------------------------------------------------------- criterion 8


def _matrix(seed: int, planted: bool) -> tuple[FeatureMatrix, np.ndarray]:
    rng = np.random.default_rng(seed)
    x = (rng.random((2000, 10)) < 0.5).astype(float)
    rate = np.where(x[:, 0] == 1, 0.4, 0.2) if planted else np.full(2000, 0.3)
    y = (rng.random(2000) < rate).astype(float)
    names = [f"f{k}" for k in range(10)]
    return FeatureMatrix(names, x, ["binary"] * 10, names), y


def test_criterion_8_null_calibration():
    zeros = sum(count_significant(*_matrix(8000 + s, False)).count == 0 for s in range(100))
    exact = sum(count_significant(*_matrix(9000 + s, True)).significant == ["f0"] for s in range(100))
    ok = zeros >= 95 and exact >= 90
    record(8, ok, f"null: 0 significant in {zeros}/100; planted: exactly the planted column in {exact}/100")
    assert ok


# ---------------------------------------------------------------- criterion 9


def _edits(log: Path) -> list[tuple[int, str]]:
    """(line index, label) for every p value the log records."""
    found = []
    for k, line in enumerate(log.read_text().splitlines()):
        e = json.loads(line)
        if e["event"] == "experimenter_turn" and e["outcome"]:
            for t in e["outcome"]["test_results"]:
                found.append((k, f"test step {t['step']}"))
            for r in e["outcome"]["regression_results"]:
                found += [(k, f"regression step {r['step']} term {name}") for name in r["result"]["coefficients"]]
        elif e["event"] == "report" and e["report"].get("headline_p") is not None:
            found.append((k, f"report {e['id']}"))
    return found


def _apply_edit(lines: list[str], k: int, label: str) -> list[str]:
    e = json.loads(lines[k])
    bump = lambda p: p * 1.5 + 1e-3  # noqa: E731
    if label.startswith("report"):
        e["report"]["headline_p"] = bump(e["report"]["headline_p"])
    elif label.startswith("test"):
        step = int(label.split()[2])
        t = next(t for t in e["outcome"]["test_results"] if t["step"] == step)
        t["result"]["p_two_sided"] = bump(t["result"]["p_two_sided"])
    else:
        parts = label.split()
        step, term = int(parts[2]), " ".join(parts[4:])
        r = next(r for r in e["outcome"]["regression_results"] if r["step"] == step)
        r["result"]["coefficients"][term]["p"] = bump(r["result"]["coefficients"][term]["p"])
    out = list(lines)
    out[k] = json.dumps(e, sort_keys=True)
    return out


def test_criterion_9_replay_closure(tmp_path):
    rec, rep = tmp_path / "record", tmp_path / "replay"
    config = FIXTURES / "planted_config.yaml"
    assert cli("discover", "--config", config, "--transport", "record",
               "--upstream-script", FIXTURES / "planted_script.yaml", "--out", rec) == 0
    rep.mkdir()
    shutil.copy(rec / "transcripts.jsonl", rep / "transcripts.jsonl")
    assert cli("discover", "--config", config, "--transport", "replay", "--out", rep) == 0
    identical = all((rec / f).read_bytes() == (rep / f).read_bytes() for f in ("bank.jsonl", "session.jsonl", "report.md"))
    clean = cli("replay", "--log", rep / "session.jsonl", "--dataset", FIXTURES / "planted.csv")

    log = rep / "session.jsonl"
    original = log.read_text().splitlines()
    edits = _edits(log)
    caught = 0
    for k, label in edits:
        log.write_text("\n".join(_apply_edit(original, k, label)) + "\n")
        caught += cli("replay", "--log", log, "--dataset", FIXTURES / "planted.csv") == 1
    log.write_text("\n".join(original) + "\n")
    ok = identical and clean == 0 and caught == len(edits) and len(edits) > 0
    record(9, ok, f"record vs replay byte-identical: {identical}; clean audit exit {clean}; "
                  f"{caught}/{len(edits)} single-p edits exit 1")
    assert ok


# ---------------------------------------------------------------- criterion 10


def test_criterion_10_digest_golden(capsys):
    code = cli("digest", "--dataset", FIXTURES / "digest.csv", "--seed", 7)
    out = capsys.readouterr().out
    golden = (FIXTURES / "digest_golden.txt").read_text(encoding="utf-8")
    truncated = any(".." in line and len(line.split("|")[-3]) == 100 for line in out.splitlines() if "|" in line)
    ok = code == 0 and out == golden and truncated
    record(10, ok, f"byte-identical to golden ({len(golden)} bytes), 100-char truncation present: {truncated}")
    assert ok
