"""Command-line entry point: discover, infer, evaluate, digest, replay.

Exit codes: 0 success, 1 audit or run failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .agents import ExperimenterConfig
from .annotator import AnnotationCache, Annotator
from .dataset import DataLoadError, Dataset, SamplingStrategy, load_table, sample_observations, split_indices, summarize
from .features import (
    Budget,
    ExperimentSession,
    PlanExecutionError,
    PlanOutcome,
    PlanValidationError,
    step_from_dict,
)
from .inference import (
    BankRegressionClassifier,
    InferenceError,
    binary_outcome,
    evaluate_bank,
    two_step_predict_dataset,
)
from .llm import (
    API_KEY_ENV,
    Gateway,
    GatewayError,
    LiveTransport,
    RecordTransport,
    ReplayTransport,
    ScriptedTransport,
    TranscriptStore,
)
from .search import HypothesisBank, Roles, SearchConfig, SessionLog, run_discovery
from .stats import describe_effect

logger = logging.getLogger("hypodisco")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

BANK_FILE = "bank.jsonl"
LOG_FILE = "session.jsonl"
TRANSCRIPT_FILE = "transcripts.jsonl"
ANNOTATION_FILE = "annotations.jsonl"
REPORT_FILE = "report.md"

DEFAULTS: dict[str, Any] = {
    "dataset": None,
    "format": None,
    "outcome": None,
    "task": "",
    "labels": None,
    "positive": None,
    "iterations": 10,
    "refinements": 4,
    "capacity": 20,
    "alpha": 0.05,
    "sampling": "random:5",
    "seed": 0,
    "holdout": 0.2,
    "transport": "live",
    "out": "run",
    "script": None,
    "upstream_script": None,
    "transcripts": None,
    "generator_model": "generator",
    "experimenter_model": "experimenter",
    "annotator_model": "annotator",
    "embedding_model": "default-embedding",
    "max_turns": 12,
    "image_root": None,
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def out(self) -> Path:
        return Path(self.values["out"])

    @property
    def search(self) -> SearchConfig:
        return SearchConfig(
            outer_iterations=int(self["iterations"]),
            refinement_steps=int(self["refinements"]),
            bank_capacity=int(self["capacity"]),
            alpha=float(self["alpha"]),
            sampling=SamplingStrategy.parse(str(self["sampling"])),
            rng_seed=int(self["seed"]),
        )

    @property
    def transcripts(self) -> Path:
        return Path(self["transcripts"]) if self["transcripts"] else self.out / TRANSCRIPT_FILE


def load_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the YAML file, then any flag given on the command line."""
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise UsageError(f"{path}: config must be a mapping of keys to values")
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"{path}: unknown config keys {unknown}")
        if "api_key" in data:
            raise UsageError("credentials belong in the environment, not the config file")
        base = path.parent
        for key in ("dataset", "script", "upstream_script", "transcripts", "image_root", "out"):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
        values.update(data)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return RunConfig(values)


def load_dataset(config: RunConfig, path: str | None = None) -> Dataset:
    path = path or config["dataset"]
    if not path:
        raise UsageError("no dataset given (use --dataset or the config key 'dataset')")
    try:
        ds = load_table(path, config["format"])
    except (DataLoadError, OSError, ValueError) as exc:
        raise UsageError(f"cannot load dataset: {exc}") from None
    outcome = config["outcome"]
    if outcome is not None:
        if outcome not in ds:
            raise UsageError(f"outcome column {outcome!r} is not in {path} (columns: {ds.names})")
        ds = ds.with_outcome(outcome)
    return ds


def split(config: RunConfig, ds: Dataset) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(ds.row_count, float(config["holdout"]), int(config["seed"]))
    return ds.take(train_idx), ds.take(test_idx)


def make_transport(config: RunConfig):
    mode = str(config["transport"]).lower()
    if mode == "scripted":
        if not config["script"]:
            raise UsageError("scripted transport needs --script")
        return ScriptedTransport.from_file(config["script"])
    if mode == "replay":
        if not config.transcripts.exists():
            raise UsageError(f"replay needs an existing transcript store at {config.transcripts}")
        return ReplayTransport(TranscriptStore(config.transcripts))
    if mode in ("live", "record"):
        if mode == "record" and config["upstream_script"]:
            upstream = ScriptedTransport.from_file(config["upstream_script"])
        else:
            if not os.environ.get(API_KEY_ENV):
                raise UsageError(f"{mode} transport needs the {API_KEY_ENV} environment variable")
            upstream = LiveTransport.from_env()
        if mode == "live":
            return upstream
        return RecordTransport(upstream, TranscriptStore(config.transcripts))
    raise UsageError(f"unknown transport {mode!r}; use live, record, replay or scripted")


def make_gateway(config: RunConfig) -> Gateway:
    return Gateway(make_transport(config), embedding_model=str(config["embedding_model"]))


def make_annotator(config: RunConfig, gateway: Gateway, cache_path: Path | None = None) -> Annotator:
    cache = AnnotationCache(cache_path if cache_path is not None else config.out / ANNOTATION_FILE)
    return Annotator(gateway, model=str(config["annotator_model"]), cache=cache, image_root=config["image_root"])


# --------------------------------------------------------------------------- report


def render_report(bank: HypothesisBank, log: SessionLog, config: SearchConfig, dataset_name: str) -> str:
    lines = [
        f"# Hypothesis discovery: {dataset_name}",
        "",
        f"- Outer iterations: {config.outer_iterations}, refinements per iteration: {config.refinement_steps}",
        f"- Acceptance threshold: p < {config.alpha:g} / {config.refinement_steps} = {config.threshold:.4g}",
        f"- Bank: {len(bank)} of capacity {config.bank_capacity}",
    ]
    failed = [e["i"] for e in log.events if e["event"] == "iteration_failed"]
    if failed:
        lines.append(f"- Failed iterations: {', '.join(map(str, failed))}")
    lines += ["", "## Bank", ""]
    if len(bank) == 0:
        lines.append("No hypotheses were accepted.")
    else:
        lines += ["| id | hypothesis | test | p | effect | magnitude | n |", "|---|---|---|---|---|---|---|"]
        for r in bank:
            rep = r.report
            eff = rep.headline_effect
            effect = f"{eff.kind} {eff.value:.3g}" if eff else "NA"
            try:
                magnitude = describe_effect(eff) if eff else "NA"
            except ValueError:
                magnitude = "NA"
            test = rep.headline_test + (f" ({rep.headline_term})" if rep.headline_term else "")
            text = r.text.replace("|", "\\|")
            lines.append(f"| {r.id} | {text} | {test} | {rep.headline_p:.3g} | {effect} | {magnitude} | "
                         f"{rep.support_n} |")
    lines += ["", "## Verdict history", ""]
    by_iter: dict[int, list[dict[str, Any]]] = defaultdict(list)
    for e in log.events:
        if e["event"] == "report":
            by_iter[e["i"]].append(e)
    accepted = {e["i"]: e.get("accepted") for e in log.events if e["event"] == "selection"}
    for i in sorted(by_iter):
        lines.append(f"### Iteration {i}")
        for e in by_iter[i]:
            rep = e["report"]
            p = rep.get("headline_p")
            p_text = f"p = {p:.3g}" if p is not None else "no headline test"
            mark = " (accepted)" if accepted.get(i) == e["id"] else ""
            lines.append(f"- {e['id']}: {rep['verdict']}, {p_text}{mark}: {rep['hypothesis']}")
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


# --------------------------------------------------------------------------- commands


def cmd_discover(args: argparse.Namespace) -> int:
    config = load_config(args)
    search = config.search
    dataset = load_dataset(config)
    if dataset.outcome_column is None:
        raise UsageError("discovery needs an outcome column (--outcome)")
    gateway = make_gateway(config)
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    train, _ = split(config, dataset)
    dataset_name = Path(config["dataset"]).name
    roles = Roles(
        gateway=gateway,
        annotator=make_annotator(config, gateway),
        task_description=str(config["task"]),
        dataset_name=dataset_name,
        generator_model=str(config["generator_model"]),
        experimenter=ExperimenterConfig(max_turns=int(config["max_turns"]), model=str(config["experimenter_model"])),
        budget=Budget(),
        embedding_model=str(config["embedding_model"]),
    )
    bank_path, log_path = out / BANK_FILE, out / LOG_FILE
    bank = HypothesisBank.load(bank_path) if bank_path.exists() and log_path.exists() else None
    log = SessionLog(log_path)
    if not log.has_header():
        log.write("run", dataset=dataset_name, holdout=float(config["holdout"]), seed=int(config["seed"]),
                  outcome=dataset.outcome_column, positive=config["positive"])

    def checkpoint(i: int, current: HypothesisBank) -> None:
        current.save(bank_path)

    bank, log = run_discovery(train, search, roles, bank, log, on_iteration=checkpoint)
    bank.save(bank_path)
    (out / REPORT_FILE).write_text(render_report(bank, log, search, dataset_name), encoding="utf-8")
    ok = [e for e in log.events if e["event"] == "iteration_end" and e["status"] == "ok"]
    failed = [e for e in log.events if e["event"] == "iteration_failed"]
    print(f"bank: {len(bank)} hypotheses -> {bank_path}")
    for e in failed:
        print(f"iteration {e['i']} failed: {e['error']}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def _load_bank(path: str) -> HypothesisBank:
    try:
        return HypothesisBank.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load bank {path}: {exc}") from None


def cmd_infer(args: argparse.Namespace) -> int:
    config = load_config(args)
    bank = _load_bank(args.bank)
    if len(bank) == 0:
        raise UsageError("the bank is empty")
    dataset = load_dataset(config)
    if dataset.outcome_column is None:
        raise UsageError("inference needs an outcome column (--outcome)")
    train, test = split(config, dataset)
    if args.test_dataset:
        test = load_dataset(config, args.test_dataset)
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    y_test, positive = binary_outcome(list(test[test.outcome_column]), config["positive"])
    needs_llm = args.method == "two_step" or any(
        s.mode == "llm" for r in bank for s in r.report.feature_specs_used
    )
    gateway = make_gateway(config) if needs_llm else None
    annotator = make_annotator(config, gateway) if gateway is not None else None
    records = []
    if args.method == "regression":
        model = BankRegressionClassifier(bank, annotator, config["positive"]).fit(train)
        for w in model.train_.warnings:
            print(f"warning: {w}", file=sys.stderr)
        prob = model.predict_proba(test)
        pred = (prob >= 0.5).astype(int)
        accuracy = float(np.mean(pred == y_test))
        records = [{"row": k, "prediction": int(p), "probability": float(q)} for k, (p, q) in enumerate(zip(pred, prob))]
    else:
        labels = list(config["labels"] or sorted({str(v) for v in test[test.outcome_column] if v is not None}))
        results = two_step_predict_dataset(test, bank, gateway, labels, str(config["task"]), k=args.k)
        correct = 0
        for k, (res, truth) in enumerate(zip(results, test[test.outcome_column])):
            if isinstance(res, InferenceError):
                records.append({"row": k, "error": str(res)})
                continue
            correct += res.label == str(truth)
            records.append({"row": k, "prediction": res.label, "selected": list(res.selected),
                            "fallback": res.fallback})
        accuracy = correct / len(results)
    with (out / "predictions.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = {"method": args.method, "accuracy": round(accuracy, 4), "n": len(records), "positive": str(positive)}
    (out / "inference.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"accuracy ({args.method}): {accuracy:.4f} on {len(records)} rows")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args)
    bank = _load_bank(args.bank)
    if len(bank) == 0:
        raise UsageError("the bank is empty; nothing to evaluate")
    dataset = load_dataset(config)
    if dataset.outcome_column is None:
        raise UsageError("evaluation needs an outcome column (--outcome)")
    train, test = split(config, dataset)
    if args.test_dataset:
        test = load_dataset(config, args.test_dataset)
    needs_llm = any(s.mode == "llm" for r in bank for s in r.report.feature_specs_used)
    annotator = None
    if needs_llm:
        annotator = make_annotator(config, make_gateway(config))
    try:
        report = evaluate_bank(bank, test, annotator, alpha=float(config["alpha"]),
                               positive=config["positive"], fit_on=train)
    except InferenceError as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "evaluation.json").write_text(report.to_json(), encoding="utf-8")
    (out / "evaluation.md").write_text(report.to_markdown(), encoding="utf-8")
    print(report.to_markdown(), end="")
    return EXIT_OK


def cmd_digest(args: argparse.Namespace) -> int:
    config = load_config(args)
    dataset = load_dataset(config)
    strategy = SamplingStrategy.parse(str(config["sampling"]))
    if strategy.kind not in ("random", "none"):
        raise UsageError("digest supports random or none sampling only")
    rows = sample_observations(dataset, strategy, int(config["seed"]))
    sys.stdout.write(str(summarize(dataset, rows)))
    return EXIT_OK


def _compare(step: int, what: str, logged: Any, fresh: Any, problems: list[str]) -> None:
    if logged != fresh:
        problems.append(f"step {step}: {what} logged {logged!r} but recomputed {fresh!r}")


def _compare_outcomes(logged: PlanOutcome, fresh: PlanOutcome, problems: list[str]) -> None:
    fresh_results = {s: r for s, r in [*fresh.test_results, *fresh.regression_results]}
    for step, result in [*logged.test_results, *logged.regression_results]:
        again = fresh_results.get(step)
        if again is None:
            problems.append(f"step {step}: logged a result but recomputation produced none")
            continue
        if hasattr(result, "p_two_sided"):
            _compare(step, "p", result.p_two_sided, again.p_two_sided, problems)
            _compare(step, "statistic", result.statistic, again.statistic, problems)
            _compare(step, "effect", result.effect.to_dict(), again.effect.to_dict(), problems)
        else:
            for name, coef in result.coefficients.items():
                other = again.coefficients.get(name)
                if other is None:
                    problems.append(f"step {step}: term {name} missing on recomputation")
                    continue
                _compare(step, f"{name} p", coef.p, other.p, problems)
                _compare(step, f"{name} beta", coef.beta, other.beta, problems)


def cmd_replay(args: argparse.Namespace) -> int:
    """Re-run every logged plan and check each logged number against the recomputation."""
    log_path = Path(args.log)
    if not log_path.exists():
        raise UsageError(f"session log {log_path} does not exist")
    events = SessionLog(log_path).events
    run = next((e for e in events if e["event"] == "run"), None)
    header = next((e for e in events if e["event"] == "header"), None)
    if run is None or header is None:
        raise UsageError(f"{log_path} is not a discovery session log")
    config = load_config(args)
    values = dict(config.values)
    values["outcome"] = header["outcome"]
    if not values["dataset"]:
        raise UsageError("replay needs --dataset (the table the run used)")
    values["holdout"], values["seed"] = run["holdout"], run["seed"]
    run_dir = log_path.parent
    if not values["transcripts"] and (run_dir / TRANSCRIPT_FILE).exists():
        values["transcripts"] = str(run_dir / TRANSCRIPT_FILE)
        values["transport"] = "replay"
    config = RunConfig(values)
    dataset = load_dataset(config)
    train, _ = split(config, dataset)
    annotator = None
    if config["transcripts"]:
        gateway = Gateway(ReplayTransport(TranscriptStore(config.transcripts)))
        annotator = make_annotator(config, gateway, run_dir / ANNOTATION_FILE)

    problems: list[str] = []
    sessions: dict[int, ExperimentSession] = {}
    results: dict[tuple[int, int], Any] = {}
    checked = 0
    for e in events:
        if e["event"] == "iteration_start":
            sessions[e["i"]] = ExperimentSession(train, annotator, Budget())
        elif e["event"] == "experimenter_turn" and e["plan"]:
            session = sessions[e["i"]]
            numbered = [(d["step"], step_from_dict({k: v for k, v in d.items() if k != "step"})) for d in e["plan"]]
            if numbered[0][0] != session.steps_run + 1:
                problems.append(f"step {numbered[0][0]}: numbering does not follow the logged session")
            try:
                fresh = session.run([s for _, s in numbered])
                failed_at = None
            except PlanExecutionError as exc:
                fresh, failed_at = exc.outcome, exc.step
            except PlanValidationError as exc:
                problems.append(f"step {numbered[0][0]}: plan no longer validates: {exc.errors[0]}")
                continue
            if failed_at != e.get("failed_step"):
                problems.append(f"step {failed_at or numbered[-1][0]}: failure point differs from the log "
                                f"(logged {e.get('failed_step')})")
            if e["outcome"] is not None:
                _compare_outcomes(PlanOutcome.from_dict(e["outcome"]), fresh, problems)
                checked += len(e["outcome"]["test_results"]) + len(e["outcome"]["regression_results"])
            for s, r in [*fresh.test_results, *fresh.regression_results]:
                results[(e["i"], s)] = r
        elif e["event"] == "report":
            rep = e["report"]
            step = rep.get("headline_step")
            if step is None or rep.get("headline_p") is None:
                continue
            fresh = results.get((e["i"], step))
            if fresh is None:
                problems.append(f"step {step}: report {e['id']} cites a step with no recomputed result")
                continue
            p = fresh.p_two_sided if hasattr(fresh, "p_two_sided") else fresh.coefficients[rep["headline_term"]].p
            _compare(step, f"headline p of {e['id']}", rep["headline_p"], p, problems)
            checked += 1
    if problems:
        for line in problems:
            print(f"MISMATCH {line}")
        return EXIT_FAIL
    print(f"replay ok: {checked} logged results match recomputation")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file of run settings; flags override its keys")
    p.add_argument("--dataset", help="table to load (csv/tsv or JSON lines)")
    p.add_argument("--format", choices=["delimited", "records"])
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--task", help="task description given to the agents")
    p.add_argument("--positive", help="outcome level counted as positive")
    p.add_argument("--labels", type=lambda s: s.split(","), help="comma-separated label set")
    p.add_argument("--iterations", type=int, help="outer iterations N")
    p.add_argument("--refinements", type=int, help="refinement steps T")
    p.add_argument("--capacity", type=int, help="bank capacity K")
    p.add_argument("--alpha", type=float, help="significance level")
    p.add_argument("--sampling", help="random:K, boosting:K, clustering:K:C or none")
    p.add_argument("--seed", type=int)
    p.add_argument("--holdout", type=float, help="held-out fraction (default 0.2)")
    p.add_argument("--transport", choices=["live", "record", "replay", "scripted"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--script", help="rule file for the scripted transport")
    p.add_argument("--upstream-script", dest="upstream_script", help="scripted upstream for record mode")
    p.add_argument("--transcripts", help="transcript store (default <out>/transcripts.jsonl)")
    p.add_argument("--max-turns", dest="max_turns", type=int)
    p.add_argument("--image-root", dest="image_root")
    for role in ("generator", "experimenter", "annotator", "embedding"):
        p.add_argument(f"--{role}-model", dest=f"{role}_model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypodisco", description="LLM-driven hypothesis discovery on tabular data")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discover", help="run the hypothesis search")
    _add_run_flags(p)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("infer", help="predict held-out labels with a bank")
    _add_run_flags(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--test-dataset", dest="test_dataset")
    p.add_argument("--method", choices=["two_step", "regression"], default="regression")
    p.add_argument("-k", "--k", type=int, default=3)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="count significant bank hypotheses on held-out data")
    _add_run_flags(p)
    p.add_argument("--bank", required=True)
    p.add_argument("--test-dataset", dest="test_dataset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("digest", help="print the dataset digest")
    _add_run_flags(p)
    p.set_defaults(func=cmd_digest)

    p = sub.add_parser("replay", help="audit a session log by re-running its plans")
    _add_run_flags(p)
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GatewayError, InferenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
