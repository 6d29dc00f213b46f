"""Chunked-action execution, trial running, and success-rate reporting.

Two execution strategies: run every action of each predicted chunk before
re-planning (execute-all), or run only the first and re-plan every step
(execute-first / receding horizon). Episodes never raise out of the
runner; malformed predictions are scored as failures with a flag.

Reports follow the usual evaluation-table shape: one row per task with
trials/successes/rate, unweighted mean rates per category, and an
unweighted overall mean. Display rounds to one decimal; raw values are
kept at full precision.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from actok import sim
from actok.codec import decode_tokens
from actok.errors import ToolkitError
from actok.policy import PolicyModel, make_observation
from actok.sim import TaskSpec

REPORT_FORMAT = "eval-report"
REPORT_VERSION = 1


class ExecMode(enum.Enum):
    EXECUTE_ALL = "execute-all"
    EXECUTE_FIRST = "execute-first"

    @classmethod
    def from_name(cls, name: str) -> "ExecMode":
        for mode in cls:
            if mode.value == name:
                return mode
        raise ValueError(f"unknown execution mode {name!r}")


@dataclass(frozen=True)
class ExecStrategy:
    mode: ExecMode
    horizon: int  # must match the policy codec's chunk length


@dataclass
class EpisodeResult:
    task_id: str
    success: bool
    steps: int
    out_of_bounds: bool
    decode_error: bool = False
    no_memory: bool = False
    log_path: str | None = None


@dataclass
class ReportRow:
    category: str
    task_id: str
    rate: float                   # percent
    trials: int | None = None
    successes: int | None = None


@dataclass
class EvalReport:
    rows: list[ReportRow]
    category_means: dict[str, float]
    overall: float
    metadata: dict = field(default_factory=dict)


def run_episode(policy: PolicyModel, task: TaskSpec, strategy: ExecStrategy,
                max_steps: int = sim.STEP_LIMIT, log_path=None) -> EpisodeResult:
    """Roll one episode: observe, predict tokens, decode, execute."""
    if strategy.horizon != policy.codec.spec.horizon:
        raise ToolkitError(
            f"strategy horizon {strategy.horizon} != policy codec horizon "
            f"{policy.codec.spec.horizon}"
        )
    state = sim.reset(task)
    log: list[dict] = []
    decode_error = False
    no_memory = False
    while state.steps < max_steps:
        if sim.is_success(state, task) or state.out_of_bounds:
            break
        obs = make_observation(state, task)
        try:
            tokens = policy.predict(obs)
        except ToolkitError:
            no_memory = True
            break
        try:
            chunk = decode_tokens(tokens, policy.codec)
        except ToolkitError:
            decode_error = True
            break
        rows = chunk if strategy.mode is ExecMode.EXECUTE_ALL else chunk[:1]
        for action in rows:
            state = sim.step(state, action)
            if log_path is not None:
                log.append({"digest": sim.state_digest(state),
                            "action": [float(a) for a in action],
                            "oob": state.out_of_bounds})
            if (sim.is_success(state, task) or state.out_of_bounds
                    or state.steps >= max_steps):
                break
    success = sim.is_success(state, task)
    if log_path is not None:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
    return EpisodeResult(
        task_id=task.task_id,
        success=success,
        steps=state.steps,
        out_of_bounds=state.out_of_bounds,
        decode_error=decode_error,
        no_memory=no_memory,
        log_path=str(log_path) if log_path is not None else None,
    )


def success_rate(results: list[EpisodeResult]) -> float:
    """Percent of successful trials."""
    if not results:
        raise ValueError("success_rate needs at least one episode")
    return 100.0 * sum(1 for r in results if r.success) / len(results)


def aggregate_report(rows: list[ReportRow], metadata: dict | None = None) -> EvalReport:
    """Unweighted mean rates per category and overall."""
    for row in rows:
        if not 0.0 <= row.rate <= 100.0:
            raise ValueError(f"rate {row.rate} outside [0, 100]")
    categories: dict[str, list[float]] = {}
    for row in rows:
        categories.setdefault(row.category, []).append(row.rate)
    category_means = {c: float(np.mean(v)) for c, v in categories.items()}
    overall = float(np.mean([row.rate for row in rows])) if rows else 0.0
    return EvalReport(rows=list(rows), category_means=category_means,
                      overall=overall, metadata=dict(metadata or {}))


def trial_seed(seed: int, task_id: str, trial: int) -> int:
    """Stable per-trial seed, independent of execution order."""
    blob = f"{seed}|{task_id}|{trial}".encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "big")


def run_suite(policy: PolicyModel, suite: list[TaskSpec], strategy: ExecStrategy,
              trials: int = 10, seed: int = 0, max_steps: int = sim.STEP_LIMIT,
              log_dir=None, metadata: dict | None = None) -> EvalReport:
    """Run every task for the given number of independently seeded trials."""
    if not suite:
        raise ValueError("suite must contain at least one task")
    rows = []
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
    for task in suite:
        results = []
        for trial in range(trials):
            trial_task = replace(task, seed=trial_seed(seed, task.task_id, trial))
            log_path = (log_dir / f"{task.task_id}.trial{trial}.jsonl"
                        if log_dir is not None else None)
            results.append(run_episode(policy, trial_task, strategy,
                                       max_steps=max_steps, log_path=log_path))
        rows.append(ReportRow(
            category=task.category,
            task_id=task.task_id,
            rate=success_rate(results),
            trials=trials,
            successes=sum(1 for r in results if r.success),
        ))
    meta = {"seed": seed, "trials": trials, "strategy": strategy.mode.value}
    meta.update(metadata or {})
    return aggregate_report(rows, metadata=meta)


def render_report(report: EvalReport) -> str:
    """Human-readable table; rates shown to one decimal."""
    lines = []
    header = f"{'category':<12} {'task':<28} {'trials':>6} {'succ':>5} {'rate %':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report.rows:
        trials = "-" if row.trials is None else str(row.trials)
        succ = "-" if row.successes is None else str(row.successes)
        lines.append(f"{row.category:<12} {row.task_id:<28} {trials:>6} "
                     f"{succ:>5} {row.rate:>7.1f}")
    lines.append("-" * len(header))
    for cat, mean in report.category_means.items():
        lines.append(f"{cat:<12} {'(category mean)':<28} {'':>6} {'':>5} {mean:>7.1f}")
    lines.append(f"{'overall':<12} {'(mean of task rates)':<28} {'':>6} {'':>5} "
                 f"{report.overall:>7.1f}")
    return "\n".join(lines)


def save_report(report: EvalReport, path) -> None:
    payload = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "rows": [
            {"category": r.category, "task_id": r.task_id, "rate": r.rate,
             "trials": r.trials, "successes": r.successes}
            for r in report.rows
        ],
        "category_means": report.category_means,
        "overall": report.overall,
        "metadata": report.metadata,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_report(path) -> EvalReport:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != REPORT_FORMAT or payload.get("version") != REPORT_VERSION:
        raise ValueError(f"{path}: not a version-{REPORT_VERSION} {REPORT_FORMAT} file")
    rows = [ReportRow(category=r["category"], task_id=r["task_id"], rate=r["rate"],
                      trials=r.get("trials"), successes=r.get("successes"))
            for r in payload["rows"]]
    return EvalReport(rows=rows, category_means=payload["category_means"],
                      overall=payload["overall"], metadata=payload.get("metadata", {}))


# --- built-in reference aggregates ------------------------------------------
# Known-good published evaluation rows used to cross-check the report
# arithmetic: per-task success rates grouped by category, their category
# means, the overall mean, and a second table of four suite scores.

REFERENCE_TASK_ROWS = (
    ("multi-object", "ref-task-1", 40.0),
    ("multi-object", "ref-task-2", 30.0),
    ("multi-object", "ref-task-3", 30.0),
    ("ood-object", "ref-task-4", 90.0),
    ("ood-object", "ref-task-5", 90.0),
    ("ood-object", "ref-task-6", 70.0),
    ("spatial", "ref-task-7", 60.0),
    ("spatial", "ref-task-8", 20.0),
    ("spatial", "ref-task-9", 80.0),
)
REFERENCE_OVERALL = 56.7
REFERENCE_CATEGORY_MEANS = {
    "multi-object": 33.3,
    "ood-object": 83.3,
    "spatial": 53.3,
}
REFERENCE_SUITE_SCORES = (92.2, 95.4, 89.4, 74.6)
REFERENCE_SUITE_MEAN = 87.9

REFERENCE_TOLERANCE = 0.05


def reference_checks() -> list[tuple[str, float, float, bool]]:
    """Recompute the reference aggregates and compare at +/-0.05.

    Returns (name, computed, expected, ok) per check.
    """
    rows = [ReportRow(category=c, task_id=t, rate=r) for c, t, r in REFERENCE_TASK_ROWS]
    report = aggregate_report(rows)
    checks = [("overall-mean", report.overall, REFERENCE_OVERALL)]
    for cat, expected in REFERENCE_CATEGORY_MEANS.items():
        checks.append((f"category-mean/{cat}", report.category_means[cat], expected))
    checks.append(("suite-mean", float(np.mean(REFERENCE_SUITE_SCORES)),
                   REFERENCE_SUITE_MEAN))
    return [(name, computed, expected,
             abs(computed - expected) <= REFERENCE_TOLERANCE)
            for name, computed, expected in checks]
