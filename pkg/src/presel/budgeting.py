"""Task-importance budgets: task scores, softmax weights, integer quotas.

A task's score is the mean relevance ratio over its reference samples (lower
score = more important task). Weights are a softmax over negated scores with
temperature 1/sqrt(M) by default, and quotas integerize weight * target via
largest remainder with pool clamping.
"""

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

from .apportion import exact_product, fill_by_remainder, hamilton
from .data import DatasetManifest, dumps_canonical
from .errors import InfeasibleBudget, InvalidScore, MalformedRecord
from .relevance import IrsRecord

TAU_AUTO = "auto"

# Score assigned to a task with no usable reference samples when no other
# task has one either.
NEUTRAL_SCORE = 1.0


@dataclass(frozen=True)
class TaskBudget:
    task_id: str
    score_s: float
    weight_w: float
    quota: int
    ref_count: int
    fallback: bool = False


@dataclass(frozen=True)
class TaskScores:
    """Per-task mean relevance plus usable reference counts.

    ``fallback_tasks`` had no usable reference sample and carry the mean of
    the observed task scores instead (neutral importance).
    """

    scores: Mapping[str, float]
    ref_counts: Mapping[str, int]
    fallback_tasks: tuple[str, ...]


def task_scores(irs_records: Sequence[IrsRecord], manifest: DatasetManifest) -> TaskScores:
    """Mean relevance score per task over its reference members.

    A multi-task reference sample contributes to each of its tasks.
    """
    by_task: dict[str, list[float]] = {t: [] for t in manifest.tasks}
    for rec in irs_records:
        idx = manifest.index_of_id.get(rec.sample_id)
        if idx is None:
            raise MalformedRecord(f"IRS record for unknown sample {rec.sample_id!r}")
        sample = manifest.records[idx]
        if not sample.is_reference:
            raise MalformedRecord(f"IRS record for non-reference sample {rec.sample_id!r}")
        if sample.text_only:
            continue
        for t in sample.task_ids:
            by_task[t].append(rec.irs)

    observed = {t: math.fsum(v) / len(v) for t, v in by_task.items() if v}
    if observed:
        fallback_score = math.fsum(observed.values()) / len(observed)
    else:
        fallback_score = NEUTRAL_SCORE
    scores = {}
    ref_counts = {}
    fallback = []
    for t in sorted(manifest.tasks):
        ref_counts[t] = len(by_task[t])
        if t in observed:
            scores[t] = observed[t]
        else:
            scores[t] = fallback_score
            fallback.append(t)
    return TaskScores(scores=scores, ref_counts=ref_counts, fallback_tasks=tuple(fallback))


def resolve_tau(tau: Union[float, str], n_tasks: int) -> float:
    """Numeric temperature; ``auto`` means 1/sqrt(M)."""
    if tau == TAU_AUTO:
        return 1.0 / math.sqrt(n_tasks)
    value = float(tau)
    if not (value > 0.0 and math.isfinite(value)):
        raise InvalidScore(f"temperature must be positive and finite, got {tau!r}")
    return value


def task_weights(scores: Mapping[str, float], tau: Union[float, str] = TAU_AUTO) -> dict[str, float]:
    """Softmax over negated scores; lower score -> larger weight.

    Computed with max-subtraction for stability; weights sum to 1 by
    construction. Iteration is in sorted task order so the result does not
    depend on mapping order.
    """
    if not scores:
        raise InvalidScore("task_weights needs at least one task")
    for t, s in scores.items():
        if not math.isfinite(s):
            raise InvalidScore(f"task {t!r} has non-finite score {s!r}")
    t_value = resolve_tau(tau, len(scores))
    tasks = sorted(scores)
    logits = [-scores[t] / t_value for t in tasks]
    peak = max(logits)
    exps = [math.exp(v - peak) for v in logits]
    total = math.fsum(exps)
    return {t: e / total for t, e in zip(tasks, exps)}


def task_quotas(
    weights: Mapping[str, float],
    target_total: int,
    pool_sizes: Mapping[str, int],
) -> dict[str, int]:
    """Integer per-task quotas summing exactly to min(target, total pool).

    Largest-remainder integerization of weight * target (exact rational
    arithmetic; remainder ties break lexicographically on task_id), then any
    quota above its pool is clamped and the excess re-distributed among the
    unclamped tasks by the same remainder priority.
    """
    if target_total < 0:
        raise InvalidScore("target_total must be non-negative")
    tasks = sorted(weights)
    caps = [int(pool_sizes[t]) for t in tasks]
    total_pool = sum(caps)
    if target_total > total_pool:
        raise InfeasibleBudget(
            f"target {target_total} exceeds selectable pool {total_pool}",
            max_feasible=total_pool,
        )
    shares = [exact_product(weights[t], target_total) for t in tasks]
    fracs = [s - math.floor(s) for s in shares]
    alloc = hamilton(shares, target_total)

    frozen: set[int] = set()
    while True:
        excess = 0
        for i, a in enumerate(alloc):
            if a > caps[i]:
                excess += a - caps[i]
                alloc[i] = caps[i]
                frozen.add(i)
        if excess == 0:
            break
        alloc = fill_by_remainder(alloc, fracs, caps, excess, blocked=frozenset(frozen))
    return {t: a for t, a in zip(tasks, alloc)}


def build_budgets(
    scores: TaskScores,
    weights: Mapping[str, float],
    quotas: Mapping[str, int],
) -> list[TaskBudget]:
    return [
        TaskBudget(
            task_id=t,
            score_s=scores.scores[t],
            weight_w=weights[t],
            quota=quotas[t],
            ref_count=scores.ref_counts[t],
            fallback=t in scores.fallback_tasks,
        )
        for t in sorted(weights)
    ]


def save_budget_report(budgets: Iterable[TaskBudget], path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical({"config": header or {}}) + "\n")
        for b in budgets:
            fh.write(
                dumps_canonical(
                    {
                        "task_id": b.task_id,
                        "score_s": b.score_s,
                        "weight_w": b.weight_w,
                        "quota": b.quota,
                        "ref_count": b.ref_count,
                        "fallback": b.fallback,
                    }
                )
                + "\n"
            )


def load_budget_report(path) -> tuple[dict, list[TaskBudget]]:
    header: dict | None = None
    budgets: list[TaskBudget] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"line {line_no}: invalid JSON ({exc})") from exc
            if header is None:
                if "config" not in obj:
                    raise MalformedRecord("budget report must start with a config line")
                header = obj["config"]
                continue
            try:
                budgets.append(
                    TaskBudget(
                        task_id=obj["task_id"],
                        score_s=float(obj["score_s"]),
                        weight_w=float(obj["weight_w"]),
                        quota=int(obj["quota"]),
                        ref_count=int(obj["ref_count"]),
                        fallback=bool(obj["fallback"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(f"line {line_no}: invalid budget record ({exc})") from exc
    if header is None:
        raise MalformedRecord("budget report is empty")
    return header, budgets
