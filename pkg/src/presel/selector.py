"""Selection assembly: per-cluster budgets, intra-cluster ranking, dedup.

The pipeline is: task weights -> integer task quotas -> per-task k-means ->
per-cluster quotas (weight * cluster share of the task pool, floored, with
largest-remainder redistribution) -> top neighbor-centrality picks per
cluster. Reference samples are always included and never re-selected.

Tasks are assembled in descending-weight order (ties lexicographic); a sample
already selected under an earlier task is removed from later candidate pools,
and any resulting shortfall is filled from next-best candidates at the end.
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from .apportion import exact_product, fill_by_remainder, round_half_up
from .budgeting import TaskScores, resolve_tau, task_quotas, task_scores, task_weights
from .data import (
    PROVENANCE_REFERENCE,
    PROVENANCE_SELECTED,
    DatasetManifest,
    FeatureMatrix,
    LossRecord,
    SelectionEntry,
    SelectionManifest,
    build_selection,
    validate_inputs,
    with_reference_rows,
)
from .errors import InvalidConfig, RefAlreadyAssigned
from .geometry import ClusterAssignment, default_cluster_count, kmeans, nc_scores
from .relevance import IrsResult, compute_irs_records
from .seeding import STAGE_BASELINE_RANDOM, STAGE_KMEANS, STAGE_REF_SPLIT, derive_rng

STRATEGIES = ("task_importance", "uniform", "size_balanced", "random")
THREADS_ENV = "PRESEL_THREADS"


@dataclass(frozen=True)
class SelectionConfig:
    """Resolved knobs of one selection run."""

    ratio: float = 0.15
    ref_ratio: float = 0.05
    seed: int = 0
    k: int = 5
    tau: Union[float, str] = "auto"
    clusters_per_100: float = 1.0
    normalize_features: bool = False

    def __post_init__(self):
        if not (0.0 < self.ratio <= 1.0):
            raise InvalidConfig(f"ratio must be in (0, 1], got {self.ratio}")
        if not (0.0 <= self.ref_ratio < self.ratio):
            raise InvalidConfig(f"ref_ratio must be in [0, ratio), got {self.ref_ratio}")
        if self.k < 1:
            raise InvalidConfig(f"k must be >= 1, got {self.k}")
        if self.tau != "auto":
            t = float(self.tau)
            if not (t > 0.0 and math.isfinite(t)):
                raise InvalidConfig(f"tau must be positive or 'auto', got {self.tau}")
        if not (float(self.clusters_per_100) > 0.0):
            raise InvalidConfig(f"clusters_per_100 must be positive, got {self.clusters_per_100}")


@dataclass(frozen=True)
class BudgetPlan:
    """Precomputed budgets (from a budget report) injected into selection."""

    weights: dict[str, float]
    quotas: dict[str, int]
    engine_target: int
    scores: Optional[dict[str, float]] = None
    ref_counts: Optional[dict[str, int]] = None
    fallback_tasks: tuple[str, ...] = ()


@dataclass(frozen=True)
class ClusterQuota:
    task_id: str
    cluster_id: int
    n_c: int


def cluster_share_floor(weight_w: float, cluster_size: int, pool_size: int, target_total: int) -> int:
    """Raw per-cluster draw: floor(weight * size / pool * target), exact."""
    return math.floor(exact_product(weight_w, cluster_size) / pool_size * target_total)


def cluster_quotas(
    weight_w: float,
    cluster_sizes: Sequence[int],
    pool_size: int,
    target_total: int,
    task_quota: int,
    task_id: str = "",
) -> list[ClusterQuota]:
    """Integer per-cluster draws for one task.

    Raw value per cluster is floor(weight * size / pool * target), evaluated
    in exact rational arithmetic. The gap to ``task_quota`` is then closed one
    unit at a time by largest fractional remainder (ties to the lower cluster
    id), skipping full clusters; raw values above a cluster's size are
    clamped the same way.
    """
    sizes = [int(s) for s in cluster_sizes]
    assert sum(sizes) == pool_size, "cluster sizes must sum to pool_size"
    assert task_quota <= pool_size, "task quota exceeds pool (budgeting should have clamped)"
    exact = [exact_product(weight_w, s) / pool_size * target_total for s in sizes]
    raw = [math.floor(e) for e in exact]
    fracs = [e - r for e, r in zip(exact, raw)]
    alloc = [min(r, s) for r, s in zip(raw, sizes)]
    alloc = fill_by_remainder(alloc, fracs, sizes, task_quota - sum(alloc))
    return [ClusterQuota(task_id=task_id, cluster_id=c, n_c=a) for c, a in enumerate(alloc)]


def _ranked(members: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Positions ordered by descending score, ties to the lower member index."""
    return np.lexsort((members, -scores))


def select_cluster(members: Sequence[int], scores: np.ndarray, n_c: int) -> list[int]:
    """The n_c highest-scoring members, descending score, ties to lower index."""
    members = np.asarray(members, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    assert n_c <= len(members), "n_c exceeds cluster membership"
    order = _ranked(members, scores)
    return [int(members[i]) for i in order[:n_c]]


def ref_split(manifest: DatasetManifest, ref_ratio: float, seed: int) -> DatasetManifest:
    """Flag a uniform random reference subset of the image samples."""
    if any(rec.is_reference for rec in manifest.records):
        raise RefAlreadyAssigned("manifest already carries reference flags")
    if not (0.0 < ref_ratio < 1.0):
        raise InvalidConfig(f"ref_ratio must be in (0, 1), got {ref_ratio}")
    n_ref = round_half_up(Fraction(ref_ratio) * manifest.image_count)
    rng = derive_rng(seed, STAGE_REF_SPLIT)
    rows = rng.permutation(manifest.image_count)[:n_ref]
    return with_reference_rows(manifest, (int(r) for r in rows))


def resolve_threads(threads: Optional[int] = None) -> int:
    """Worker count: explicit argument, else PRESEL_THREADS, else cpu count."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "0").strip()
        try:
            threads = int(raw)
        except ValueError:
            raise InvalidConfig(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if threads < 0:
        raise InvalidConfig(f"thread count must be >= 0, got {threads}")
    return threads or (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Run report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunReport:
    config: dict
    validation: dict
    exclusions: tuple[dict, ...]
    tasks: tuple[dict, ...]
    clusters: tuple[dict, ...]
    timings: dict
    summary: dict

    def lines(self) -> list[dict]:
        out = [{"type": "config", **self.config}]
        out.append({"type": "validation", **self.validation})
        out.extend({"type": "irs_exclusion", **e} for e in self.exclusions)
        out.extend({"type": "task", **t} for t in self.tasks)
        out.extend({"type": "cluster", **c} for c in self.clusters)
        out.append({"type": "timing", **self.timings})
        out.append({"type": "summary", **self.summary})
        return out


@dataclass(frozen=True)
class SelectionResult:
    selection: SelectionManifest
    report: RunReport
    cluster_dump: Optional[tuple[dict, ...]] = None


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def _pool_rows(manifest: DatasetManifest, task: str) -> np.ndarray:
    """Selectable feature rows of a task: image samples that are not reference."""
    rows = [
        manifest.row_of_record[i]
        for i in manifest.tasks[task]
        if manifest.row_of_record[i] >= 0 and not manifest.records[i].is_reference
    ]
    return np.asarray(rows, dtype=np.int64)


def _task_sizes(manifest: DatasetManifest) -> dict[str, int]:
    """Image-sample count per task (reference members included)."""
    return {
        t: sum(1 for i in members if manifest.row_of_record[i] >= 0)
        for t, members in manifest.tasks.items()
    }


def _strategy_weights(
    strategy: str,
    manifest: DatasetManifest,
    tscores: Optional[TaskScores],
    tau: Union[float, str],
) -> dict[str, float]:
    tasks = manifest.task_ids_sorted()
    if strategy == "task_importance":
        return task_weights(tscores.scores, tau)
    if strategy == "uniform":
        return {t: 1.0 / len(tasks) for t in tasks}
    # size_balanced and random both draw proportionally to task size
    sizes = _task_sizes(manifest)
    total = sum(sizes.values())
    return {t: sizes[t] / total for t in tasks}


def _cluster_task(
    task: str,
    rows: np.ndarray,
    features: FeatureMatrix,
    config: SelectionConfig,
    task_idx: int,
) -> tuple[ClusterAssignment, np.ndarray]:
    """k-means + per-cluster NC scores for one task pool."""
    sub = np.ascontiguousarray(features.rows[rows], dtype=np.float32)
    if config.normalize_features:
        sub = sub / np.linalg.norm(sub, axis=1, keepdims=True).astype(np.float32)
    n_clusters = min(default_cluster_count(len(rows), config.clusters_per_100), len(rows))
    rng = derive_rng(config.seed, STAGE_KMEANS, task_idx)
    assignment = kmeans(sub, n_clusters, rng, task_id=task)
    scores = np.empty(len(rows), dtype=np.float64)
    for c in range(n_clusters):
        pos = np.flatnonzero(assignment.labels == c)
        scores[pos] = nc_scores(sub[pos], config.k)
    return assignment, scores


def _pipeline(
    manifest: DatasetManifest,
    features: FeatureMatrix,
    losses: Optional[Sequence[LossRecord]],
    config: SelectionConfig,
    strategy: str,
    threads: Optional[int],
    dump_clusters: bool = False,
    plan: Optional[BudgetPlan] = None,
) -> SelectionResult:
    if strategy not in STRATEGIES:
        raise InvalidConfig(f"unknown strategy {strategy!r}")
    t_start = time.perf_counter()
    timings: dict[str, float] = {}
    workers = resolve_threads(threads)

    validation = validate_inputs(manifest, features, losses)
    timings["validate"] = time.perf_counter() - t_start

    tasks_sorted = manifest.task_ids_sorted()
    task_index = {t: i for i, t in enumerate(tasks_sorted)}
    n_tasks = len(tasks_sorted)

    ref_rows = [
        manifest.row_of_record[i]
        for i, rec in enumerate(manifest.records)
        if rec.is_reference and not rec.text_only
    ]
    image_count = manifest.image_count
    total_budget = min(round_half_up(Fraction(config.ratio) * image_count), image_count)
    engine_target = max(0, total_budget - len(ref_rows))

    # budgets
    t0 = time.perf_counter()
    irs_result: Optional[IrsResult] = None
    tscores: Optional[TaskScores] = None
    pools = {t: _pool_rows(manifest, t) for t in tasks_sorted}
    pool_sizes = {t: len(pools[t]) for t in tasks_sorted}
    if plan is not None:
        if sorted(plan.weights) != tasks_sorted:
            raise InvalidConfig("budget plan tasks do not match the manifest")
        weights = dict(plan.weights)
        quotas = dict(plan.quotas)
        engine_target = plan.engine_target
        total_budget = engine_target + len(ref_rows)
        if plan.scores is not None:
            tscores = TaskScores(
                scores=plan.scores,
                ref_counts=plan.ref_counts or {t: 0 for t in tasks_sorted},
                fallback_tasks=plan.fallback_tasks,
            )
        for t in tasks_sorted:
            if quotas[t] > pool_sizes[t]:
                raise InvalidConfig(
                    f"budget plan quota {quotas[t]} for task {t!r} exceeds its pool {pool_sizes[t]}"
                )
    else:
        if strategy == "task_importance":
            irs_result = compute_irs_records(losses or [])
            tscores = task_scores(irs_result.records, manifest)
        weights = _strategy_weights(strategy, manifest, tscores, config.tau)
        quotas = task_quotas(weights, engine_target, pool_sizes)
    tau_resolved = resolve_tau(config.tau, n_tasks)
    timings["budget"] = time.perf_counter() - t0

    # per-task clustering + NC scoring (parallel; deterministic per task)
    t0 = time.perf_counter()
    cluster_tasks = [
        t for t in tasks_sorted if strategy != "random" and quotas[t] > 0 and pool_sizes[t] > 0
    ]
    results: dict[str, tuple[ClusterAssignment, np.ndarray]] = {}
    if cluster_tasks:
        def _one(t: str):
            return t, _cluster_task(t, pools[t], features, config, task_index[t])

        if workers > 1 and len(cluster_tasks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                for t, res in ex.map(_one, cluster_tasks):
                    results[t] = res
        else:
            for t in cluster_tasks:
                results[t] = _one(t)[1]
    timings["cluster"] = time.perf_counter() - t0

    # assembly in descending-weight order; earlier tasks see fresher pools
    t0 = time.perf_counter()
    processing_order = sorted(tasks_sorted, key=lambda t: (-weights[t], t))
    selected = np.zeros(features.n, dtype=bool)
    entries_sel: list[SelectionEntry] = []
    task_taken = {t: 0 for t in tasks_sorted}
    cluster_lines: list[dict] = []
    leftovers: dict[str, list[tuple[int, Optional[int], Optional[float]]]] = {}
    shortfall = 0

    def _take(task: str, row: int, cluster_id: Optional[int], score: Optional[float]) -> None:
        selected[row] = True
        task_taken[task] += 1
        rec = manifest.record_of_row(row)
        entries_sel.append(
            SelectionEntry(
                sample_id=rec.sample_id,
                task_id=task,
                cluster_id=cluster_id,
                nc_score=score,
                provenance=PROVENANCE_SELECTED,
            )
        )

    for t in processing_order:
        quota = quotas[t]
        if quota <= 0 or pool_sizes[t] == 0:
            continue
        if strategy == "random":
            rng = derive_rng(config.seed, STAGE_BASELINE_RANDOM, task_index[t])
            perm = pools[t][rng.permutation(pool_sizes[t])]
            avail = [int(r) for r in perm if not selected[r]]
            for row in avail[:quota]:
                _take(t, row, None, None)
            leftovers[t] = [(row, None, None) for row in avail[quota:]]
            shortfall += quota - min(quota, len(avail))
            continue

        assignment, scores = results[t]
        members_av: list[np.ndarray] = []
        scores_av: list[np.ndarray] = []
        sizes_orig: list[int] = []
        for c in range(assignment.n_clusters):
            pos = np.flatnonzero(assignment.labels == c)
            rows_c = pools[t][pos]
            keep = ~selected[rows_c]
            members_av.append(rows_c[keep])
            scores_av.append(scores[pos][keep])
            sizes_orig.append(len(pos))
        eff_sizes = [len(m) for m in members_av]
        eff_pool = sum(eff_sizes)
        if eff_pool == 0:
            shortfall += quota
            continue
        eff_quota = min(quota, eff_pool)
        cq = cluster_quotas(weights[t], eff_sizes, eff_pool, engine_target, eff_quota, task_id=t)
        rest: list[tuple[int, Optional[int], Optional[float]]] = []
        for c, q in enumerate(cq):
            order = _ranked(members_av[c], scores_av[c])
            for i in order[: q.n_c]:
                _take(t, int(members_av[c][i]), c, float(scores_av[c][i]))
            rest.extend(
                (int(members_av[c][i]), c, float(scores_av[c][i])) for i in order[q.n_c :]
            )
            cluster_lines.append(
                {
                    "task_id": t,
                    "cluster_id": c,
                    "size": sizes_orig[c],
                    "available": eff_sizes[c],
                    "n_c": q.n_c,
                }
            )
        rest.sort(key=lambda item: (-item[2], item[0]))
        leftovers[t] = rest
        shortfall += quota - eff_quota

    # overlap dedup can starve a task's pool; fill from next-best candidates,
    # most important tasks first, so the overall total stays exact
    if shortfall > 0:
        for t in processing_order:
            if shortfall == 0:
                break
            for row, cluster_id, score in leftovers.get(t, []):
                if shortfall == 0:
                    break
                if not selected[row]:
                    _take(t, row, cluster_id, score)
                    shortfall -= 1
    timings["assemble"] = time.perf_counter() - t0

    # output entries: references in manifest order, then engine picks
    entries: list[SelectionEntry] = []
    for i, rec in enumerate(manifest.records):
        if rec.is_reference and not rec.text_only:
            entries.append(
                SelectionEntry(
                    sample_id=rec.sample_id,
                    task_id=rec.task_ids[0],
                    cluster_id=None,
                    nc_score=None,
                    provenance=PROVENANCE_REFERENCE,
                )
            )
    entries.extend(entries_sel)

    config_echo = {
        "strategy": strategy,
        "ratio": config.ratio,
        "ref_ratio": config.ref_ratio,
        "seed": config.seed,
        "k": config.k,
        "tau": config.tau,
        "tau_resolved": tau_resolved,
        "clusters_per_100": config.clusters_per_100,
        "normalize_features": config.normalize_features,
        "image_count": image_count,
        "total_budget": total_budget,
        "ref_count": len(ref_rows),
        "engine_target": engine_target,
    }
    selection = build_selection(entries, config_echo)

    ref_counts_by_task = tscores.ref_counts if tscores else {t: 0 for t in tasks_sorted}
    fallback_tasks = set(tscores.fallback_tasks) if tscores else set()
    task_lines = []
    for t in tasks_sorted:
        clustered = t in results
        task_lines.append(
            {
                "task_id": t,
                "score_s": tscores.scores[t] if tscores else None,
                "weight_w": weights[t],
                "quota": quotas[t],
                "ref_count": ref_counts_by_task.get(t, 0),
                "fallback": t in fallback_tasks,
                "pool_size": pool_sizes[t],
                "n_clusters": results[t][0].n_clusters
                if clustered
                else (
                    min(default_cluster_count(pool_sizes[t], config.clusters_per_100), pool_sizes[t])
                    if pool_sizes[t] > 0 and strategy != "random"
                    else None
                ),
                "selected": task_taken[t],
                "clustered": clustered,
            }
        )

    timings["total"] = time.perf_counter() - t_start
    summary = {
        "image_count": image_count,
        "total_budget": total_budget,
        "ref_count": len(ref_rows),
        "engine_target": engine_target,
        "engine_selected": len(entries_sel),
        "total_selected": len(entries),
        "unfilled": engine_target - len(entries_sel),
        "backend": K.BACKEND,
        "threads": workers,
    }
    report = RunReport(
        config=config_echo,
        validation=validation.as_dict(),
        exclusions=tuple(
            {
                "sample_id": e.sample_id,
                "nll_with_q": e.nll_with_q,
                "nll_without_q": e.nll_without_q,
                "reason": e.reason,
            }
            for e in (irs_result.excluded if irs_result else ())
        ),
        tasks=tuple(task_lines),
        clusters=tuple(cluster_lines),
        timings=timings,
        summary=summary,
    )

    dump = None
    if dump_clusters:
        dump = tuple(
            {
                "task_id": t,
                "n_clusters": results[t][0].n_clusters,
                "sizes": [int(s) for s in results[t][0].sizes],
                "centroid_norms": [float(v) for v in np.linalg.norm(results[t][0].centroids, axis=1)],
                "inertia": results[t][0].inertia,
                "labels": [int(v) for v in results[t][0].labels],
            }
            for t in tasks_sorted
            if t in results
        )
    return SelectionResult(selection=selection, report=report, cluster_dump=dump)


def run_selection(
    manifest: DatasetManifest,
    features: FeatureMatrix,
    losses: Optional[Sequence[LossRecord]],
    config: SelectionConfig,
    threads: Optional[int] = None,
    dump_clusters: bool = False,
) -> SelectionResult:
    """Full task-importance pipeline over validated inputs."""
    return _pipeline(manifest, features, losses, config, "task_importance", threads, dump_clusters)


def baseline_select(
    manifest: DatasetManifest,
    features: FeatureMatrix,
    config: SelectionConfig,
    strategy: str,
    losses: Optional[Sequence[LossRecord]] = None,
    threads: Optional[int] = None,
    dump_clusters: bool = False,
) -> SelectionResult:
    """Comparison selectors: same assembly, different task-budget rule."""
    return _pipeline(manifest, features, losses, config, strategy, threads, dump_clusters)


def select_with_plan(
    manifest: DatasetManifest,
    features: FeatureMatrix,
    config: SelectionConfig,
    plan: BudgetPlan,
    threads: Optional[int] = None,
    dump_clusters: bool = False,
) -> SelectionResult:
    """Clustering + NC selection driven by a precomputed budget report."""
    return _pipeline(
        manifest, features, None, config, "task_importance", threads, dump_clusters, plan=plan
    )
