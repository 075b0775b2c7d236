"""Command-line entry point.

Subcommands: run (full pipeline), score / budget / select (single stages over
prior-stage artifacts), baseline (comparison selectors), synth (synthetic
dataset generation), validate (format checks), report (pretty-print a run
report).

Exit codes: 0 success, 1 data error (one machine-readable JSON line on
stderr), 2 usage error (bad flag, missing file, stage-order violation).
Config precedence: flags > config file > defaults. PRESEL_THREADS caps the
worker count (0 or unset = auto).
"""

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from .apportion import round_half_up
from .budgeting import (
    build_budgets,
    load_budget_report,
    resolve_tau,
    save_budget_report,
    task_quotas,
    task_scores,
    task_weights,
)
from .data import (
    dumps_canonical,
    load_features,
    load_losses,
    load_manifest,
    save_selection,
    validate_inputs,
)
from .errors import InvalidConfig, PreselError, SynthSpecError
from .relevance import compute_irs_records, load_irs_report, save_irs_report
from .reporting import format_run_report, load_run_report, save_run_report
from .selector import (
    STRATEGIES,
    BudgetPlan,
    SelectionConfig,
    baseline_select,
    run_selection,
    select_with_plan,
)
from .synth import SynthSpec, generate

_CONFIG_KEYS = {
    "ratio": float,
    "ref_ratio": float,
    "seed": int,
    "k": int,
    "tau": str,
    "clusters_per_100": float,
    "normalize_features": bool,
}


class UsageError(PreselError):
    """Bad invocation: missing file, malformed flag value, stage-order issue."""


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _parse_config_file(path) -> dict:
    """key = value lines; '#' starts a comment."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"config line {line_no}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise UsageError(f"config line {line_no}: unknown key {key!r}")
            caster = _CONFIG_KEYS[key]
            try:
                if caster is bool:
                    if value.lower() not in ("true", "false", "1", "0"):
                        raise ValueError(value)
                    values[key] = value.lower() in ("true", "1")
                else:
                    values[key] = caster(value)
            except ValueError:
                raise UsageError(f"config line {line_no}: bad value {value!r} for {key}")
    return values


def _parse_tau(text):
    if text is None or text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"tau must be a positive number or 'auto', got {text!r}")


def _resolve_config(args) -> SelectionConfig:
    file_values = _parse_config_file(_require_file(args.config, "config")) if args.config else {}
    merged = {}
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in file_values:
            merged[key] = file_values[key]
    if "tau" in merged:
        merged["tau"] = _parse_tau(merged["tau"])
    try:
        return SelectionConfig(**merged)
    except InvalidConfig as exc:
        raise UsageError(str(exc))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file (flags win)")
    p.add_argument("--ratio", type=float, help="selection ratio of |D| (default 0.15)")
    p.add_argument("--ref-ratio", dest="ref_ratio", type=float, help="reference fraction (default 0.05)")
    p.add_argument("--seed", type=int, help="root 64-bit seed (default 0)")
    p.add_argument("--k", type=int, help="neighbors for centrality (default 5)")
    p.add_argument("--tau", help="softmax temperature or 'auto' = 1/sqrt(M)")
    p.add_argument(
        "--clusters-per-100", dest="clusters_per_100", type=float, help="clusters per 100 pool samples (default 1)"
    )
    p.add_argument(
        "--normalize-features",
        dest="normalize_features",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="L2-normalize features before clustering (default off)",
    )


def _add_io_flags(p: argparse.ArgumentParser, losses_required: bool) -> None:
    p.add_argument("--manifest", required=True, help="dataset manifest (JSON lines)")
    p.add_argument("--features", required=True, help="binary feature file")
    p.add_argument("--losses", required=losses_required, help="reference loss records (JSON lines)")
    p.add_argument("--out", required=True, help="selection manifest output path")
    p.add_argument("--report", help="run report path (default: <out>.report.jsonl)")
    p.add_argument("--irs-out", dest="irs_out", help="also write the IRS stage report here")
    p.add_argument("--budget-out", dest="budget_out", help="also write the budget stage report here")
    p.add_argument("--cluster-dump", dest="cluster_dump", help="write per-task cluster debug dump here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="presel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline: losses -> budgets -> clustering -> selection")
    _add_io_flags(p, losses_required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="loss records -> relevance-score report")
    p.add_argument("--losses", required=True)
    p.add_argument("--out", required=True, help="IRS report output path")
    p.add_argument("--exclusions", help="degenerate-sample report (default: <out>.exclusions.jsonl)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("budget", help="IRS report + manifest -> task budget report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--irs", required=True, help="IRS report from `score`")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("select", help="budget report + features -> selection manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--budget", required=True, help="budget report from `budget`")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="run report path (default: <out>.report.jsonl)")
    p.add_argument("--cluster-dump", dest="cluster_dump")
    _add_config_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("baseline", help="comparison selectors over the same machinery")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    _add_io_flags(p, losses_required=False)
    _add_config_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synth", help="generate a synthetic dataset triple + ground truth")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--samples-per-task", dest="samples_per_task", required=True,
                   help="comma-separated counts, or one count for all tasks")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--blobs-per-task", dest="blobs_per_task", type=int, default=3)
    p.add_argument("--blob-stddev", dest="blob_stddev", type=float, default=0.05)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--planted-irs", dest="planted_irs", help="comma-separated per-task relevance means")
    p.add_argument("--ref-ratio", dest="ref_ratio", type=float, default=0.05)
    p.add_argument("--irs-noise", dest="irs_noise", type=float, default=0.1)
    p.add_argument("--response-tokens", dest="response_tokens", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check input files and cross-references")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--losses")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="pretty-print a run report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    return parser


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _report_path(args) -> Path:
    return Path(args.report) if args.report else Path(str(args.out) + ".report.jsonl")


def _write_run_outputs(args, result) -> None:
    save_selection(result.selection, args.out)
    save_run_report(result.report, _report_path(args))
    if getattr(args, "cluster_dump", None) and result.cluster_dump is not None:
        with open(args.cluster_dump, "w", encoding="utf-8") as fh:
            for line in result.cluster_dump:
                fh.write(dumps_canonical(line) + "\n")
    summary = result.report.summary
    print(
        f"selected {summary['total_selected']} of {summary['image_count']} "
        f"({summary['ref_count']} reference + {summary['engine_selected']} engine) -> {args.out}"
    )


def cmd_run(args) -> int:
    config = _resolve_config(args)
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    features = load_features(_require_file(args.features, "features"), manifest)
    losses = load_losses(_require_file(args.losses, "losses"))
    result = run_selection(
        manifest, features, losses, config, dump_clusters=bool(args.cluster_dump)
    )
    if args.irs_out:
        save_irs_report(compute_irs_records(losses), args.irs_out)
    if args.budget_out:
        _save_budget_from_report(result.report, args.budget_out)
    _write_run_outputs(args, result)
    return 0


def _save_budget_from_report(report, path) -> None:
    from .budgeting import TaskBudget

    budgets = [
        TaskBudget(
            task_id=t["task_id"],
            score_s=t["score_s"] if t["score_s"] is not None else float("nan"),
            weight_w=t["weight_w"],
            quota=t["quota"],
            ref_count=t["ref_count"],
            fallback=t["fallback"],
        )
        for t in report.tasks
    ]
    save_budget_report(budgets, path, header=report.config)


def cmd_score(args) -> int:
    losses = load_losses(_require_file(args.losses, "losses"))
    result = compute_irs_records(losses)
    exclusions = args.exclusions or str(args.out) + ".exclusions.jsonl"
    save_irs_report(result, args.out, exclusions_path=exclusions)
    print(f"scored {len(result.records)} samples, excluded {len(result.excluded)} -> {args.out}")
    return 0


def cmd_budget(args) -> int:
    config = _resolve_config(args)
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    irs_records = load_irs_report(_require_file(args.irs, "IRS report"))
    scores = task_scores(irs_records, manifest)
    weights = task_weights(scores.scores, config.tau)

    ref_count = sum(1 for r in manifest.records if r.is_reference and not r.text_only)
    total_budget = min(round_half_up(Fraction(config.ratio) * manifest.image_count), manifest.image_count)
    engine_target = max(0, total_budget - ref_count)
    pool_sizes = {
        t: sum(
            1
            for i in manifest.tasks[t]
            if manifest.row_of_record[i] >= 0 and not manifest.records[i].is_reference
        )
        for t in manifest.tasks
    }
    quotas = task_quotas(weights, engine_target, pool_sizes)
    budgets = build_budgets(scores, weights, quotas)
    header = {
        "ratio": config.ratio,
        "tau": config.tau,
        "tau_resolved": resolve_tau(config.tau, len(manifest.tasks)),
        "image_count": manifest.image_count,
        "total_budget": total_budget,
        "ref_count": ref_count,
        "engine_target": engine_target,
    }
    save_budget_report(budgets, args.out, header=header)
    print(f"budgeted {engine_target} engine picks across {len(budgets)} tasks -> {args.out}")
    return 0


def cmd_select(args) -> int:
    config = _resolve_config(args)
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    features = load_features(_require_file(args.features, "features"), manifest)
    header, budgets = load_budget_report(_require_file(args.budget, "budget report"))
    plan = BudgetPlan(
        weights={b.task_id: b.weight_w for b in budgets},
        quotas={b.task_id: b.quota for b in budgets},
        engine_target=int(header.get("engine_target", sum(b.quota for b in budgets))),
        scores={b.task_id: b.score_s for b in budgets},
        ref_counts={b.task_id: b.ref_count for b in budgets},
        fallback_tasks=tuple(b.task_id for b in budgets if b.fallback),
    )
    result = select_with_plan(
        manifest, features, config, plan, dump_clusters=bool(args.cluster_dump)
    )
    _write_run_outputs(args, result)
    return 0


def cmd_baseline(args) -> int:
    config = _resolve_config(args)
    if args.strategy == "task_importance" and not args.losses:
        raise UsageError("strategy task_importance needs --losses")
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    features = load_features(_require_file(args.features, "features"), manifest)
    losses = load_losses(_require_file(args.losses, "losses")) if args.losses else None
    result = baseline_select(
        manifest,
        features,
        config,
        args.strategy,
        losses=losses,
        dump_clusters=bool(args.cluster_dump),
    )
    if args.irs_out and losses:
        save_irs_report(compute_irs_records(losses), args.irs_out)
    if args.budget_out:
        _save_budget_from_report(result.report, args.budget_out)
    _write_run_outputs(args, result)
    return 0


def _parse_int_list(text: str, n: int, what: str) -> tuple[int, ...]:
    try:
        parts = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated integers, got {text!r}")
    if len(parts) == 1:
        parts = parts * n
    return tuple(parts)


def cmd_synth(args) -> int:
    planted: tuple[float, ...] = ()
    if args.planted_irs:
        try:
            planted = tuple(float(v) for v in args.planted_irs.split(",") if v.strip())
        except ValueError:
            raise UsageError(f"--planted-irs must be comma-separated numbers, got {args.planted_irs!r}")
    spec = SynthSpec(
        n_tasks=args.tasks,
        samples_per_task=_parse_int_list(args.samples_per_task, args.tasks, "--samples-per-task"),
        d=args.dim,
        blobs_per_task=args.blobs_per_task,
        blob_stddev=args.blob_stddev,
        overlap_fraction=args.overlap,
        planted_task_irs=planted,
        seed=args.seed,
        ref_ratio=args.ref_ratio,
        irs_noise=args.irs_noise,
        response_tokens=args.response_tokens,
    )
    truth = generate(spec, args.out_dir)
    print(
        f"wrote {truth['n_samples']} samples across {truth['n_tasks']} tasks "
        f"({truth['ref_count']} reference) -> {args.out_dir}"
    )
    return 0


def cmd_validate(args) -> int:
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    features = load_features(_require_file(args.features, "features"), manifest)
    losses = load_losses(_require_file(args.losses, "losses")) if args.losses else None
    report = validate_inputs(manifest, features, losses)
    print(dumps_canonical({"clean": report.clean, **report.as_dict()}))
    return 0


def cmd_report(args) -> int:
    groups = load_run_report(_require_file(args.report, "report"))
    print(format_run_report(groups))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, InvalidConfig, SynthSpecError) as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    except PreselError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
