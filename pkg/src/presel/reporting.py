"""Run-report serialization and pretty-printing.

A run report is JSON-lines, each line tagged with a ``type``: config,
validation, irs_exclusion, task, cluster, timing, summary. The selection
manifest stays byte-stable across thread counts; volatile facts (timings,
worker count, kernel backend) live only here.
"""

import json

from .data import dumps_canonical
from .errors import MalformedRecord
from .selector import RunReport


def save_run_report(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in report.lines():
            fh.write(dumps_canonical(line) + "\n")


def load_run_report(path) -> dict[str, list[dict]]:
    """Group report lines by their type tag."""
    groups: dict[str, list[dict]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"line {line_no}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict) or "type" not in obj:
                raise MalformedRecord(f"line {line_no}: report lines need a type tag")
            groups.setdefault(obj["type"], []).append(obj)
    if "config" not in groups or "summary" not in groups:
        raise MalformedRecord("run report must contain config and summary lines")
    return groups


def _fmt(value, width: int = 0, prec: int = 4) -> str:
    if value is None:
        text = "-"
    elif isinstance(value, float):
        text = f"{value:.{prec}f}"
    else:
        text = str(value)
    return text.rjust(width) if width else text


def format_run_report(groups: dict[str, list[dict]]) -> str:
    """Human-readable rendering of a loaded run report."""
    out: list[str] = []
    cfg = dict(groups["config"][0])
    cfg.pop("type", None)
    out.append("configuration")
    for key in sorted(cfg):
        out.append(f"  {key} = {cfg[key]}")

    validation = groups.get("validation", [{}])[0]
    issues = {k: v for k, v in validation.items() if k != "type" and v}
    out.append("validation: clean" if not issues else f"validation: {issues}")

    exclusions = groups.get("irs_exclusion", [])
    if exclusions:
        out.append(f"irs exclusions: {len(exclusions)} sample(s) dropped from task averages")

    tasks = groups.get("task", [])
    if tasks:
        out.append("tasks")
        header = f"  {'task_id':<16}{'score':>10}{'weight':>10}{'quota':>8}{'refs':>6}{'pool':>8}{'C':>5}{'sel':>6}  flags"
        out.append(header)
        for t in tasks:
            flags = []
            if t.get("fallback"):
                flags.append("fallback")
            if not t.get("clustered"):
                flags.append("unclustered")
            out.append(
                "  "
                + f"{t['task_id']:<16}"
                + _fmt(t.get("score_s"), 10)
                + _fmt(t.get("weight_w"), 10)
                + _fmt(t.get("quota"), 8)
                + _fmt(t.get("ref_count"), 6)
                + _fmt(t.get("pool_size"), 8)
                + _fmt(t.get("n_clusters"), 5)
                + _fmt(t.get("selected"), 6)
                + ("  " + ",".join(flags) if flags else "")
            )

    clusters = groups.get("cluster", [])
    if clusters:
        total_nc = sum(c.get("n_c", 0) for c in clusters)
        out.append(f"clusters: {len(clusters)} across tasks, {total_nc} units assigned")

    timing = groups.get("timing", [{}])[0]
    stages = {k: v for k, v in timing.items() if k != "type"}
    if stages:
        out.append("timing (s): " + ", ".join(f"{k}={v:.3f}" for k, v in stages.items()))

    summary = dict(groups["summary"][0])
    summary.pop("type", None)
    out.append("summary")
    for key in sorted(summary):
        out.append(f"  {key} = {summary[key]}")
    return "\n".join(out)
