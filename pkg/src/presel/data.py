"""Data model and file formats shared by every pipeline stage.

Three input artifacts:

* manifest: JSON-lines, one sample per line with ``sample_id``, ``task_ids``,
  ``is_reference``, ``text_only``. File order is the canonical sample order.
* features: binary. 8-byte magic ``PSELFEAT``, little-endian u32 version,
  u64 row count, u32 dimension, then ``n * d`` little-endian float32. Row i
  belongs to the i-th non-text-only manifest record.
* losses: JSON-lines keyed by ``sample_id``, carrying either the two per-token
  logprob sequences (with / without the question in context) or pre-aggregated
  ``nll_with_q`` / ``nll_without_q``.

The selection output is JSON-lines with a leading config line followed by one
entry per selected sample. All loaded structures are immutable.
"""

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    EmptyDataset,
    EmptyResponse,
    InvalidLogprob,
    MalformedRecord,
    NonFiniteFeature,
    RowCountMismatch,
    ZeroNormFeature,
)

FEATURE_MAGIC = b"PSELFEAT"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<8sIQI")  # magic, version, n, d
_VALIDATE_CHUNK = 8192

PROVENANCE_REFERENCE = "reference"
PROVENANCE_SELECTED = "selected"


def dumps_canonical(obj) -> str:
    """Canonical JSON used for every line-delimited artifact."""
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    task_ids: tuple[str, ...]
    is_reference: bool = False
    text_only: bool = False


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered sample records plus derived indexes.

    ``tasks`` maps task_id -> record indices (file order). ``row_of_record``
    gives each record's feature row, -1 for text-only records.
    """

    records: tuple[SampleRecord, ...]
    tasks: Mapping[str, tuple[int, ...]] = field(repr=False)
    row_of_record: tuple[int, ...] = field(repr=False)
    image_records: tuple[int, ...] = field(repr=False)
    index_of_id: Mapping[str, int] = field(repr=False)

    @property
    def image_count(self) -> int:
        """|D|: number of non-text-only samples."""
        return len(self.image_records)

    def task_ids_sorted(self) -> list[str]:
        return sorted(self.tasks)

    def record_of_row(self, row: int) -> SampleRecord:
        return self.records[self.image_records[row]]


def build_manifest(records: Sequence[SampleRecord]) -> DatasetManifest:
    """Validate records and derive the task and row indexes."""
    tasks: dict[str, list[int]] = {}
    index_of_id: dict[str, int] = {}
    row_of_record: list[int] = []
    image_records: list[int] = []
    for i, rec in enumerate(records):
        if rec.sample_id in index_of_id:
            raise DuplicateId(f"duplicate sample_id {rec.sample_id!r}")
        index_of_id[rec.sample_id] = i
        if not rec.task_ids:
            raise MalformedRecord(f"sample {rec.sample_id!r} has empty task_ids")
        if len(set(rec.task_ids)) != len(rec.task_ids):
            raise MalformedRecord(f"sample {rec.sample_id!r} repeats a task id")
        for t in rec.task_ids:
            tasks.setdefault(t, []).append(i)
        if rec.text_only:
            row_of_record.append(-1)
        else:
            row_of_record.append(len(image_records))
            image_records.append(i)
    if not image_records:
        raise EmptyDataset("manifest has no image samples")
    return DatasetManifest(
        records=tuple(records),
        tasks={t: tuple(v) for t, v in tasks.items()},
        row_of_record=tuple(row_of_record),
        image_records=tuple(image_records),
        index_of_id=index_of_id,
    )


def _parse_bool(value, what: str, line_no: int) -> bool:
    if not isinstance(value, bool):
        raise MalformedRecord(f"line {line_no}: {what} must be a boolean")
    return value


def load_manifest(path) -> DatasetManifest:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"line {line_no}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict) or "sample_id" not in obj or "task_ids" not in obj:
                raise MalformedRecord(f"line {line_no}: expected sample_id and task_ids")
            sid = obj["sample_id"]
            task_ids = obj["task_ids"]
            if not isinstance(sid, str) or not sid:
                raise MalformedRecord(f"line {line_no}: sample_id must be a non-empty string")
            if not isinstance(task_ids, list) or not all(isinstance(t, str) and t for t in task_ids):
                raise MalformedRecord(f"line {line_no}: task_ids must be a list of non-empty strings")
            records.append(
                SampleRecord(
                    sample_id=sid,
                    task_ids=tuple(task_ids),
                    is_reference=_parse_bool(obj.get("is_reference", False), "is_reference", line_no),
                    text_only=_parse_bool(obj.get("text_only", False), "text_only", line_no),
                )
            )
    return build_manifest(records)


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(
                dumps_canonical(
                    {
                        "sample_id": rec.sample_id,
                        "task_ids": list(rec.task_ids),
                        "is_reference": rec.is_reference,
                        "text_only": rec.text_only,
                    }
                )
                + "\n"
            )


def with_reference_rows(manifest: DatasetManifest, rows: Iterable[int]) -> DatasetManifest:
    """New manifest with is_reference set on the given feature rows."""
    ref_records = {manifest.image_records[r] for r in rows}
    records = [
        replace(rec, is_reference=True) if i in ref_records else rec
        for i, rec in enumerate(manifest.records)
    ]
    return build_manifest(records)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMatrix:
    n: int
    d: int
    rows: np.ndarray = field(repr=False)  # float32 (n, d), read-only view


def _validate_feature_rows(rows: np.ndarray) -> None:
    n = rows.shape[0]
    for start in range(0, n, _VALIDATE_CHUNK):
        block = np.asarray(rows[start : start + _VALIDATE_CHUNK])
        finite = np.isfinite(block)
        if not finite.all():
            i, j = np.argwhere(~finite)[0]
            raise NonFiniteFeature(f"non-finite feature at row {start + int(i)}, column {int(j)}")
        nonzero = (block != 0.0).any(axis=1)
        if not nonzero.all():
            i = int(np.flatnonzero(~nonzero)[0])
            raise ZeroNormFeature(f"all-zero feature row {start + i}")


def load_features(path, manifest: Optional[DatasetManifest] = None, mmap: bool = True) -> FeatureMatrix:
    path = Path(path)
    size = path.stat().st_size
    if size < _FEATURE_HEADER.size:
        raise MalformedRecord("feature file shorter than its header")
    with open(path, "rb") as fh:
        magic, version, n, d = _FEATURE_HEADER.unpack(fh.read(_FEATURE_HEADER.size))
    if magic != FEATURE_MAGIC:
        raise MalformedRecord(f"bad feature-file magic {magic!r}")
    if version != FEATURE_VERSION:
        raise MalformedRecord(f"unsupported feature-file version {version}")
    if d <= 0:
        raise MalformedRecord("feature dimension must be positive")
    expected = _FEATURE_HEADER.size + 4 * n * d
    if size != expected:
        raise RowCountMismatch(f"feature payload holds {(size - _FEATURE_HEADER.size) // (4 * d)} rows, header declares {n}")
    if manifest is not None and n != manifest.image_count:
        raise RowCountMismatch(f"feature file has {n} rows, manifest has {manifest.image_count} image samples")
    if mmap:
        rows = np.memmap(path, dtype="<f4", mode="r", offset=_FEATURE_HEADER.size, shape=(n, d))
    else:
        with open(path, "rb") as fh:
            fh.seek(_FEATURE_HEADER.size)
            rows = np.fromfile(fh, dtype="<f4", count=n * d).reshape(n, d)
        rows.setflags(write=False)
    _validate_feature_rows(rows)
    return FeatureMatrix(n=int(n), d=int(d), rows=rows)


class FeatureWriter:
    """Streaming writer for the binary feature format."""

    def __init__(self, path, n: int, d: int):
        self._fh = open(path, "wb")
        self._n = n
        self._d = d
        self._written = 0
        self._fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d))

    def write(self, chunk: np.ndarray) -> None:
        chunk = np.ascontiguousarray(chunk, dtype="<f4")
        if chunk.ndim != 2 or chunk.shape[1] != self._d:
            raise RowCountMismatch("feature chunk dimension mismatch")
        self._written += chunk.shape[0]
        if self._written > self._n:
            raise RowCountMismatch("more feature rows written than declared")
        self._fh.write(chunk.tobytes())

    def close(self) -> None:
        try:
            if self._written != self._n:
                raise RowCountMismatch(f"wrote {self._written} feature rows, declared {self._n}")
        finally:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
        return False


def save_features(rows: np.ndarray, path) -> None:
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2:
        raise MalformedRecord("feature array must be 2-D")
    with FeatureWriter(path, rows.shape[0], rows.shape[1]) as w:
        w.write(rows)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossRecord:
    sample_id: str
    token_logprobs_with_q: Optional[tuple[float, ...]] = None
    token_logprobs_without_q: Optional[tuple[float, ...]] = None
    nll_with_q: Optional[float] = None
    nll_without_q: Optional[float] = None

    @property
    def has_token_level(self) -> bool:
        return self.token_logprobs_with_q is not None


def _check_logprobs(values, sample_id: str, what: str) -> tuple[float, ...]:
    if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
        raise MalformedRecord(f"sample {sample_id!r}: {what} must be a list of numbers")
    if not values:
        raise EmptyResponse(f"sample {sample_id!r}: {what} is empty")
    out = tuple(float(v) for v in values)
    for v in out:
        if not np.isfinite(v) or v > 0.0:
            raise InvalidLogprob(f"sample {sample_id!r}: {what} contains {v!r}")
    return out


def _check_nll(value, sample_id: str, what: str) -> float:
    if not isinstance(value, (int, float)):
        raise MalformedRecord(f"sample {sample_id!r}: {what} must be a number")
    v = float(value)
    if not np.isfinite(v) or v < 0.0:
        raise MalformedRecord(f"sample {sample_id!r}: {what} must be a finite non-negative number")
    return v


def load_losses(path) -> list[LossRecord]:
    records: list[LossRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"line {line_no}: invalid JSON ({exc})") from exc
            sid = obj.get("sample_id")
            if not isinstance(sid, str) or not sid:
                raise MalformedRecord(f"line {line_no}: sample_id must be a non-empty string")
            if sid in seen:
                raise DuplicateId(f"duplicate loss record for sample {sid!r}")
            seen.add(sid)

            tok_w = obj.get("token_logprobs_with_q")
            tok_wo = obj.get("token_logprobs_without_q")
            agg_w = obj.get("nll_with_q")
            agg_wo = obj.get("nll_without_q")

            rec = LossRecord(sample_id=sid)
            if tok_w is not None or tok_wo is not None:
                if tok_w is None or tok_wo is None:
                    raise MalformedRecord(f"sample {sid!r}: both token logprob sequences are required")
                w = _check_logprobs(tok_w, sid, "token_logprobs_with_q")
                wo = _check_logprobs(tok_wo, sid, "token_logprobs_without_q")
                if len(w) != len(wo):
                    raise MalformedRecord(
                        f"sample {sid!r}: token sequences score the same response, lengths {len(w)} != {len(wo)}"
                    )
                rec = replace(rec, token_logprobs_with_q=w, token_logprobs_without_q=wo)
            if agg_w is not None or agg_wo is not None:
                if agg_w is None or agg_wo is None:
                    raise MalformedRecord(f"sample {sid!r}: both nll_with_q and nll_without_q are required")
                rec = replace(
                    rec,
                    nll_with_q=_check_nll(agg_w, sid, "nll_with_q"),
                    nll_without_q=_check_nll(agg_wo, sid, "nll_without_q"),
                )
            if rec.token_logprobs_with_q is None and rec.nll_with_q is None:
                raise MalformedRecord(f"sample {sid!r}: needs token logprobs or aggregated NLLs")
            records.append(rec)
    return records


def save_losses(records: Iterable[LossRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj: dict = {"sample_id": rec.sample_id}
            if rec.token_logprobs_with_q is not None:
                obj["token_logprobs_with_q"] = list(rec.token_logprobs_with_q)
                obj["token_logprobs_without_q"] = list(rec.token_logprobs_without_q)
            if rec.nll_with_q is not None:
                obj["nll_with_q"] = rec.nll_with_q
                obj["nll_without_q"] = rec.nll_without_q
            fh.write(dumps_canonical(obj) + "\n")


# ---------------------------------------------------------------------------
# Selection manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelectionEntry:
    sample_id: str
    task_id: str
    cluster_id: Optional[int]
    nc_score: Optional[float]
    provenance: str


@dataclass(frozen=True)
class SelectionManifest:
    entries: tuple[SelectionEntry, ...]
    config_echo: dict


def _validate_selection(entries: Sequence[SelectionEntry], config_echo: dict) -> None:
    # the random baseline selects without clustering, so its entries
    # legitimately carry no cluster/NC fields
    random_strategy = config_echo.get("strategy") == "random"
    seen: set[str] = set()
    for e in entries:
        if e.sample_id in seen:
            raise DuplicateId(f"duplicate selection entry for {e.sample_id!r}")
        seen.add(e.sample_id)
        if e.provenance == PROVENANCE_REFERENCE:
            if e.cluster_id is not None or e.nc_score is not None:
                raise MalformedRecord(f"reference entry {e.sample_id!r} must not carry cluster/NC fields")
        elif e.provenance == PROVENANCE_SELECTED:
            if not random_strategy and (e.cluster_id is None or e.nc_score is None):
                raise MalformedRecord(f"selected entry {e.sample_id!r} must carry cluster_id and nc_score")
        else:
            raise MalformedRecord(f"entry {e.sample_id!r} has unknown provenance {e.provenance!r}")


def build_selection(entries: Sequence[SelectionEntry], config_echo: dict) -> SelectionManifest:
    _validate_selection(entries, config_echo)
    return SelectionManifest(entries=tuple(entries), config_echo=dict(config_echo))


def save_selection(selection: SelectionManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical({"config": selection.config_echo}) + "\n")
        for e in selection.entries:
            fh.write(
                dumps_canonical(
                    {
                        "sample_id": e.sample_id,
                        "task_id": e.task_id,
                        "cluster_id": e.cluster_id,
                        "nc_score": e.nc_score,
                        "provenance": e.provenance,
                    }
                )
                + "\n"
            )


def load_selection(path) -> SelectionManifest:
    entries: list[SelectionEntry] = []
    config_echo: Optional[dict] = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"line {line_no}: invalid JSON ({exc})") from exc
            if config_echo is None:
                if "config" not in obj:
                    raise MalformedRecord("selection manifest must start with a config line")
                config_echo = obj["config"]
                continue
            try:
                entries.append(
                    SelectionEntry(
                        sample_id=obj["sample_id"],
                        task_id=obj["task_id"],
                        cluster_id=obj["cluster_id"],
                        nc_score=obj["nc_score"],
                        provenance=obj["provenance"],
                    )
                )
            except KeyError as exc:
                raise MalformedRecord(f"line {line_no}: missing field {exc}") from exc
    if config_echo is None:
        raise MalformedRecord("selection manifest is empty")
    return build_selection(entries, config_echo)


# ---------------------------------------------------------------------------
# Cross-input validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    """Consistency findings across manifest, features, and losses.

    Report-only: none of these abort a run on their own. Tasks listed in
    ``no_reference_tasks`` fall back to neutral importance during budgeting.
    """

    missing_loss_refs: tuple[str, ...]
    orphan_loss_ids: tuple[str, ...]
    non_reference_loss_ids: tuple[str, ...]
    no_reference_tasks: tuple[str, ...]

    @property
    def clean(self) -> bool:
        return not (
            self.missing_loss_refs
            or self.orphan_loss_ids
            or self.non_reference_loss_ids
            or self.no_reference_tasks
        )

    def as_dict(self) -> dict:
        return {
            "missing_loss_refs": list(self.missing_loss_refs),
            "orphan_loss_ids": list(self.orphan_loss_ids),
            "non_reference_loss_ids": list(self.non_reference_loss_ids),
            "no_reference_tasks": list(self.no_reference_tasks),
        }


def validate_inputs(
    manifest: DatasetManifest,
    features: Optional[FeatureMatrix],
    losses: Optional[Sequence[LossRecord]],
) -> ValidationReport:
    if features is not None and features.n != manifest.image_count:
        raise RowCountMismatch(
            f"feature file has {features.n} rows, manifest has {manifest.image_count} image samples"
        )
    losses = losses or []
    loss_ids = {rec.sample_id for rec in losses}

    orphan = sorted(sid for sid in loss_ids if sid not in manifest.index_of_id)
    non_ref = sorted(
        sid
        for sid in loss_ids
        if sid in manifest.index_of_id and not manifest.records[manifest.index_of_id[sid]].is_reference
    )
    missing = sorted(
        rec.sample_id
        for rec in manifest.records
        if rec.is_reference and not rec.text_only and rec.sample_id not in loss_ids
    )
    no_ref_tasks = sorted(
        task
        for task, members in manifest.tasks.items()
        if not any(
            manifest.records[i].is_reference and not manifest.records[i].text_only for i in members
        )
    )
    return ValidationReport(
        missing_loss_refs=tuple(missing),
        orphan_loss_ids=tuple(orphan),
        non_reference_loss_ids=tuple(non_ref),
        no_reference_tasks=tuple(no_ref_tasks),
    )
