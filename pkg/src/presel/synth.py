"""Synthetic dataset generation for benchmarks and pipeline validation.

Each task draws its samples from a Gaussian-blob mixture; reference samples
get token-logprob pairs whose NLL ratio concentrates around a planted
per-task relevance mean. The ground-truth file records blob memberships,
planted means, and blob centers so tests can check recovery against the
generator, not against the pipeline under test.
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .apportion import round_half_up
from .data import FeatureWriter, LossRecord, SampleRecord, build_manifest, save_losses, save_manifest
from .errors import SynthSpecError
from .seeding import (
    STAGE_SYNTH_FEATURES,
    STAGE_SYNTH_LOSSES,
    STAGE_SYNTH_STRUCTURE,
    derive_rng,
)

_FEATURE_CHUNK = 4096


@dataclass(frozen=True)
class SynthSpec:
    n_tasks: int
    samples_per_task: tuple[int, ...]
    d: int = 16
    blobs_per_task: int = 3
    blob_stddev: float = 0.05
    overlap_fraction: float = 0.0
    planted_task_irs: tuple[float, ...] = field(default=())
    seed: int = 0
    ref_ratio: float = 0.05
    irs_noise: float = 0.1
    response_tokens: int = 24

    def __post_init__(self):
        if self.n_tasks < 1:
            raise SynthSpecError("n_tasks must be >= 1")
        if len(self.samples_per_task) != self.n_tasks:
            raise SynthSpecError("samples_per_task must list one count per task")
        if any(s < 1 for s in self.samples_per_task):
            raise SynthSpecError("samples_per_task entries must be positive")
        if self.d < 1 or self.blobs_per_task < 1 or self.response_tokens < 1:
            raise SynthSpecError("d, blobs_per_task, response_tokens must be positive")
        if not (self.blob_stddev > 0.0):
            raise SynthSpecError("blob_stddev must be positive")
        if not (0.0 <= self.overlap_fraction < 1.0):
            raise SynthSpecError("overlap_fraction must be in [0, 1)")
        if self.planted_task_irs and len(self.planted_task_irs) != self.n_tasks:
            raise SynthSpecError("planted_task_irs must list one mean per task")
        if any(not v > 0.0 for v in self.planted_task_irs):
            raise SynthSpecError("planted_task_irs means must be positive")
        if not (0.0 < self.ref_ratio < 1.0):
            raise SynthSpecError("ref_ratio must be in (0, 1)")
        if self.irs_noise < 0.0:
            raise SynthSpecError("irs_noise must be >= 0")


def _task_name(i: int) -> str:
    return f"task{i:03d}"


def generate(spec: SynthSpec, out_dir) -> dict:
    """Write manifest/features/losses/truth files; returns the truth record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    planted = spec.planted_task_irs or tuple(1.0 for _ in range(spec.n_tasks))

    # structure: owners, blob memberships, task overlap
    rng = derive_rng(spec.seed, STAGE_SYNTH_STRUCTURE)
    centers = rng.normal(0.0, 1.0, size=(spec.n_tasks, spec.blobs_per_task, spec.d))
    owner_task: list[int] = []
    blob_of_sample: list[int] = []
    task_ids_of: list[list[str]] = []
    for i in range(spec.n_tasks):
        for _ in range(spec.samples_per_task[i]):
            if i > 0 and rng.random() < spec.overlap_fraction:
                # membership-only slot: an earlier sample also joins task i
                placed = False
                for _attempt in range(8):
                    j = int(rng.integers(len(owner_task)))
                    if _task_name(i) not in task_ids_of[j]:
                        task_ids_of[j].append(_task_name(i))
                        placed = True
                        break
                if placed:
                    continue
            owner_task.append(i)
            blob_of_sample.append(int(rng.integers(spec.blobs_per_task)))
            task_ids_of.append([_task_name(i)])

    n = len(owner_task)
    n_ref = round_half_up(Fraction(spec.ref_ratio) * n)
    ref_rows = set(int(r) for r in rng.permutation(n)[:n_ref])

    records = [
        SampleRecord(
            sample_id=f"s{idx:06d}",
            task_ids=tuple(task_ids_of[idx]),
            is_reference=idx in ref_rows,
            text_only=False,
        )
        for idx in range(n)
    ]
    manifest = build_manifest(records)
    save_manifest(manifest, out / "manifest.jsonl")

    # features: blob center + isotropic noise, streamed in manifest order
    feat_rng = derive_rng(spec.seed, STAGE_SYNTH_FEATURES)
    with FeatureWriter(out / "features.bin", n, spec.d) as writer:
        for start in range(0, n, _FEATURE_CHUNK):
            stop = min(start + _FEATURE_CHUNK, n)
            noise = feat_rng.normal(0.0, spec.blob_stddev, size=(stop - start, spec.d))
            block = np.empty((stop - start, spec.d), dtype=np.float64)
            for i in range(start, stop):
                block[i - start] = centers[owner_task[i], blob_of_sample[i]]
            writer.write((block + noise).astype(np.float32))

    # losses: per-token logprobs with the planted per-task NLL ratio
    loss_rng = derive_rng(spec.seed, STAGE_SYNTH_LOSSES)
    loss_records = []
    for idx in range(n):
        if idx not in ref_rows:
            continue
        mean_irs = planted[owner_task[idx]]
        without = loss_rng.uniform(0.2, 2.0, size=spec.response_tokens)
        nll_without = float(without.mean())
        noise = float(np.exp(loss_rng.normal(0.0, spec.irs_noise))) if spec.irs_noise > 0 else 1.0
        target_with = mean_irs * noise * nll_without
        shape = loss_rng.uniform(0.2, 2.0, size=spec.response_tokens)
        with_q = shape * (target_with / float(shape.mean()))
        loss_records.append(
            LossRecord(
                sample_id=f"s{idx:06d}",
                token_logprobs_with_q=tuple(-float(v) for v in with_q),
                token_logprobs_without_q=tuple(-float(v) for v in without),
            )
        )
    save_losses(loss_records, out / "losses.jsonl")

    truth = {
        "n_samples": n,
        "n_tasks": spec.n_tasks,
        "planted_irs": {_task_name(i): planted[i] for i in range(spec.n_tasks)},
        "ref_count": n_ref,
        "owner_task": [_task_name(i) for i in owner_task],
        "blob_of_sample": blob_of_sample,
        "blob_centers": centers.tolist(),
        "spec": {
            "n_tasks": spec.n_tasks,
            "samples_per_task": list(spec.samples_per_task),
            "d": spec.d,
            "blobs_per_task": spec.blobs_per_task,
            "blob_stddev": spec.blob_stddev,
            "overlap_fraction": spec.overlap_fraction,
            "planted_task_irs": list(planted),
            "seed": spec.seed,
            "ref_ratio": spec.ref_ratio,
            "irs_noise": spec.irs_noise,
            "response_tokens": spec.response_tokens,
        },
    }
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")
    return truth
