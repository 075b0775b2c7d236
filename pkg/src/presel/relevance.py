"""Instruction relevance scoring from reference-set loss records.

The relevance of a question to its response is the ratio of the response's
mean next-token NLL with the question in context to the NLL with the image
alone. A lower ratio means the question carries more information the model
needed.
"""

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .data import LossRecord, dumps_canonical
from .errors import DegenerateDenominator, EmptyResponse, InvalidLogprob, MalformedRecord

# Denominator guard: below this the model effectively predicts the response
# perfectly without the question, and the ratio is meaningless.
EPSILON_NLL = 1e-8

EXCLUSION_DEGENERATE = "DegenerateDenominator"


@dataclass(frozen=True)
class IrsRecord:
    sample_id: str
    nll_with_q: float
    nll_without_q: float
    irs: float


@dataclass(frozen=True)
class ExcludedLoss:
    sample_id: str
    nll_with_q: float
    nll_without_q: float
    reason: str


@dataclass(frozen=True)
class IrsResult:
    records: tuple[IrsRecord, ...]
    excluded: tuple[ExcludedLoss, ...]


def response_nll(token_logprobs: Sequence[float]) -> float:
    """Mean negated log-probability over the response tokens."""
    if len(token_logprobs) == 0:
        raise EmptyResponse("response has no tokens")
    for v in token_logprobs:
        if not math.isfinite(v) or v > 0.0:
            raise InvalidLogprob(f"log-probability {v!r} is positive or non-finite")
    return -math.fsum(token_logprobs) / len(token_logprobs)


def irs(nll_with_q: float, nll_without_q: float) -> float:
    """Loss ratio with-question / without-question; lower means Q matters more."""
    if not (math.isfinite(nll_with_q) and math.isfinite(nll_without_q)):
        raise InvalidLogprob("NLL values must be finite")
    if nll_with_q < 0.0 or nll_without_q < 0.0:
        raise InvalidLogprob("NLL values must be non-negative")
    if nll_without_q < EPSILON_NLL:
        raise DegenerateDenominator(
            f"without-question NLL {nll_without_q!r} is below {EPSILON_NLL}"
        )
    return nll_with_q / nll_without_q


def compute_irs_records(losses: Iterable[LossRecord]) -> IrsResult:
    """Score every loss record, in input order.

    Token-level logprobs take precedence over pre-aggregated NLLs when both
    are present. Degenerate-denominator samples are not scored; they are
    returned separately so budgeting can drop them from task averages.
    """
    records: list[IrsRecord] = []
    excluded: list[ExcludedLoss] = []
    for rec in losses:
        if rec.has_token_level:
            w = response_nll(rec.token_logprobs_with_q)
            wo = response_nll(rec.token_logprobs_without_q)
        else:
            w = rec.nll_with_q
            wo = rec.nll_without_q
        try:
            ratio = irs(w, wo)
        except DegenerateDenominator:
            excluded.append(
                ExcludedLoss(sample_id=rec.sample_id, nll_with_q=w, nll_without_q=wo, reason=EXCLUSION_DEGENERATE)
            )
            continue
        records.append(IrsRecord(sample_id=rec.sample_id, nll_with_q=w, nll_without_q=wo, irs=ratio))
    return IrsResult(records=tuple(records), excluded=tuple(excluded))


def save_irs_report(result: IrsResult, path, exclusions_path=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in result.records:
            fh.write(
                dumps_canonical(
                    {
                        "sample_id": rec.sample_id,
                        "nll_with_q": rec.nll_with_q,
                        "nll_without_q": rec.nll_without_q,
                        "irs": rec.irs,
                    }
                )
                + "\n"
            )
    if exclusions_path is not None:
        with open(exclusions_path, "w", encoding="utf-8") as fh:
            for exc in result.excluded:
                fh.write(
                    dumps_canonical(
                        {
                            "sample_id": exc.sample_id,
                            "nll_with_q": exc.nll_with_q,
                            "nll_without_q": exc.nll_without_q,
                            "reason": exc.reason,
                        }
                    )
                    + "\n"
                )


def load_irs_report(path) -> list[IrsRecord]:
    out: list[IrsRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(
                    IrsRecord(
                        sample_id=obj["sample_id"],
                        nll_with_q=float(obj["nll_with_q"]),
                        nll_without_q=float(obj["nll_without_q"]),
                        irs=float(obj["irs"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(f"line {line_no}: invalid IRS record ({exc})") from exc
    return out
