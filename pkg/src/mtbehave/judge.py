"""Quantitative judging of translation behavior on generated test cases.

For a case built from pair (x, r) with edit (x', r'), the system under test
translates both inputs and a reference-based scorer rates each translation
against its reference. The case passes iff the base translation is good enough
(qual_y >= alpha) and the quality moved by at most beta under the edit
(|qual_y - qual_y'| <= beta). Comparisons are exact; no epsilon is applied.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .backends import Backend, BackendError
from .casegen import STATUS_KEPT, TestCase
from .corpus import Corpus, CorpusError

FAIL_LOW_BASE_QUALITY = "low_base_quality"
FAIL_LARGE_DIFF = "large_diff"


class EmptyVerdictSet(ValueError):
    """A pass rate over zero verdicts is undefined, never silently 0."""


@dataclass(frozen=True)
class JudgeConfig:
    """Judging thresholds: alpha for base quality, beta for the allowed drop."""

    alpha: float = 0.8
    beta: float = 0.05

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError("alpha and beta must be finite")
        if self.beta < 0:
            raise ValueError("beta must not be negative")


@dataclass
class TranslationRecord:
    """Translations and scores for one case under one MT system."""

    case_id: str
    system_id: str
    y: str | None = None
    y_prime: str | None = None
    qual_y: float | None = None
    qual_y_prime: float | None = None
    error: str | None = None
    error_kind: str | None = None


@dataclass(frozen=True)
class Verdict:
    case_id: str
    system_id: str
    qual_y: float
    qual_y_prime: float
    diff: float
    passed: bool
    fail_reason: str | None


def diff(qual_y: float, qual_y_prime: float) -> float:
    return abs(qual_y - qual_y_prime)


def judge_case(record: TranslationRecord, config: JudgeConfig) -> Verdict:
    """Judge one scored record. Low base quality takes precedence as the reason."""
    if record.error is not None or record.qual_y is None or record.qual_y_prime is None:
        raise ValueError(f"record {record.case_id!r} was not scored")
    gap = diff(record.qual_y, record.qual_y_prime)
    if record.qual_y < config.alpha:
        passed, reason = False, FAIL_LOW_BASE_QUALITY
    elif gap > config.beta:
        passed, reason = False, FAIL_LARGE_DIFF
    else:
        passed, reason = True, None
    return Verdict(
        record.case_id,
        record.system_id,
        record.qual_y,
        record.qual_y_prime,
        gap,
        passed,
        reason,
    )


def judge_records(records: Iterable[TranslationRecord], config: JudgeConfig) -> list[Verdict]:
    """Judge every scored record; errored records are skipped, not judged."""
    return [judge_case(r, config) for r in records if r.error is None]


def pass_rate(verdicts: Sequence[Verdict]) -> float:
    """Percentage of passing verdicts, rounded to two decimals."""
    if not verdicts:
        raise EmptyVerdictSet("no verdicts to aggregate")
    passes = sum(1 for verdict in verdicts if verdict.passed)
    return round(100 * passes / len(verdicts), 2)


def sweep(
    records: Sequence[TranslationRecord],
    alphas: Sequence[float],
    betas: Sequence[float],
) -> dict[tuple[float, float], float]:
    """Pass rate for every (alpha, beta) cell, re-judging without re-scoring."""
    scored = [record for record in records if record.error is None]
    grid: dict[tuple[float, float], float] = {}
    for alpha in alphas:
        for beta in betas:
            config = JudgeConfig(alpha, beta)
            grid[(alpha, beta)] = pass_rate([judge_case(r, config) for r in scored])
    return grid


def score_records(
    cases: Sequence[TestCase],
    corpus: Corpus,
    translator: Backend,
    scorer: Backend,
    jobs: int = 1,
) -> list[TranslationRecord]:
    """Translate and score every kept case against one MT system.

    Backend failures are recorded per record and never abort the batch. The
    record's system_id is the translator's backend id.
    """
    kept = [case for case in cases if case.filter_status == STATUS_KEPT]
    system_id = translator.spec.backend_id

    def run(case: TestCase) -> TranslationRecord:
        record = TranslationRecord(case.case_id, system_id)
        pair = corpus.pairs.get(case.pair_id)
        if pair is None:
            raise ValueError(
                f"case {case.case_id!r} references unknown pair {case.pair_id!r}"
            )
        if case.source_prime is None or case.reference_prime is None:
            raise ValueError(f"kept case {case.case_id!r} lacks its edited texts")
        source = " ".join(pair.source)
        reference = " ".join(pair.reference)
        source_prime = " ".join(case.source_prime)
        reference_prime = " ".join(case.reference_prime)
        try:
            record.y = translator.translate(source)
            record.y_prime = translator.translate(source_prime)
            record.qual_y = scorer.score(source, record.y, reference)
            record.qual_y_prime = scorer.score(source_prime, record.y_prime, reference_prime)
        except BackendError as exc:
            record.error = str(exc)
            record.error_kind = "backend"
        return record

    if jobs <= 1:
        return [run(case) for case in kept]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, kept))


def write_records(records: Iterable[TranslationRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            payload = {
                "case_id": record.case_id,
                "system_id": record.system_id,
                "y": record.y,
                "y_prime": record.y_prime,
                "qual_y": record.qual_y,
                "qual_y_prime": record.qual_y_prime,
                "error": record.error,
                "error_kind": record.error_kind,
            }
            handle.write(json.dumps(payload, ensure_ascii=False, separators=(",", ":")) + "\n")


def read_records(path) -> list[TranslationRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            try:
                data = json.loads(line)
                records.append(
                    TranslationRecord(
                        case_id=data["case_id"],
                        system_id=data["system_id"],
                        y=data.get("y"),
                        y_prime=data.get("y_prime"),
                        qual_y=data.get("qual_y"),
                        qual_y_prime=data.get("qual_y_prime"),
                        error=data.get("error"),
                        error_kind=data.get("error_kind"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad record: {exc}") from exc
    return records


def write_verdicts(verdicts: Iterable[Verdict], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for verdict in verdicts:
            payload = {
                "case_id": verdict.case_id,
                "system_id": verdict.system_id,
                "qual_y": verdict.qual_y,
                "qual_y_prime": verdict.qual_y_prime,
                "diff": verdict.diff,
                "passed": verdict.passed,
                "fail_reason": verdict.fail_reason,
            }
            handle.write(json.dumps(payload, ensure_ascii=False, separators=(",", ":")) + "\n")


def read_verdicts(path) -> list[Verdict]:
    verdicts = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            try:
                data = json.loads(line)
                verdicts.append(
                    Verdict(
                        case_id=data["case_id"],
                        system_id=data["system_id"],
                        qual_y=data["qual_y"],
                        qual_y_prime=data["qual_y_prime"],
                        diff=data["diff"],
                        passed=data["passed"],
                        fail_reason=data.get("fail_reason"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad verdict: {exc}") from exc
    return verdicts
