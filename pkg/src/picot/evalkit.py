"""Answer scoring (EM / token F1), aggregate statistics and reports."""

from __future__ import annotations

import json
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)

ERROR_ROWS = (
    ("Parsing errors", "QueryParseError", "Prolog query parsing error"),
    ("Parsing errors", "ExecutionParseError", "Execution parsing error"),
    ("Execution errors", "IntermediatePredicateExistence", "Intermediate predicate existence error"),
    ("Execution errors", "FinalPredicateExistence", "Final predicate existence error"),
)


# -- metrics -----------------------------------------------------------------------


def normalize(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, golds: Iterable[str]) -> int:
    golds = list(golds)
    if not golds:
        raise ValueError("need at least one gold answer")
    p = normalize(pred)
    return int(any(p == normalize(g) for g in golds))


def _f1(pred_tokens: list, gold_tokens: list) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, golds: Iterable[str]) -> float:
    golds = list(golds)
    if not golds:
        raise ValueError("need at least one gold answer")
    p = normalize(pred).split()
    return max(_f1(p, normalize(g).split()) for g in golds)


def mean_and_se(values) -> tuple[float, float]:
    """Mean and standard error (sample sd with n - 1, over sqrt(n)); SE is 0 for n = 1."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise ValueError("no values")
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var) / math.sqrt(n)


# -- data ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QaExample:
    id: str
    question: str
    gold_answers: tuple
    gold_passages: Optional[tuple] = None

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"example {self.id} has no gold answers")


def load_dataset(path: Union[str, Path]) -> list[QaExample]:
    """JSON lines of ``{"id", "question", "answers": [...], "gold_docs": [...]?}``."""
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                answers = obj["answers"]
                if isinstance(answers, str):
                    answers = [answers]
                docs = obj.get("gold_docs")
                ex = QaExample(str(obj["id"]), obj["question"], tuple(answers), tuple(docs) if docs is not None else None)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from None
            if ex.id in seen:
                raise ValueError(f"{path} line {lineno}: duplicate id {ex.id}")
            seen.add(ex.id)
            out.append(ex)
    return out


@dataclass(frozen=True)
class ScoreRow:
    id: str
    em: int
    f1: float
    retrieval_calls: int = 0
    llm_calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cached_tokens: int = 0
    error_category: str = "None"

    def __post_init__(self):
        if self.em not in (0, 1) or not 0.0 <= self.f1 <= 1.0:
            raise ValueError("em must be 0/1 and f1 in [0, 1]")
        if self.em == 1 and self.f1 != 1.0:
            raise ValueError("em = 1 requires f1 = 1")


def score_record(record: dict) -> ScoreRow:
    """Score one RunRecord JSON object against its gold answers."""
    golds = record.get("gold_answers") or []
    pred = record.get("final_answer", "")
    totals = (record.get("usage") or {}).get("totals", {})
    return ScoreRow(
        id=record.get("question_id", ""),
        em=exact_match(pred, golds),
        f1=token_f1(pred, golds),
        retrieval_calls=record.get("retrieval_calls", 0),
        llm_calls=record.get("llm_calls", 0),
        prompt_tokens=totals.get("prompt_tokens", 0),
        completion_tokens=totals.get("completion_tokens", 0),
        cached_tokens=totals.get("cached_tokens", 0),
        error_category=record.get("error_category", "None"),
    )


@dataclass(frozen=True)
class AggregateReport:
    n: int
    em: tuple  # (mean, se)
    f1: tuple
    retrieval_calls: tuple
    llm_calls: tuple
    prompt_tokens: tuple
    completion_tokens: tuple
    cached_tokens: tuple

    def to_json(self) -> dict:
        out = {"n": self.n}
        for name in ("em", "f1", "retrieval_calls", "llm_calls", "prompt_tokens", "completion_tokens", "cached_tokens"):
            mean, se = getattr(self, name)
            out[name] = {"mean": mean, "se": se}
        return out


def aggregate(rows) -> AggregateReport:
    rows = list(rows)
    if not rows:
        raise ValueError("cannot aggregate zero rows")

    def stat(name):
        return mean_and_se(getattr(r, name) for r in rows)

    return AggregateReport(
        n=len(rows),
        em=stat("em"),
        f1=stat("f1"),
        retrieval_calls=stat("retrieval_calls"),
        llm_calls=stat("llm_calls"),
        prompt_tokens=stat("prompt_tokens"),
        completion_tokens=stat("completion_tokens"),
        cached_tokens=stat("cached_tokens"),
    )


@dataclass
class ErrorBreakdown:
    total: int
    counts: dict = field(default_factory=dict)

    @property
    def errors(self) -> int:
        return sum(self.counts.values())

    def percent(self, category: str) -> float:
        return 100.0 * self.counts.get(category, 0) / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "questions": self.total,
            "counts": {cat: self.counts.get(cat, 0) for _, cat, _ in ERROR_ROWS},
            "percent": {cat: self.percent(cat) for _, cat, _ in ERROR_ROWS},
            "total_errors": self.errors,
            "total_percent": 100.0 * self.errors / self.total if self.total else 0.0,
        }


def error_breakdown(rows) -> ErrorBreakdown:
    rows = list(rows)
    counts = Counter(r.error_category for r in rows if r.error_category != "None")
    return ErrorBreakdown(len(rows), dict(counts))


# -- reports -----------------------------------------------------------------------


def load_records(path: Union[str, Path]) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path} line {lineno}: {exc}") from None
    return records


def build_report(records: list[dict]) -> dict:
    """Aggregate over completed records; aborted ones are only counted."""
    completed = [r for r in records if not r.get("aborted")]
    rows = [score_record(r) for r in completed if r.get("gold_answers")]
    report = {"records": len(records), "aborted": len(records) - len(completed), "scored": len(rows)}
    if rows:
        report["aggregate"] = aggregate(rows).to_json()
        report["errors"] = error_breakdown(rows).to_json()
        report["rows"] = [
            {"id": r.id, "em": r.em, "f1": r.f1, "error_category": r.error_category} for r in rows
        ]
    return report


def format_report(report: dict) -> str:
    lines = [f"records: {report['records']}  scored: {report['scored']}  aborted: {report['aborted']}"]
    if "aggregate" not in report:
        return "\n".join(lines) + "\n"
    agg = report["aggregate"]
    lines.append("")
    lines.append(f"{'metric':<20}{'mean':>12}{'se':>12}")
    for key, label, scale in (("em", "EM", 100), ("f1", "F1", 100), ("retrieval_calls", "BM25 calls", 1),
                              ("llm_calls", "LLM calls", 1), ("prompt_tokens", "prompt tokens", 1),
                              ("completion_tokens", "completion tokens", 1), ("cached_tokens", "cached tokens", 1)):
        lines.append(f"{label:<20}{agg[key]['mean'] * scale:>12.2f}{agg[key]['se'] * scale:>12.2f}")
    errs = report["errors"]
    lines.append("")
    lines.append(f"{'error type':<42}{'count':>7}{'percent':>10}")
    group = None
    for g, cat, label in ERROR_ROWS:
        if g != group:
            lines.append(f"{g}:")
            group = g
        lines.append(f"  {label:<40}{errs['counts'][cat]:>7}{errs['percent'][cat]:>9.1f}%")
    lines.append(f"{'Total errors':<42}{errs['total_errors']:>7}{errs['total_percent']:>9.1f}%")
    return "\n".join(lines) + "\n"
