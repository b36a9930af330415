"""Per-question orchestration: query generation, SLICE chaining, final answer."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .config import Config
from .definitions import DefinitionTable, render_constant, statement_for
from .llm import LlmBackend, MeteredLlm, ScriptMiss, TransportError, UsageLedger
from .prolog.engine import EMPTY_STATE, KnowledgeBase
from .prolog.parser import ParseError, print_query, print_term
from .prolog.terms import Term
from .prompts import (
    QUERY_PARSE_LABEL,
    MalformedResponse,
    MissingAnswerTags,
    build_query_generation_prompt,
    default_fewshot,
    extract_answer_span,
    fill,
    parse_query_generation_response,
    render_evidence,
    template,
)
from .retrieval import EvidenceProvider
from .slice import SliceSettings, StepArtifact, slice_step

logger = logging.getLogger(__name__)

RECORD_VERSION = 1


class ErrorCategory(str, enum.Enum):
    NONE = "None"
    QUERY_PARSE = "QueryParseError"
    EXECUTION_PARSE = "ExecutionParseError"
    INTERMEDIATE_PREDICATE = "IntermediatePredicateExistence"
    FINAL_PREDICATE = "FinalPredicateExistence"


@dataclass(frozen=True)
class FewShot:
    querygen: str
    slice: str
    final: str

    @classmethod
    def defaults(cls) -> "FewShot":
        return cls(default_fewshot("querygen"), default_fewshot("slice"), default_fewshot("final"))

    @classmethod
    def from_dir(cls, path) -> "FewShot":
        """Load ``querygen.txt``/``slice.txt``/``final.txt``; missing files keep defaults."""
        base = cls.defaults()
        values = {}
        for role in ("querygen", "slice", "final"):
            p = Path(path) / f"{role}.txt"
            values[role] = p.read_text(encoding="utf-8").rstrip("\n") if p.exists() else getattr(base, role)
        return cls(**values)


@dataclass
class Backends:
    llm: LlmBackend
    evidence: EvidenceProvider
    fewshot: FewShot = field(default_factory=FewShot.defaults)


@dataclass
class RunRecord:
    question_id: str
    question: str
    gold_answers: list = field(default_factory=list)
    querygen_raw: str = ""
    query: Optional[str] = None
    target: Optional[str] = None
    definitions: list = field(default_factory=list)
    parse_error: Optional[dict] = None
    steps: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    passages: list = field(default_factory=list)
    prolog_answer: list = field(default_factory=list)
    final_raw: str = ""
    final_answer: str = ""
    error_category: ErrorCategory = ErrorCategory.NONE
    aborted: bool = False
    abort_reason: Optional[str] = None
    warnings: list = field(default_factory=list)
    usage: dict = field(default_factory=dict)
    retrieval_calls: int = 0
    llm_calls: int = 0
    final_prompt: str = field(default="", repr=False)  # kept in memory only

    def to_json(self) -> dict:
        return {
            "version": RECORD_VERSION,
            "question_id": self.question_id,
            "question": self.question,
            "gold_answers": list(self.gold_answers),
            "querygen_raw": self.querygen_raw,
            "query": self.query,
            "target": self.target,
            "definitions": self.definitions,
            "parse_error": self.parse_error,
            "steps": [s.to_json() if isinstance(s, StepArtifact) else s for s in self.steps],
            "notes": list(self.notes),
            "passages": list(self.passages),
            "prolog_answer": list(self.prolog_answer),
            "final_raw": self.final_raw,
            "final_answer": self.final_answer,
            "error_category": self.error_category.value,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "warnings": list(self.warnings),
            "usage": self.usage,
            "retrieval_calls": self.retrieval_calls,
            "llm_calls": self.llm_calls,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)


# -- final prompt -------------------------------------------------------------------


def render_prolog_answer(values) -> str:
    return ", ".join(render_constant(v) if not isinstance(v, str) else v for v in values)


def build_final_prompt(notes, passages, prolog_answer, question: str, fewshot: str, ablate=frozenset()) -> str:
    """Final chain-of-thought prompt; ablated parts are left empty."""
    ablate = frozenset(ablate)
    return fill(
        template("final"),
        notes="" if "notes" in ablate else "\n".join(notes),
        evidence="" if "passages" in ablate else render_evidence(passages),
        answer="" if "prolog_answer" in ablate else render_prolog_answer(prolog_answer),
        examples=fewshot,
        question=question,
    )


def clean_final_answer(span: str) -> str:
    text = span.strip()
    if len(text) >= 2 and text[0] == '"' and text[-1] == '"':
        text = text[1:-1].strip()
    return text


# -- categorization -------------------------------------------------------------------


def _step_solutions(step) -> int:
    if isinstance(step, StepArtifact):
        return len(step.solution_after)
    return len(step["solution_after"])


def _step_parse_failures(step) -> int:
    if isinstance(step, StepArtifact):
        return step.parse_failures
    return sum(1 for i in step["instantiations"] if i["parse_failure"])


def categorize(record: RunRecord) -> ErrorCategory:
    if record.parse_error is not None:
        return ErrorCategory.QUERY_PARSE
    if not record.steps:
        return ErrorCategory.NONE
    sizes = [_step_solutions(s) for s in record.steps]
    final_empty = sizes[-1] == 0
    if final_empty and any(_step_parse_failures(s) for s in record.steps):
        return ErrorCategory.EXECUTION_PARSE
    if any(n == 0 for n in sizes[:-1]):
        return ErrorCategory.INTERMEDIATE_PREDICATE
    if final_empty:
        return ErrorCategory.FINAL_PREDICATE
    return ErrorCategory.NONE


# -- orchestration -------------------------------------------------------------------


def _passage_entries(chunk_ids, provider: EvidenceProvider, cap: int) -> tuple[list, list]:
    ids = list(dict.fromkeys(chunk_ids))
    if cap:
        ids = ids[:cap]
    chunks = [provider.chunk(i) for i in ids]
    return chunks, [{"chunk_id": c.chunk_id, "title": c.title, "text": c.text} for c in chunks]


def answer_question(question: str, config: Config, backends: Backends, question_id: str = "",
                    gold_answers=(), gold_docs=None) -> RunRecord:
    """Run the whole method on one question and return its record.

    Transport failures (and script misses) end the run early with
    ``aborted`` set; everything gathered until then stays on the record.
    """
    record = RunRecord(question_id, question, list(gold_answers))
    ledger = UsageLedger()
    llm = MeteredLlm(backends.llm, ledger, config.max_tokens, config.temperature)
    provider = backends.evidence.fork()
    if config.mode == "incontext" and gold_docs:
        provider = provider.restricted(gold_docs)
    settings = SliceSettings(backends.fewshot.slice, config.quote_strings, config.max_instantiations, config.step_workers)
    kb = KnowledgeBase()
    defs = DefinitionTable()
    chunk_ids: list[str] = []
    prolog_values: list[Term] = []
    final_called = False

    try:
        resp = llm(build_query_generation_prompt(question, backends.fewshot.querygen), "querygen")
        record.querygen_raw = resp.text
        try:
            query, target, defs = parse_query_generation_response(resp.text)
        except (MalformedResponse, ParseError) as exc:
            record.parse_error = {
                "label": QUERY_PARSE_LABEL,
                "kind": exc.kind.value if isinstance(exc, ParseError) else "MalformedResponse",
                "message": str(exc),
            }
            if config.fallback_retrieval:
                chunk_ids.extend(provider(question).chunk_ids)
        else:
            record.query, record.target, record.definitions = print_query(query), target, defs.to_json()
            goals = query.goals
            if len(goals) > config.max_goals:
                record.warnings.append(f"query has {len(goals)} goals; only the first {config.max_goals} are run")
                goals = goals[: config.max_goals]
            state = EMPTY_STATE
            for t in range(1, len(goals) + 1):
                state, art = slice_step(goals[t - 1], state, kb, defs, provider, llm, goals[:t], settings, t)
                record.steps.append(art)
                for inst in art.instantiations:
                    chunk_ids.extend(inst.chunk_ids)
            if len(goals) == len(query.goals):
                prolog_values = state.values(target)
        record.prolog_answer = [print_term(v) for v in prolog_values]
        record.notes = [statement_for(defs, fact) for fact in kb]
        passages, record.passages = _passage_entries(chunk_ids, provider, config.max_passages)
        record.final_prompt = build_final_prompt(
            record.notes, passages, prolog_values, question, backends.fewshot.final, config.ablated
        )
        final_called = True
        resp = llm(record.final_prompt, "final")
        record.final_raw = resp.text
        try:
            record.final_answer = clean_final_answer(extract_answer_span(resp.text))
        except MissingAnswerTags:
            record.warnings.append("final response has no answer tags")
            record.final_answer = ""
    except (TransportError, ScriptMiss) as exc:
        record.aborted = True
        record.abort_reason = f"{type(exc).__name__}: {exc}"
        logger.error("question %s aborted: %s", question_id or question, record.abort_reason)
        if not final_called:
            record.notes = [statement_for(defs, fact) for fact in kb]
            _, record.passages = _passage_entries(chunk_ids, provider, config.max_passages)

    record.error_category = categorize(record)
    record.usage = ledger.to_json()
    record.llm_calls = len(ledger)
    record.retrieval_calls = provider.retrieval_calls
    return record


# -- trace ---------------------------------------------------------------------------


def _display(printed: str) -> str:
    return printed[1:-1] if len(printed) >= 2 and printed[0] == printed[-1] == '"' else printed


def format_trace(record: RunRecord) -> str:
    """Human-readable trace: question, query, definitions, sub-queries, notes, answers."""
    data = record.to_json()
    titles = {p["chunk_id"]: p["title"] for p in data["passages"]}
    out = ["Question", data["question"], "", "Query"]
    out.append(data["query"] if data["query"] is not None else f"<{data['parse_error']['label']}: {data['parse_error']['message']}>")
    out += ["", "Definitions"]
    for d in data["definitions"]:
        head = f"{d['predicate']}({', '.join('<' + s + '>' for s in d['slots'])})"
        out.append(f"{head} -> {d['statement']} ; {d['question']}")
    n = 0
    for step in data["steps"]:
        for inst in step["instantiations"]:
            if inst["raw"] is None and inst["error"] is None:
                continue
            n += 1
            out += ["", f"Sub-Query {n}: {inst['question']}"]
            out.append("    Retrieved passages: " + ", ".join(titles.get(c, c) for c in inst["chunk_ids"]))
            if inst["error"]:
                out.append(f"    Error: {inst['error']}")
            elif inst["verdict"] is not None:
                out.append(f"    Answer: {'true' if inst['verdict'] else 'false'}")
            else:
                out.append("    Answer: " + ", ".join(_display(a) for a in inst["answers"] or []))
    out += ["", "Notes", *data["notes"], ""]
    out.append("Prolog Answer: " + ", ".join(_display(a) for a in data["prolog_answer"]))
    out.append(f"Final Answer: {data['final_answer']}")
    if data["aborted"]:
        out.append(f"Aborted: {data['abort_reason']}")
    return "\n".join(out) + "\n"
