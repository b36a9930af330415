"""One SLICE step: classify a goal, ask the LLM per instantiation, re-solve."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from .definitions import (
    DefinitionMissing,
    DefinitionTable,
    RenderError,
    fact_from_answer,
    parse_answer_list,
    parse_verdict,
    render_entailment_question,
    render_question,
    render_statement,
)
from .llm import MeteredLlm
from .prolog.engine import (
    ExecutionDefect,
    Fact,
    KnowledgeBase,
    SolutionSet,
    resolve,
    solve,
    solve_prefix_with_defects,
)
from .prolog.parser import ParseError, print_goal, print_term
from .prolog.terms import Aggregate, Atom, is_ground
from .prompts import MissingAnswerTags, build_slice_prompt, extract_answer_span

logger = logging.getLogger(__name__)

DEFAULT_MAX_INSTANTIATIONS = 50


class StepKind(str, enum.Enum):
    EXTRACTION = "Extraction"
    VERIFICATION = "Verification"
    ENGINE_ONLY = "EngineOnly"


@dataclass
class Instantiation:
    """One LLM round trip (or an attempt that never reached the LLM)."""

    kind: StepKind
    goal: str
    question: str = ""
    chunk_ids: list = field(default_factory=list)
    raw: Optional[str] = None
    answers: Optional[list] = None
    verdict: Optional[bool] = None
    facts: list = field(default_factory=list)
    error: Optional[str] = None
    parse_failure: bool = False

    @property
    def called_llm(self) -> bool:
        return self.raw is not None

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "goal": self.goal,
            "question": self.question,
            "chunk_ids": list(self.chunk_ids),
            "raw": self.raw,
            "answers": self.answers,
            "verdict": self.verdict,
            "facts": list(self.facts),
            "error": self.error,
            "parse_failure": self.parse_failure,
        }


@dataclass
class StepArtifact:
    step_index: int
    goal: object
    kind: StepKind
    instantiations: list = field(default_factory=list)
    facts_added: list = field(default_factory=list)
    solution_after: SolutionSet = field(default_factory=SolutionSet)
    defects: list = field(default_factory=list)
    kb_size_after: int = 0
    warnings: list = field(default_factory=list)

    @property
    def llm_calls(self) -> int:
        return sum(1 for i in self.instantiations if i.called_llm)

    @property
    def parse_failures(self) -> int:
        return sum(1 for i in self.instantiations if i.parse_failure)

    def to_json(self) -> dict:
        return {
            "step_index": self.step_index,
            "goal": print_goal(self.goal),
            "kind": self.kind.value,
            "instantiations": [i.to_json() for i in self.instantiations],
            "facts_added": [f.to_text() for f in self.facts_added],
            "solution_after": self.solution_after.to_json(),
            "defects": [d.to_json() for d in self.defects],
            "kb_size_after": self.kb_size_after,
            "warnings": list(self.warnings),
        }


# -- classification ---------------------------------------------------------------


def _instantiate(atom: Atom, bindings) -> Atom:
    return Atom(atom.predicate, tuple(resolve(a, bindings) for a in atom.args))


def _needs_extraction(inner: Atom, prior: SolutionSet, kb: Optional[KnowledgeBase]) -> list[Atom]:
    """Distinct instantiations of an aggregate's inner atom with no facts yet."""
    out: dict[Atom, None] = {}
    for sol in prior:
        inst = _instantiate(inner, sol)
        if kb is None or not solve([inst], kb):
            out.setdefault(inst, None)
    return list(out)


def classify(goal, prior: SolutionSet, kb: Optional[KnowledgeBase] = None) -> StepKind:
    """Step kind for ``goal`` given the previous solution state.

    An Atom is a verification when every prior solution grounds it and an
    extraction otherwise. An aggregate is an extraction while its inner atom
    still lacks facts for some outer binding (always, when ``kb`` is None).
    """
    if isinstance(goal, Atom):
        rows = list(prior) or [{}]
        grounded = all(is_ground(resolve(a, sol)) for sol in rows for a in goal.args)
        return StepKind.VERIFICATION if grounded else StepKind.EXTRACTION
    if isinstance(goal, Aggregate) and isinstance(goal.inner, Atom):
        if kb is None or _needs_extraction(goal.inner, prior, kb):
            return StepKind.EXTRACTION
    return StepKind.ENGINE_ONLY


# -- one step ---------------------------------------------------------------------


@dataclass
class SliceSettings:
    fewshot: str = ""
    quote_strings: bool = False
    max_instantiations: int = DEFAULT_MAX_INSTANTIATIONS
    workers: int = 1


def _pick_slot(atom: Atom, defs: DefinitionTable) -> Optional[int]:
    """Definition's answer position if unbound, else the leftmost unbound one."""
    unbound = [i for i, a in enumerate(atom.args) if not is_ground(a)]
    if not unbound:
        return None
    try:
        pos = defs.lookup(atom.predicate, atom.arity).answer_position
    except DefinitionMissing:
        pos = None
    return pos if pos in unbound else unbound[0]


def _prepare(atom: Atom, defs: DefinitionTable, settings: SliceSettings) -> Instantiation:
    ground = all(is_ground(a) for a in atom.args)
    kind = StepKind.VERIFICATION if ground else StepKind.EXTRACTION
    inst = Instantiation(kind, print_goal(atom))
    try:
        defn = defs.lookup(atom.predicate, atom.arity)
        if ground:
            statement = render_statement(defn, Fact(atom.predicate, atom.args))
            inst.question = render_entailment_question(statement)
        else:
            inst.question = render_question(defn, atom, {}, settings.quote_strings)
    except (DefinitionMissing, RenderError, ValueError) as exc:
        inst.error = str(exc)
    return inst


def _ingest(inst: Instantiation, atom: Atom, defs: DefinitionTable, text: str) -> list[Fact]:
    inst.raw = text
    try:
        span = extract_answer_span(text)
        if inst.kind is StepKind.VERIFICATION:
            inst.verdict = parse_verdict(span)
            return [Fact(atom.predicate, atom.args)] if inst.verdict else []
        terms = parse_answer_list(span)
    except (MissingAnswerTags, ParseError) as exc:
        inst.error = f"{type(exc).__name__}: {exc}"
        inst.parse_failure = True
        return []
    inst.answers = [print_term(t) for t in terms]
    slot = _pick_slot(atom, defs)
    facts = []
    for term in terms:
        filled = fact_from_answer(atom, {}, slot, term)
        if all(is_ground(a) for a in filled.args):
            facts.append(Fact(filled.predicate, filled.args))
    return facts


def slice_step(goal, prior: SolutionSet, kb: KnowledgeBase, defs: DefinitionTable,
               evidence_provider: Callable, llm: MeteredLlm, prefix, settings: Optional[SliceSettings] = None,
               step_index: Optional[int] = None) -> tuple[SolutionSet, StepArtifact]:
    """Run one SLICE step and return the new state S_t with its artifact.

    ``prefix`` holds goals 1..t with ``goal`` last. ``kb`` is mutated.
    """
    settings = settings or SliceSettings()
    prefix = tuple(prefix)
    t = len(prefix)
    kind = classify(goal, prior, kb)
    art = StepArtifact(step_index if step_index is not None else t, goal, kind)

    if kind is StepKind.EXTRACTION and isinstance(goal, Aggregate):
        atoms = _needs_extraction(goal.inner, prior, kb)
    elif kind is not StepKind.ENGINE_ONLY:
        atoms = list(dict.fromkeys(_instantiate(goal, sol) for sol in prior))
    else:
        atoms = []
    if len(atoms) > settings.max_instantiations:
        art.warnings.append(f"fan-out {len(atoms)} truncated to {settings.max_instantiations}")
        logger.warning("step %d: %s", art.step_index, art.warnings[-1])
        atoms = atoms[: settings.max_instantiations]

    insts = [_prepare(a, defs, settings) for a in atoms]
    pending = [i for i, inst in enumerate(insts) if inst.error is None]
    evidence = {}
    for i in pending:
        evidence[i] = evidence_provider(insts[i].question)
        insts[i].chunk_ids = evidence[i].chunk_ids

    def ask(i):
        return llm.fetch(build_slice_prompt(evidence[i], insts[i].question, settings.fewshot), "slice")

    responses = []
    try:
        if settings.workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=settings.workers) as pool:
                for future in [pool.submit(ask, i) for i in pending]:
                    responses.append(future.result())
        else:
            for i in pending:
                responses.append(ask(i))
    except Exception:
        # calls that did complete still cost tokens
        for resp in responses:
            llm.record("slice", resp)
        raise

    # ingestion and accounting follow instantiation order regardless of workers
    for i, resp in zip(pending, responses):
        llm.record("slice", resp)
        for fact in _ingest(insts[i], atoms[i], defs, resp.text):
            insts[i].facts.append(fact.to_text())
            if kb.add(fact):
                art.facts_added.append(fact)

    art.instantiations = insts
    solutions, defects = solve_prefix_with_defects(prefix, t, kb)
    art.solution_after = solutions
    art.defects = list(defects)
    art.kb_size_after = len(kb)
    return solutions, art


__all__ = [
    "DEFAULT_MAX_INSTANTIATIONS",
    "ExecutionDefect",
    "Instantiation",
    "SliceSettings",
    "StepArtifact",
    "StepKind",
    "classify",
    "slice_step",
]
