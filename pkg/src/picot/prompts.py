"""Prompt templates, prompt builders and response parsers."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from typing import Iterable

from .definitions import DefinitionTable, parse_definitions
from .prolog.parser import ParseError, parse_query
from .prolog.terms import Query

QUERY_PARSE_LABEL = "Prolog query parsing error"

_SLOT_RE = re.compile(r"\{(examples|question|evidence|notes|answer)\}")
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.S)
_SECTION_RE = re.compile(r"\*\*\s*(Query|Target|Definitions?)\s*:\s*\*\*", re.I)
_FENCE_RE = re.compile(r"^```[A-Za-z]*\s*$", re.M)


class MalformedResponse(ValueError):
    """The query-generation response lacks a required section."""


class MissingAnswerTags(ValueError):
    """A response contains no ``<answer>...</answer>`` span."""


@lru_cache(maxsize=None)
def load_text(name: str) -> str:
    text = resources.files("picot.data").joinpath(name).read_text(encoding="utf-8")
    return text.removesuffix("\n")


def template(role: str) -> str:
    return load_text(f"template_{role}.txt")


def default_fewshot(role: str) -> str:
    return load_text(f"fewshot_{role}.txt")


def fill(template_text: str, **values: str) -> str:
    """Single-pass slot substitution; substituted text is never rescanned."""

    def repl(m):
        return values[m.group(1)] if m.group(1) in values else m.group(0)

    return _SLOT_RE.sub(repl, template_text)


def render_evidence(chunks: Iterable) -> str:
    return "\n\n".join(f"{c.title}\n{c.text}" for c in chunks)


def build_query_generation_prompt(question: str, fewshot_examples: str) -> str:
    if not question.strip():
        raise ValueError("empty question")
    return fill(template("querygen"), examples=fewshot_examples, question=question)


def build_slice_prompt(evidence, question: str, fewshot_examples: str) -> str:
    chunks = evidence.chunks if hasattr(evidence, "chunks") else evidence
    return fill(template("slice"), evidence=render_evidence(chunks), examples=fewshot_examples, question=question)


def _sections(text: str) -> dict[str, str]:
    """Content of the last occurrence of each ``**Name:**`` marker."""
    marks = [(m.start(), m.end(), m.group(1).lower().rstrip("s")) for m in _SECTION_RE.finditer(text)]
    out: dict[str, str] = {}
    for i, (_, end, name) in enumerate(marks):
        stop = marks[i + 1][0] if i + 1 < len(marks) else len(text)
        out[name] = text[end:stop]
    return out


def _clean(section: str) -> str:
    return _FENCE_RE.sub("", section).strip().strip("`").strip()


def parse_query_generation_response(text: str) -> tuple[Query, str, DefinitionTable]:
    """Extract and parse the query, target and definitions sections.

    Raises :class:`MalformedResponse` for a missing section; parse failures
    surface as :class:`ParseError` carrying ``label``.
    """
    sections = _sections(text)
    for name in ("query", "target", "definition"):
        if name not in sections:
            raise MalformedResponse(f"response has no **{name.capitalize()}:** section")
    query_text = _clean(sections["query"])
    target = _clean(sections["target"])
    if not target:
        raise MalformedResponse("empty **Target:** section")
    try:
        query = parse_query(query_text, target)
        defs = parse_definitions(_clean(sections["definition"]))
    except ParseError as exc:
        exc.label = QUERY_PARSE_LABEL
        raise
    return query, query.target.name, defs


def extract_answer_span(text: str) -> str:
    spans = _ANSWER_RE.findall(text)
    if not spans:
        raise MissingAnswerTags("no <answer>...</answer> span in response")
    return spans[-1]
