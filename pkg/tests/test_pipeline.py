import json

import pytest

from picot.config import Config
from picot.evalkit import exact_match
from picot.llm import ScriptEntry, ScriptedBackend, TransportError, Usage, match_key
from picot.pipeline import (
    Backends,
    ErrorCategory,
    FewShot,
    RunRecord,
    answer_question,
    build_final_prompt,
    categorize,
    clean_final_answer,
    format_trace,
)
from picot.prompts import fill, template
from picot.retrieval import Chunk, EvidenceProvider, InContext, Rag, build_index

from helpers import FIXTURES, REPLAY_NAMES, REPLAYS, load_replay

SNAPSHOTS = FIXTURES / "snapshots"


def script_usage(name):
    totals = [0, 0, 0]
    for line in (REPLAYS / name / "script.jsonl").read_text().splitlines():
        u = json.loads(line)["usage"]
        totals[0] += u["prompt_tokens"]
        totals[1] += u["completion_tokens"]
        totals[2] += u.get("cached_tokens", 0)
    return dict(zip(("prompt_tokens", "completion_tokens", "cached_tokens"), totals))


@pytest.mark.parametrize("name", REPLAY_NAMES)
def test_replay(name):
    cfg, backends, expected = load_replay(name)
    record = answer_question(expected["question"], cfg, backends, expected["id"], expected["answers"])
    assert not record.aborted
    assert record.final_answer == expected["final_answer"]
    assert record.notes == expected["notes"]
    assert record.prolog_answer == expected["prolog_answer"]
    assert exact_match(record.final_answer, expected["answers"]) == 1
    assert record.error_category is ErrorCategory.NONE
    step_calls = sum(i.called_llm for s in record.steps for i in s.instantiations)
    assert record.llm_calls == 1 + step_calls + 1 == expected["llm_calls"]
    assert record.usage["totals"] == script_usage(name) == expected["usage_totals"]
    assert record.usage["calls"] == record.llm_calls


@pytest.mark.parametrize("name", REPLAY_NAMES)
def test_replay_is_byte_stable(name):
    cfg, backends, expected = load_replay(name)
    a = answer_question(expected["question"], cfg, backends, expected["id"], expected["answers"]).to_line()
    b = answer_question(expected["question"], cfg, backends, expected["id"], expected["answers"]).to_line()
    assert a == b


@pytest.mark.parametrize("name", REPLAY_NAMES)
def test_replay_passages_cover_steps(name):
    cfg, backends, expected = load_replay(name)
    record = answer_question(expected["question"], cfg, backends).to_json()
    ids = [p["chunk_id"] for p in record["passages"]]
    assert len(ids) == len(set(ids))
    used = [c for s in record["steps"] for i in s["instantiations"] for c in i["chunk_ids"]]
    assert ids == list(dict.fromkeys(used))
    questions = {i["question"] for s in record["steps"] for i in s["instantiations"] if i["chunk_ids"]}
    assert record["retrieval_calls"] == len(questions)


def test_trace_layout():
    cfg, backends, expected = load_replay("2wiki")
    trace = format_trace(answer_question(expected["question"], cfg, backends))
    for heading in ("Question", "Query", "Definitions", "Sub-Query 1:", "Sub-Query 2:", "Notes"):
        assert heading in trace
    assert "Prolog Answer: Theuderic I" in trace
    assert trace.rstrip().endswith("Final Answer: Theuderic I")


# -- scripted one-off questions ------------------------------------------------------

CORPUS = [
    Chunk("hh#0", "hh", "Hawker Hurricane", "The Hawker Hurricane served with the Royal Air Force (RAF).", 9),
    Chunk("fl#0", "fl", "No. 1455 Flight", "No. 1455 Flight was part of No. 11 Group RAF.", 9),
]


def make_backends(entries, mode=Rag(2)):
    script = ScriptedBackend(ScriptEntry(match_key(role, q), text, Usage(100, 10, 0)) for role, q, text in entries)
    index = build_index(CORPUS)
    return Backends(script, EvidenceProvider(mode, index=index, chunks=CORPUS), FewShot("QG", "SL", "FINAL-SHOTS"))


PART_OF_Q = "What were both Hawker Hurricane and No. 1455 Flight a part of?"
PART_OF_GEN = (
    '**Query:** part_of("Hawker Hurricane", A1),\npart_of("No. 1455 Flight", A2),\n(A1 == A2).\n'
    "**Target:** A1\n**Definition:**\n"
    "part_of(<literal>, <answer>) -> <literal> is part of <answer>. ; What is <literal> part of?"
)
PART_OF_SCRIPT = [
    ("querygen", PART_OF_Q, PART_OF_GEN),
    ("slice", "What is Hawker Hurricane part of?",
     '<answer>"Royal Air Force (RAF)", "Royal Yugoslav Air Force (VVKJ)", "Royal Canadian Air Force"</answer>'),
    ("slice", "What is No. 1455 Flight part of?", '<answer>"No. 11 Group RAF"</answer>'),
    ("final", PART_OF_Q, "Both belong to the RAF. <answer>Royal Air Force</answer>"),
]


def test_final_predicate_existence():
    record = answer_question(PART_OF_Q, Config(), make_backends(PART_OF_SCRIPT), gold_answers=["Royal Air Force"])
    assert record.error_category is ErrorCategory.FINAL_PREDICATE
    assert record.prolog_answer == []
    assert len(record.notes) == 4
    assert "Previous Answer: <answer></answer>" in record.final_prompt
    assert record.final_answer == "Royal Air Force"


def test_query_parse_error_falls_back_to_retrieval():
    gen = PART_OF_GEN.replace("(A1 == A2).", "\\+ other(A1, A2).")
    script = [("querygen", PART_OF_Q, gen), ("final", PART_OF_Q, "<answer>Royal Air Force</answer>")]
    record = answer_question(PART_OF_Q, Config(), make_backends(script))
    assert record.error_category is ErrorCategory.QUERY_PARSE
    assert record.parse_error["kind"] == "NegationUnsupported"
    assert record.parse_error["label"] == "Prolog query parsing error"
    assert record.steps == [] and record.notes == []
    assert record.retrieval_calls == 1
    assert {p["chunk_id"] for p in record.passages} == {"hh#0", "fl#0"}
    assert record.llm_calls == 2


def test_query_parse_error_without_fallback():
    gen = PART_OF_GEN.replace("(A1 == A2).", "\\+ other(A1, A2).")
    script = [("querygen", PART_OF_Q, gen), ("final", PART_OF_Q, "<answer></answer>")]
    cfg = Config(fallback_retrieval=False)
    record = answer_question(PART_OF_Q, cfg, make_backends(script))
    assert record.passages == [] and record.retrieval_calls == 0


def test_intermediate_and_execution_parse_categories():
    script = [
        ("querygen", PART_OF_Q, PART_OF_GEN),
        ("slice", "What is Hawker Hurricane part of?", "<answer></answer>"),
        ("final", PART_OF_Q, "<answer></answer>"),
    ]
    record = answer_question(PART_OF_Q, Config(), make_backends(script))
    assert record.error_category is ErrorCategory.INTERMEDIATE_PREDICATE
    # only the first step calls the LLM; the second has nothing to instantiate
    assert record.llm_calls == 3

    script[1] = ("slice", "What is Hawker Hurricane part of?", '<answer>"RAF" or "the RAF"</answer>')
    record = answer_question(PART_OF_Q, Config(), make_backends(script))
    assert record.error_category is ErrorCategory.EXECUTION_PARSE


def test_transport_error_aborts():
    class Flaky:
        def __init__(self, inner):
            self.inner, self.calls = inner, 0

        def complete(self, req):
            self.calls += 1
            if req.tag == "final":
                raise TransportError("connection refused")
            return self.inner.complete(req)

    backends = make_backends(PART_OF_SCRIPT)
    backends.llm = Flaky(backends.llm)
    record = answer_question(PART_OF_Q, Config(), backends)
    assert record.aborted
    assert "connection refused" in record.abort_reason
    assert record.final_answer == ""
    assert len(record.notes) == 4
    assert record.llm_calls == 3


def test_missing_final_tags():
    script = PART_OF_SCRIPT[:-1] + [("final", PART_OF_Q, "I cannot tell.")]
    record = answer_question(PART_OF_Q, Config(), make_backends(script))
    assert record.final_answer == ""
    assert not record.aborted
    assert record.warnings


def test_in_context_mode_uses_whole_corpus():
    backends = make_backends(PART_OF_SCRIPT, mode=InContext())
    record = answer_question(PART_OF_Q, Config(mode="incontext"), backends)
    assert record.retrieval_calls == 0
    for step in record.steps:
        for inst in step.instantiations:
            assert inst.chunk_ids == ["hh#0", "fl#0"]


def test_in_context_mode_with_gold_docs():
    backends = make_backends(PART_OF_SCRIPT, mode=InContext())
    record = answer_question(PART_OF_Q, Config(mode="incontext"), backends, gold_docs=["fl"])
    assert [p["chunk_id"] for p in record.passages] == ["fl#0"]


def test_categorize_clean_record():
    record = RunRecord("id", "q")
    assert categorize(record) is ErrorCategory.NONE


def test_clean_final_answer():
    assert clean_final_answer(' "Tonks" ') == "Tonks"
    assert clean_final_answer("Yes") == "Yes"


# -- final prompt and ablations --------------------------------------------------------

NOTES = ["The spouse of Wisigard is Theudebert I.", "The father of Theudebert I is Theuderic I."]
PASSAGES = [Chunk("t#0", "t", "Theudebert I", "Theudebert I was a Frankish king.", 6)]


def test_final_prompt_with_answer():
    prompt = build_final_prompt(NOTES, PASSAGES, ["Tonks"], "Who?", "SHOTS")
    assert "Previous Answer: <answer>Tonks</answer>" in prompt
    assert "(BEGIN NOTES)\n" + "\n".join(NOTES) + "\n(END NOTES)" in prompt
    assert "Theudebert I\nTheudebert I was a Frankish king." in prompt


def test_final_prompt_multiple_answers():
    prompt = build_final_prompt([], [], ["A", "B"], "Who?", "")
    assert "Previous Answer: <answer>A, B</answer>" in prompt


def test_final_prompt_empty_blocks_keep_markers():
    prompt = build_final_prompt([], [], [], "Who?", "")
    assert "(BEGIN NOTES)\n\n(END NOTES)" in prompt
    assert "(BEGIN EVIDENCE)\n\n(END EVIDENCE)" in prompt
    assert "Previous Answer: <answer></answer>" in prompt


def test_ablate_prolog_answer_snapshot():
    prompt = build_final_prompt(NOTES, PASSAGES, ["Theuderic I"], "Who is Wisigard's father-in-law?", "SHOTS",
                                {"prolog_answer"})
    assert "Previous Answer: <answer></answer>" in prompt
    assert "Theuderic I" not in prompt.split("Question:")[-1]
    assert prompt == (SNAPSHOTS / "final_ablate_prolog_answer.txt").read_text(encoding="utf-8")


def test_ablate_all_snapshot():
    prompt = build_final_prompt(NOTES, PASSAGES, ["Theuderic I"], "Who is Wisigard's father-in-law?", "SHOTS",
                                {"passages", "notes", "prolog_answer"})
    bare = fill(template("final"), notes="", evidence="", answer="", examples="SHOTS",
                question="Who is Wisigard's father-in-law?")
    assert prompt == bare
    for text in NOTES + ["Frankish", "Theuderic"]:
        assert text not in prompt
    assert prompt == (SNAPSHOTS / "final_ablate_all.txt").read_text(encoding="utf-8")


def test_ablation_flag_reaches_final_prompt():
    cfg, backends, expected = load_replay("2wiki")
    cfg.ablation["notes"] = True
    record = answer_question(expected["question"], cfg, backends)
    assert "(BEGIN NOTES)\n\n(END NOTES)" in record.final_prompt
    assert "Previous Answer: <answer>Theuderic I</answer>" in record.final_prompt
