"""Shared test helpers: fixture paths, replay setup and random instances."""

import itertools
import json
import random
from pathlib import Path

from picot.config import load_config
from picot.definitions import parse_definitions, render_entailment_question, render_question, render_statement
from picot.llm import MeteredLlm, ScriptedBackend, ScriptEntry, Usage, UsageLedger, match_key
from picot.pipeline import Backends
from picot.prolog import (
    EMPTY_STATE,
    Atom,
    DateConst,
    Fact,
    IntConst,
    KnowledgeBase,
    StdGt,
    StdLt,
    StringConst,
    StructEq,
    Unify,
    Variable,
    print_term,
)
from picot.retrieval import Chunk, EvidenceProvider, InContext, Rag, build_index, ingest_corpus
from picot.slice import SliceSettings, slice_step

FIXTURES = Path(__file__).parent / "fixtures"
REPLAYS = FIXTURES / "replays"
REPLAY_NAMES = ("2wiki", "msq", "hp")

CONSTANTS = [
    StringConst("Lupin"),
    StringConst("Tonks"),
    StringConst("Hogwarts"),
    IntConst(15),
    IntConst(-3),
    IntConst(20),
    DateConst(1997, 6, 26),
    DateConst(985, 4, 2),
]
PREDICATES = {"p": 1, "q": 2, "r": 2}


def query_corpus():
    return json.loads((FIXTURES / "query_corpus.json").read_text(encoding="utf-8"))


def load_replay(name):
    """(config, backends, expected) for one shipped replay directory."""
    d = REPLAYS / name
    cfg = load_config(d / "config.toml")
    index = build_index(ingest_corpus(cfg.corpus))
    backends = Backends(ScriptedBackend.from_file(cfg.script), EvidenceProvider(Rag(cfg.top_k), index=index))
    expected = json.loads((d / "expected.json").read_text(encoding="utf-8"))
    return cfg, backends, expected


def random_kb(rng, max_facts=200):
    kb = KnowledgeBase()
    target = rng.randint(0, max_facts)
    for _ in range(target * 2):
        if len(kb) >= target:
            break
        pred = rng.choice(sorted(PREDICATES))
        kb.add(Fact(pred, tuple(rng.choice(CONSTANTS) for _ in range(PREDICATES[pred]))))
    return kb


def random_conjunctive_query(rng, max_vars=6):
    """A safe conjunctive query: comparisons only touch bound variables.

    Unify may bind one fresh variable to a bound variable or a constant.
    """
    names = [chr(ord("A") + i) for i in range(max_vars)]
    fresh = iter(names)
    bound = []
    used = 0
    goals = []

    def arg(allow_new=True):
        nonlocal used
        roll = rng.random()
        if bound and roll < 0.45:
            return rng.choice(bound)
        if allow_new and used < max_vars and roll < 0.85:
            used += 1
            v = Variable(next(fresh))
            return v
        if roll < 0.92 or used >= max_vars:
            return rng.choice(CONSTANTS)
        used += 1  # each anonymous occurrence is its own variable
        return Variable("_")

    for _ in range(rng.randint(1, 5)):
        kind = rng.random()
        if kind < 0.65 or not bound:
            pred = rng.choice(sorted(PREDICATES))
            args = [arg() for _ in range(PREDICATES[pred])]
            if bound and not any(a in bound for a in args):
                # keep queries mostly connected so solution sets stay small
                args[rng.randrange(len(args))] = rng.choice(bound)
            args = tuple(args)
            goals.append(Atom(pred, args))
            for a in args:
                if isinstance(a, Variable) and not a.anonymous and a not in bound:
                    bound.append(a)
        elif kind < 0.8 and used < max_vars:
            used += 1
            v = Variable(next(fresh))
            other = rng.choice(bound) if rng.random() < 0.5 else rng.choice(CONSTANTS)
            goals.append(Unify(v, other) if rng.random() < 0.5 else Unify(other, v))
            bound.append(v)
        else:
            op = rng.choice([StructEq, StdGt, StdLt])
            lhs = rng.choice(bound)
            rhs = rng.choice(bound) if rng.random() < 0.6 else rng.choice(CONSTANTS)
            goals.append(op(lhs, rhs) if rng.random() < 0.5 else op(rhs, lhs))
    return goals


def random_instances(n, seed=0):
    rng = random.Random(seed)
    for _ in range(n):
        yield random_conjunctive_query(rng), random_kb(rng)


# -- randomized scripted SLICE runs -------------------------------------------------

X, Y = Variable("X"), Variable("Y")

RANDOM_DEFS = parse_definitions(
    "p(<answer>) -> <answer> has property p. ; Which things have property p?\n"
    "q(<literal>, <answer>) -> The q of <literal> is <answer>. ; What is the q of <literal>?\n"
    "r(<literal>, <answer>) -> The r of <literal> is <answer>. ; What is the r of <literal>?"
)


def world_script(rng):
    """Script answering every renderable sub-question from a hidden world kb."""
    world = set()
    for pred, arity in PREDICATES.items():
        for args in itertools.product(CONSTANTS, repeat=arity):
            if rng.random() < 0.25:
                world.add(Fact(pred, args))
    entries = []

    def answer(values):
        roll = rng.random()
        if roll < 0.05:
            return '"broken" "span'
        if roll < 0.1:
            return ""
        return ", ".join(print_term(v) for v in values)

    for pred, arity in PREDICATES.items():
        d = RANDOM_DEFS.lookup(pred, arity)
        for args in itertools.product(CONSTANTS, repeat=arity):
            fact = Fact(pred, args)
            verdict = "true" if fact in world else "false"
            question = render_entailment_question(render_statement(d, fact))
            entries.append(ScriptEntry(match_key("slice", question), f"<answer>{verdict}</answer>", Usage(40, 2, 10)))
        if arity == 1:
            found = [f.args[0] for f in sorted(world, key=repr) if f.predicate == pred]
            question = render_question(d, Atom(pred, (X,)))
            entries.append(ScriptEntry(match_key("slice", question), f"<answer>{answer(found)}</answer>", Usage(60, 8, 0)))
        else:
            for c in CONSTANTS:
                found = [f.args[1] for f in sorted(world, key=repr) if f.predicate == pred and f.args[0] == c]
                question = render_question(d, Atom(pred, (c, Y)))
                entries.append(ScriptEntry(match_key("slice", question), f"<answer>{answer(found)}</answer>", Usage(60, 8, 0)))
    return ScriptedBackend(entries)


def chain_query(rng):
    """Left-to-right query whose atoms can always be asked in order."""
    names = iter("ABCDEF")
    first = Variable(next(names))
    goals = [Atom("p", (first,)) if rng.random() < 0.3 else Atom(rng.choice("qr"), (rng.choice(CONSTANTS), first))]
    bound = [first]
    for _ in range(rng.randint(1, 4)):
        roll = rng.random()
        src = rng.choice(bound)
        if roll < 0.45 and len(bound) < 6:
            v = Variable(next(names))
            goals.append(Atom(rng.choice("qr"), (src, v)))
            bound.append(v)
        elif roll < 0.6:
            goals.append(Atom("p", (src,)))
        elif roll < 0.8:
            other = rng.choice(bound + CONSTANTS)
            goals.append(Atom(rng.choice("qr"), (src, other)))
        else:
            goals.append(StdLt(src, rng.choice(CONSTANTS)) if rng.random() < 0.5 else StructEq(src, rng.choice(bound)))
    return goals


def slice_run(seed, workers=1):
    """One randomized scripted SLICE run: (goals, kb, artifacts, ledger)."""
    rng = random.Random(seed)
    script = world_script(rng)
    goals = chain_query(rng)
    kb = KnowledgeBase()
    llm = MeteredLlm(script, UsageLedger())
    provider = EvidenceProvider(InContext(), chunks=[Chunk("doc#0", "doc", "Doc", "Some evidence.", 2)])
    settings = SliceSettings(workers=workers)
    state, arts = EMPTY_STATE, []
    for t in range(1, len(goals) + 1):
        state, art = slice_step(goals[t - 1], state, kb, RANDOM_DEFS, provider, llm, goals[:t], settings)
        arts.append(art)
    return goals, kb, arts, llm.ledger
