"""Corpus chunking, Okapi BM25 retrieval and evidence provision."""

from __future__ import annotations

import json
import logging
import math
import re
import struct
import threading
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 100
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

INDEX_MAGIC = b"PICOTBM25\x00"
INDEX_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+")
_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    title: str
    text: str
    token_count: int


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def chunk_document(doc_id: str, title: str, text: str, chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[Chunk]:
    """Split ``text`` into consecutive chunks of at most ``chunk_size`` words.

    Chunk text is sliced from the original string, so whitespace inside a
    chunk is preserved exactly.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    spans = [m.span() for m in _WORD_RE.finditer(text)]
    if not spans:
        return []
    if len(spans) <= chunk_size:
        return [Chunk(f"{doc_id}#0", doc_id, title, text, len(spans))]
    chunks = []
    for ordinal, lo in enumerate(range(0, len(spans), chunk_size)):
        group = spans[lo : lo + chunk_size]
        body = text[group[0][0] : group[-1][1]]
        chunks.append(Chunk(f"{doc_id}#{ordinal}", doc_id, title, body, len(group)))
    return chunks


def ingest_corpus(path: Union[str, Path], chunk_size: int = DEFAULT_CHUNK_SIZE) -> list[Chunk]:
    """Read a JSON-lines corpus of ``{"id", "title", "text"}`` documents.

    Malformed lines are logged and skipped; a corpus with no valid document
    raises :class:`CorpusError`.
    """
    chunks: list[Chunk] = []
    docs = 0
    errors = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id, title, text = str(obj["id"]), str(obj.get("title", "")), obj["text"]
                if not isinstance(text, str):
                    raise TypeError("text must be a string")
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
                errors.append(f"line {lineno}: {exc}")
                logger.warning("%s line %d: %s", path, lineno, exc)
                continue
            docs += 1
            chunks.extend(chunk_document(doc_id, title, text, chunk_size))
    if docs == 0:
        raise CorpusError(f"no valid documents in {path}" + (f" ({'; '.join(errors[:3])})" if errors else ""))
    seen = set()
    for c in chunks:
        if c.chunk_id in seen:
            raise CorpusError(f"duplicate chunk id {c.chunk_id} (repeated document id?)")
        seen.add(c.chunk_id)
    return chunks


def count_documents(chunks: Iterable[Chunk]) -> int:
    return len({c.doc_id for c in chunks})


class Bm25Index:
    """Immutable Okapi BM25 index over chunks (title + text are indexed)."""

    def __init__(self, chunks: list[Chunk], postings: dict[str, tuple[np.ndarray, np.ndarray]],
                 doc_lengths: np.ndarray, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.chunks = chunks
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.k1 = float(k1)
        self.b = float(b)

    @property
    def doc_count(self) -> int:
        return len(self.doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        return float(self.doc_lengths.mean())

    def idf(self, term: str) -> float:
        df = len(self.postings[term][0]) if term in self.postings else 0
        n = self.doc_count
        return max(0.0, math.log((n - df + 0.5) / (df + 0.5) + 1.0))

    def scores(self, query: str) -> np.ndarray:
        scores = np.zeros(self.doc_count, dtype=np.float64)
        avg = self.avg_doc_length
        norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths / avg) if avg > 0 else np.full(self.doc_count, self.k1)
        for term in tokenize(query):
            if term not in self.postings:
                continue
            ords, tfs = self.postings[term]
            idf = self.idf(term)
            tf = tfs.astype(np.float64)
            scores[ords] += idf * tf * (self.k1 + 1.0) / (tf + norm[ords])
        return scores

    def search(self, query: str, k: int) -> list[tuple[Chunk, float]]:
        """Top-``k`` chunks by score; ties go to the lower chunk ordinal."""
        if k < 1:
            raise ValueError("k must be >= 1")
        terms = [t for t in tokenize(query) if t in self.postings]
        if not terms:
            return []
        scores = self.scores(query)
        matched = np.unique(np.concatenate([self.postings[t][0] for t in terms]))
        # lexsort: last key is primary
        order = np.lexsort((matched, -scores[matched]))
        return [(self.chunks[int(matched[i])], float(scores[matched[i]])) for i in order[:k]]

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        payload = {
            "k1": self.k1,
            "b": self.b,
            "chunks": [asdict(c) for c in self.chunks],
            "doc_lengths": self.doc_lengths.tolist(),
            "postings": {t: [o.tolist(), f.tolist()] for t, (o, f) in sorted(self.postings.items())},
        }
        body = zlib.compress(json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8"), 6)
        return INDEX_MAGIC + struct.pack("<HQ", INDEX_VERSION, len(body)) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bm25Index":
        if not data.startswith(INDEX_MAGIC):
            raise ValueError("not a picot BM25 index file")
        offset = len(INDEX_MAGIC)
        version, length = struct.unpack_from("<HQ", data, offset)
        if version != INDEX_VERSION:
            raise ValueError(f"unsupported index version {version}")
        body = data[offset + struct.calcsize("<HQ") :]
        if len(body) != length:
            raise ValueError("truncated index file")
        payload = json.loads(zlib.decompress(body).decode("utf-8"))
        chunks = [Chunk(**c) for c in payload["chunks"]]
        postings = {
            t: (np.asarray(o, dtype=np.int64), np.asarray(f, dtype=np.int64)) for t, (o, f) in payload["postings"].items()
        }
        return cls(chunks, postings, np.asarray(payload["doc_lengths"], dtype=np.int64), payload["k1"], payload["b"])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Bm25Index":
        return cls.from_bytes(Path(path).read_bytes())


def build_index(chunks: list[Chunk], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    if not chunks:
        raise ValueError("cannot index an empty corpus")
    raw: dict[str, tuple[list[int], list[int]]] = {}
    lengths = []
    for ordinal, chunk in enumerate(chunks):
        tokens = tokenize(f"{chunk.title} {chunk.text}")
        lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for tok, tf in counts.items():
            ords, tfs = raw.setdefault(tok, ([], []))
            ords.append(ordinal)
            tfs.append(tf)
    postings = {t: (np.asarray(o, dtype=np.int64), np.asarray(f, dtype=np.int64)) for t, (o, f) in raw.items()}
    return Bm25Index(list(chunks), postings, np.asarray(lengths, dtype=np.int64), k1, b)


# -- evidence -------------------------------------------------------------------


@dataclass(frozen=True)
class Rag:
    k: int


@dataclass(frozen=True)
class InContext:
    pass


@dataclass(frozen=True)
class EvidenceSet:
    chunks: tuple
    mode: Union[Rag, InContext]

    @property
    def chunk_ids(self) -> list[str]:
        return [c.chunk_id for c in self.chunks]


def evidence_for(question: str, mode: Union[Rag, InContext], source) -> EvidenceSet:
    """Evidence for one question: top-k search (RAG) or the whole corpus."""
    if isinstance(mode, Rag):
        return EvidenceSet(tuple(c for c, _ in source.search(question, mode.k)), mode)
    chunks = source.chunks if isinstance(source, Bm25Index) else source
    return EvidenceSet(tuple(chunks), mode)


class EvidenceProvider:
    """Per-run evidence source with a cache keyed by the exact question string.

    ``retrieval_calls`` counts cache misses in RAG mode (actual BM25 calls).
    """

    def __init__(self, mode: Union[Rag, InContext], index: Optional[Bm25Index] = None,
                 chunks: Optional[list[Chunk]] = None, cache: bool = True):
        if isinstance(mode, Rag) and index is None:
            raise ValueError("RAG mode needs an index")
        if isinstance(mode, InContext) and chunks is None:
            chunks = index.chunks if index is not None else None
            if chunks is None:
                raise ValueError("in-context mode needs a corpus")
        self.mode = mode
        self.index = index
        self.chunks = chunks
        self.cache_enabled = cache
        self._cache: dict[str, EvidenceSet] = {}
        self._lock = threading.Lock()
        self.retrieval_calls = 0

    def __call__(self, question: str) -> EvidenceSet:
        with self._lock:
            if self.cache_enabled and question in self._cache:
                return self._cache[question]
        source = self.index if isinstance(self.mode, Rag) else self.chunks
        evidence = evidence_for(question, self.mode, source)
        with self._lock:
            if isinstance(self.mode, Rag):
                self.retrieval_calls += 1
            if self.cache_enabled:
                self._cache.setdefault(question, evidence)
        return evidence

    def chunk(self, chunk_id: str) -> Chunk:
        if not hasattr(self, "_by_id"):
            source = self.chunks if self.chunks is not None else self.index.chunks
            self._by_id = {c.chunk_id: c for c in source}
        return self._by_id[chunk_id]

    def fork(self) -> "EvidenceProvider":
        """Fresh provider sharing the immutable index/corpus, with an empty cache."""
        return EvidenceProvider(self.mode, self.index, self.chunks, self.cache_enabled)

    def restricted(self, doc_ids) -> "EvidenceProvider":
        """In-context provider limited to the given documents (distractor setting)."""
        wanted = set(doc_ids)
        source = self.chunks if self.chunks is not None else self.index.chunks
        return EvidenceProvider(InContext(), chunks=[c for c in source if c.doc_id in wanted], cache=self.cache_enabled)
