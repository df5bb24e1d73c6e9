"""Per-level knowledge bases for training patterns and test-time caching.

Training KBs store deduplicated normal sub-sequences (keyed by signature,
with occurrence counts and an adjacency transition index per parent).
Test KBs cache per-chunk verdicts, summaries, embeddings, and explanations
so repeated test patterns never re-query a provider.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .decompose import Seq
from .errors import FormatError, KnowledgeBaseError
from .hierarchy import LEVELS

KB_FORMAT_VERSION = 1

START_MARK = "<start>"
END_MARK = "<end>"

_CHUNK_SEP = "\x1f"


def chunk_key(chunk: Sequence[str]) -> str:
    """Canonical encoding of a log-key chunk (the test-cache key)."""
    return _CHUNK_SEP.join(chunk)


@dataclass
class TrainEntry:
    signature: str
    parent_path: list[str]
    nodes: list[str]
    example_chunk: list[str]
    occurrence_count: int = 1
    summary: Optional[str] = None
    embedding: Optional[list[float]] = None


@dataclass
class TestEntry:
    signature: str
    chunk_key: str
    verdict: str  # normal | abnormal
    source: str  # pattern_match | automaton | llm | cache
    explanation: Optional[str] = None
    summary: Optional[str] = None
    embedding: Optional[list[float]] = None


@dataclass
class KnowledgeBase:
    level: str
    role: str  # train | test
    entries: dict = field(default_factory=dict)
    # parent signature -> set of (prev, next) node-name pairs incl. start/end marks
    transition_index: dict[str, set[tuple[str, str]]] = field(default_factory=dict)

    def __post_init__(self):
        self._lock = threading.Lock()

    # -- training side ------------------------------------------------------

    def insert_train(self, seq: Seq) -> TrainEntry:
        """Record a normal sub-sequence; repeats bump the occurrence count."""
        self._require(role="train", level=seq.level)
        with self._lock:
            entry = self.entries.get(seq.signature)
            if entry is None:
                entry = TrainEntry(
                    signature=seq.signature,
                    parent_path=list(seq.parent_path),
                    nodes=list(seq.nodes),
                    example_chunk=list(seq.chunk),
                )
                self.entries[seq.signature] = entry
            else:
                entry.occurrence_count += 1
            parent_sig = ">".join(seq.parent_path)
            transitions = self.transition_index.setdefault(parent_sig, set())
            walk = [START_MARK] + list(seq.nodes) + [END_MARK]
            transitions.update(zip(walk, walk[1:]))
            return entry

    def contains(self, signature: str) -> bool:
        return signature in self.entries

    def accepts_transitions(self, parent_path: Sequence[str], nodes: Sequence[str]) -> bool:
        """True iff every adjacent pair (with start/end marks) was seen in training."""
        transitions = self.transition_index.get(">".join(parent_path), set())
        walk = [START_MARK] + list(nodes) + [END_MARK]
        return all(pair in transitions for pair in zip(walk, walk[1:]))

    def retrieve_similar(
        self, parent_path: Sequence[str], query_embedding: Sequence[float], m: int
    ) -> list[TrainEntry]:
        """Top-m sibling entries by cosine similarity.

        Ties break by higher occurrence count, then smaller signature.
        Raises when siblings exist but lack embeddings.
        """
        self._require(role="train")
        parent = list(parent_path)
        siblings = [e for e in self.entries.values() if e.parent_path == parent]
        missing = [e.signature for e in siblings if e.embedding is None]
        if missing:
            raise KnowledgeBaseError(
                f"entries lack embeddings (re-embed needed): {', '.join(sorted(missing)[:5])}"
            )
        ranked = sorted(
            siblings,
            key=lambda e: (-_cosine(query_embedding, e.embedding), -e.occurrence_count, e.signature),
        )
        return ranked[: max(m, 0)]

    # -- test side ----------------------------------------------------------

    def lookup_test(self, ck: str) -> Optional[TestEntry]:
        self._require(role="test")
        return self.entries.get(ck)

    def store_test(self, entry: TestEntry) -> None:
        self._require(role="test", level=self.level)
        with self._lock:
            self.entries[entry.chunk_key] = entry

    # -- persistence --------------------------------------------------------

    def to_json(self) -> dict:
        data = {
            "format_version": KB_FORMAT_VERSION,
            "role": self.role,
            "level": self.level,
        }
        if self.role == "train":
            data["entries"] = [
                {
                    "signature": e.signature,
                    "parent_path": e.parent_path,
                    "nodes": e.nodes,
                    "example_chunk": e.example_chunk,
                    "occurrence_count": e.occurrence_count,
                    "summary": e.summary,
                    "embedding": e.embedding,
                }
                for e in sorted(self.entries.values(), key=lambda e: e.signature)
            ]
            data["transition_index"] = {
                parent: sorted(map(list, pairs))
                for parent, pairs in sorted(self.transition_index.items())
            }
        else:
            data["entries"] = [
                {
                    "signature": e.signature,
                    "chunk_key": e.chunk_key,
                    "verdict": e.verdict,
                    "source": e.source,
                    "explanation": e.explanation,
                    "summary": e.summary,
                    "embedding": e.embedding,
                }
                for e in sorted(self.entries.values(), key=lambda e: e.chunk_key)
            ]
        return data

    @classmethod
    def from_json(cls, data: dict) -> "KnowledgeBase":
        if data.get("format_version") != KB_FORMAT_VERSION:
            raise FormatError(f"unsupported KB format version: {data.get('format_version')}")
        kb = cls(level=data["level"], role=data["role"])
        if kb.role == "train":
            for row in data["entries"]:
                kb.entries[row["signature"]] = TrainEntry(
                    signature=row["signature"],
                    parent_path=row["parent_path"],
                    nodes=row["nodes"],
                    example_chunk=row["example_chunk"],
                    occurrence_count=row["occurrence_count"],
                    summary=row.get("summary"),
                    embedding=row.get("embedding"),
                )
            kb.transition_index = {
                parent: {tuple(pair) for pair in pairs}
                for parent, pairs in data.get("transition_index", {}).items()
            }
        else:
            for row in data["entries"]:
                kb.entries[row["chunk_key"]] = TestEntry(
                    signature=row["signature"],
                    chunk_key=row["chunk_key"],
                    verdict=row["verdict"],
                    source=row["source"],
                    explanation=row.get("explanation"),
                    summary=row.get("summary"),
                    embedding=row.get("embedding"),
                )
        return kb

    def save(self, path: str | Path) -> None:
        path = Path(path)
        payload = json.dumps(self.to_json(), sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        try:
            data = json.loads(Path(path).read_text())
        except (json.JSONDecodeError, OSError) as exc:
            raise FormatError(f"cannot load KB from {path}: {exc}") from exc
        return cls.from_json(data)

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeBase) and self.to_json() == other.to_json()

    def _require(self, role: Optional[str] = None, level: Optional[str] = None) -> None:
        if role is not None and self.role != role:
            raise KnowledgeBaseError(f"operation requires a {role} KB, got {self.role}")
        if level is not None and self.level != level:
            raise KnowledgeBaseError(f"level mismatch: KB is {self.level}, got {level}")


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


class KnowledgeBaseSet:
    """The six KBs of one run: train and test, one per level."""

    def __init__(self):
        self.train = {level: KnowledgeBase(level=level, role="train") for level in LEVELS}
        self.test = {level: KnowledgeBase(level=level, role="test") for level in LEVELS}

    def save_dir(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for level in LEVELS:
            self.train[level].save(directory / f"train_{level}.json")
            self.test[level].save(directory / f"test_{level}.json")

    @classmethod
    def load_dir(cls, directory: str | Path) -> "KnowledgeBaseSet":
        directory = Path(directory)
        kbs = cls()
        for level in LEVELS:
            kbs.train[level] = KnowledgeBase.load(directory / f"train_{level}.json")
            test_path = directory / f"test_{level}.json"
            if test_path.exists():
                kbs.test[level] = KnowledgeBase.load(test_path)
        return kbs
