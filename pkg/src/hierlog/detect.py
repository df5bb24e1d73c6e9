"""Hybrid per-sub-sequence detection with bottom-up execution.

Each decomposed sub-sequence is checked in order: test-cache lookup,
then the configured symbolic detector (exact signature matching or a
transition automaton), and only unmatched patterns are delegated to the
LLM with retrieved sibling examples. Verdicts aggregate bottom-up per
sequence with optional early exit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .decompose import Seq, top_down_decompose
from .errors import DecompositionError, ProviderError
from .hierarchy import ACTION, ENTITY, STATUS, TopicTree
from .ingest import LogSequence
from .knowledge import KnowledgeBase, KnowledgeBaseSet, TestEntry, chunk_key
from .semantics import (
    DetectionPrompt,
    EmbeddingConfig,
    Provider,
    VERDICT_ABNORMAL,
    VERDICT_NORMAL,
    embed_chunk,
    llm_detect,
    parent_context,
    summarize_parent_seq,
    summarize_status_seq,
)

log = logging.getLogger(__name__)

LEVEL_ORDER = (STATUS, ACTION, ENTITY)  # bottom-up

LEVEL_PRESETS = {
    "S": (STATUS,),
    "SA": (STATUS, ACTION),
    "SAE": (STATUS, ACTION, ENTITY),
}

EXACT = "exact"
AUTOMATON = "automaton"


@dataclass
class DetectConfig:
    levels_enabled: tuple[str, ...] = LEVEL_PRESETS["SAE"]
    detector_per_level: dict[str, str] = field(
        default_factory=lambda: {STATUS: EXACT, ACTION: EXACT, ENTITY: EXACT}
    )
    llm_enabled: bool = False
    m: int = 5
    early_exit: bool = True
    llm_phase_fraction: float = 1.0
    retry_limit: int = 2
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    def __post_init__(self):
        if isinstance(self.levels_enabled, str):
            self.levels_enabled = LEVEL_PRESETS[self.levels_enabled]
        unknown = set(self.levels_enabled) - set(LEVEL_ORDER)
        if unknown:
            raise ValueError(f"unknown levels: {unknown}")
        if self.levels_enabled and STATUS not in self.levels_enabled:
            raise ValueError("bottom-up presets require the status level whenever any level is enabled")
        if not 0.0 <= self.llm_phase_fraction <= 1.0:
            raise ValueError("llm_phase_fraction must be in [0, 1]")
        for level in LEVEL_ORDER:
            self.detector_per_level.setdefault(level, EXACT)


@dataclass
class SeqVerdict:
    signature: str
    level: str
    verdict: str  # normal | abnormal
    source: str  # pattern_match | automaton | llm | cache
    explanation: Optional[str] = None
    confidence_flag: str = "normal"  # normal | low


@dataclass
class Counters:
    pattern_checks: int = 0
    cache_hits: int = 0
    llm_calls: int = 0
    provider_errors: int = 0
    keys_per_level: dict[str, int] = field(default_factory=lambda: {l: 0 for l in LEVEL_ORDER})
    evals_per_level: dict[str, int] = field(default_factory=lambda: {l: 0 for l in LEVEL_ORDER})


@dataclass
class SequenceReport:
    sequence_id: str
    final_verdict: bool
    verdicts: list[SeqVerdict] = field(default_factory=list)
    first_abnormal_level: Optional[str] = None
    counters: Counters = field(default_factory=Counters)
    raw_length: int = 0
    error: Optional[str] = None


def detect_local_exact(seq: Seq, train_kb: KnowledgeBase) -> SeqVerdict:
    """Normal iff the signature was observed in training."""
    verdict = VERDICT_NORMAL if train_kb.contains(seq.signature) else VERDICT_ABNORMAL
    return SeqVerdict(signature=seq.signature, level=seq.level, verdict=verdict, source="pattern_match")


def detect_local_automaton(seq: Seq, train_kb: KnowledgeBase) -> SeqVerdict:
    """Normal iff every adjacent node pair (with start/end marks) was trained."""
    ok = train_kb.accepts_transitions(seq.parent_path, seq.nodes)
    verdict = VERDICT_NORMAL if ok else VERDICT_ABNORMAL
    return SeqVerdict(signature=seq.signature, level=seq.level, verdict=verdict, source="automaton")


class Detector:
    """Executes hybrid detection over decomposed sequences, sharing KBs."""

    def __init__(
        self,
        tree: TopicTree,
        kbs: KnowledgeBaseSet,
        config: DetectConfig,
        provider: Optional[Provider] = None,
        templates: Optional[dict[str, str]] = None,
    ):
        if config.llm_enabled and provider is None:
            raise ValueError("llm_enabled requires a provider")
        self.tree = tree
        self.kbs = kbs
        self.config = config
        self.provider = provider
        self.templates = templates or {}
        self._summary_cache: dict[tuple[str, str], str] = {}

    # -- single sub-sequence --------------------------------------------------

    def detect_seq(self, seq: Seq, counters: Counters, llm_allowed: bool = True) -> SeqVerdict:
        """Cache lookup, then local detector, then (optionally) the LLM."""
        ck = chunk_key(seq.chunk)
        cached = self.kbs.test[seq.level].lookup_test(ck)
        if cached is not None:
            counters.cache_hits += 1
            return SeqVerdict(
                signature=seq.signature,
                level=seq.level,
                verdict=cached.verdict,
                source="cache",
                explanation=cached.explanation,
            )

        counters.pattern_checks += 1
        detector = self.config.detector_per_level.get(seq.level, EXACT)
        if detector == AUTOMATON:
            verdict = detect_local_automaton(seq, self.kbs.train[seq.level])
        else:
            verdict = detect_local_exact(seq, self.kbs.train[seq.level])

        if verdict.verdict == VERDICT_ABNORMAL and self.config.llm_enabled and llm_allowed:
            verdict, provider_failed = self._llm_verdict(seq, counters)
            if not provider_failed:  # never cache an undecided verdict
                self._store(seq, ck, verdict)
            return verdict

        self._store(seq, ck, verdict)
        return verdict

    def _llm_verdict(self, seq: Seq, counters: Counters) -> tuple[SeqVerdict, bool]:
        try:
            prompt = self._build_prompt(seq)
            counters.llm_calls += 1
            verdict, explanation, low = llm_detect(prompt, self.provider, self.config.retry_limit)
            return (
                SeqVerdict(
                    signature=seq.signature,
                    level=seq.level,
                    verdict=verdict,
                    source="llm",
                    explanation=explanation,
                    confidence_flag="low" if low else "normal",
                ),
                False,
            )
        except ProviderError as exc:
            counters.provider_errors += 1
            log.warning("provider error for %s: %s", seq.signature, exc)
            return (
                SeqVerdict(
                    signature=seq.signature,
                    level=seq.level,
                    verdict=VERDICT_ABNORMAL,
                    source="llm",
                    explanation=f"undecided: provider error ({exc})",
                    confidence_flag="low",
                ),
                True,
            )

    def _build_prompt(self, seq: Seq) -> DetectionPrompt:
        target_summary = self._summary_for(seq)
        query = embed_chunk(seq.chunk, self.config.embedding)
        examples = self.kbs.train[seq.level].retrieve_similar(
            seq.parent_path, query, self.config.m
        )
        return DetectionPrompt(
            target_nodes=">".join(seq.nodes),
            target_summary=target_summary,
            example_summaries=[e.summary for e in examples if e.summary],
            parent_context=parent_context(seq),
        )

    def _summary_for(self, seq: Seq) -> str:
        """Bottom-up summary with per-chunk caching (test KB + in-memory)."""
        ck = chunk_key(seq.chunk)
        cached = self._summary_cache.get((seq.level, ck))
        if cached is not None:
            return cached
        entry = self.kbs.test[seq.level].lookup_test(ck)
        if entry is not None and entry.summary:
            self._summary_cache[(seq.level, ck)] = entry.summary
            return entry.summary
        # reuse training summaries when the same pattern+chunk was summarized
        train_entry = self.kbs.train[seq.level].entries.get(seq.signature)
        if train_entry is not None and train_entry.summary and train_entry.example_chunk == seq.chunk:
            summary = train_entry.summary
        elif seq.level == STATUS:
            texts = [self.templates.get(k, k) for k in seq.chunk]
            summary = summarize_status_seq(seq, texts, self.provider)
        else:
            child_summaries = [self._summary_for(child) for child in seq.children]
            summary = summarize_parent_seq(seq, child_summaries, self.provider)
        self._summary_cache[(seq.level, ck)] = summary
        if entry is not None:
            entry.summary = summary
        return summary

    def _store(self, seq: Seq, ck: str, verdict: SeqVerdict) -> None:
        self.kbs.test[seq.level].store_test(
            TestEntry(
                signature=seq.signature,
                chunk_key=ck,
                verdict=verdict.verdict,
                source=verdict.source,
                explanation=verdict.explanation,
                summary=self._summary_cache.get((seq.level, ck)),
            )
        )

    # -- whole sequence ---------------------------------------------------------

    def detect_sequence(
        self, sequence: LogSequence | Sequence[str], sequence_id: Optional[str] = None, llm_allowed: bool = True
    ) -> SequenceReport:
        """Evaluate all enabled levels bottom-up; any abnormal flags the sequence."""
        if isinstance(sequence, LogSequence):
            keys = sequence.keys
            sequence_id = sequence_id or sequence.id
        else:
            keys = list(sequence)
            sequence_id = sequence_id or "seq"
        report = SequenceReport(sequence_id=sequence_id, final_verdict=False, raw_length=len(keys))

        if not keys:
            log.warning("sequence %s is empty; treated as normal by vacuity", sequence_id)
            return report

        try:
            result = top_down_decompose(keys, self.tree)
        except DecompositionError as exc:
            report.error = str(exc)
            report.final_verdict = True  # undecidable sequences surface, not vanish
            return report

        stop = False
        for level in LEVEL_ORDER:
            if level not in self.config.levels_enabled:
                continue
            for seq in result.by_level(level):
                verdict = self.detect_seq(seq, report.counters, llm_allowed=llm_allowed)
                report.verdicts.append(verdict)
                report.counters.evals_per_level[level] += 1
                report.counters.keys_per_level[level] += len(seq.chunk)
                if verdict.verdict == VERDICT_ABNORMAL:
                    report.final_verdict = True
                    if report.first_abnormal_level is None:
                        report.first_abnormal_level = level
                    if self.config.early_exit:
                        stop = True
                        break
            if stop:
                break
        return report

    def run(self, sequences: Sequence[LogSequence]) -> list[SequenceReport]:
        """Detect a corpus; the LLM is active only for the first phase-fraction."""
        cutoff = int(self.config.llm_phase_fraction * len(sequences))
        return [
            self.detect_sequence(seq, llm_allowed=(i < cutoff))
            for i, seq in enumerate(sequences)
        ]


def train(
    sequences: Sequence[LogSequence],
    tree: TopicTree,
    config: DetectConfig,
    provider: Optional[Provider] = None,
    templates: Optional[dict[str, str]] = None,
) -> KnowledgeBaseSet:
    """Build training KBs from normal-only sequences.

    Every decomposed sub-sequence is inserted at its level. With the LLM
    path enabled, summaries and embeddings are computed bottom-up for each
    new unique pattern. Any decomposition failure aborts the run: training
    KBs must be complete.
    """
    if config.llm_enabled and provider is None:
        raise ValueError("llm_enabled training requires a provider for summaries")
    templates = templates or {}
    kbs = KnowledgeBaseSet()
    for sequence in sequences:
        if sequence.label is True:
            raise ValueError(f"training sequence {sequence.id} is labeled abnormal (one-class setting)")
        if not sequence.events:
            continue
        try:
            result = top_down_decompose(sequence.keys, tree)
        except DecompositionError as exc:
            raise DecompositionError(f"training sequence {sequence.id}: {exc}") from exc
        for seq in result.s_seqs + result.a_seqs + [result.e_seq]:
            entry = kbs.train[seq.level].insert_train(seq)
            if config.llm_enabled and entry.summary is None:
                if seq.level == STATUS:
                    texts = [templates.get(k, k) for k in seq.chunk]
                    entry.summary = summarize_status_seq(seq, texts, provider)
                else:
                    child_summaries = [
                        kbs.train[c.level].entries[c.signature].summary for c in seq.children
                    ]
                    entry.summary = summarize_parent_seq(seq, child_summaries, provider)
            if config.llm_enabled and entry.embedding is None:
                entry.embedding = embed_chunk(entry.example_chunk, config.embedding)
    return kbs
