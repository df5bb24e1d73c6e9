"""Template catalogs, message matching, and log partitioning.

Raw messages are matched against a catalog of wildcard templates
(token-for-token, ``<*>`` matches any single token) and partitioned
into log sequences by identifier or sliding window. Parsing proper is
assumed done upstream; the catalog drives everything here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import CatalogParseError, DuplicateKeyError, PartitionError

WILDCARD = "<*>"


@dataclass(frozen=True)
class LogTemplate:
    key: str
    text: str

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.text.split())

    @property
    def wildcard_count(self) -> int:
        return sum(1 for t in self.tokens if t == WILDCARD)


@dataclass(frozen=True)
class LogEvent:
    key: str
    template: str


@dataclass
class RawLogRecord:
    message: str
    timestamp: Optional[float] = None
    group_id: Optional[str] = None
    label: Optional[bool] = None


@dataclass
class LogSequence:
    id: str
    events: list[LogEvent]
    label: Optional[bool] = None

    @property
    def keys(self) -> list[str]:
        return [e.key for e in self.events]


@dataclass
class PartitionSpec:
    mode: str  # identifier | count_window | time_window
    window_size: Optional[float] = None
    stride: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("identifier", "count_window", "time_window"):
            raise ValueError(f"unknown partition mode: {self.mode!r}")
        if self.mode != "identifier":
            if not self.window_size or self.window_size <= 0:
                raise ValueError("window modes require a positive window_size")
            if self.stride is None:
                self.stride = self.window_size
            if self.stride <= 0 or self.stride > self.window_size:
                raise ValueError("stride must be in (0, window_size]")


@dataclass(frozen=True)
class MatchResult:
    key: str
    params: tuple[str, ...]


class TemplateCatalog:
    """Immutable key -> template mapping with position-wise matching."""

    def __init__(self, templates: Iterable[LogTemplate]):
        self._by_key: dict[str, LogTemplate] = {}
        for t in templates:
            if t.key in self._by_key:
                raise DuplicateKeyError(t.key)
            if not t.text.strip():
                raise ValueError(f"template {t.key!r} has empty text")
            self._by_key[t.key] = t
        # Bucket by token count so matching only scans plausible candidates.
        self._by_length: dict[int, list[LogTemplate]] = {}
        for t in self._by_key.values():
            self._by_length.setdefault(len(t.tokens), []).append(t)
        for bucket in self._by_length.values():
            bucket.sort(key=lambda t: (t.wildcard_count, t.key))

    def __len__(self) -> int:
        return len(self._by_key)

    def __contains__(self, key: str) -> bool:
        return key in self._by_key

    def get(self, key: str) -> Optional[LogTemplate]:
        return self._by_key.get(key)

    def templates(self) -> list[LogTemplate]:
        return list(self._by_key.values())

    def keys(self) -> list[str]:
        return list(self._by_key)

    def event_for(self, key: str) -> LogEvent:
        t = self._by_key[key]
        return LogEvent(key=t.key, template=t.text)


def load_template_catalog(path: str | Path) -> TemplateCatalog:
    """Load a catalog from a delimited file with columns (key, template).

    Accepts CSV (with or without a header row) and JSON lines with
    ``key``/``template`` fields. Duplicate keys are rejected.
    """
    path = Path(path)
    templates: list[LogTemplate] = []
    if path.suffix in (".jsonl", ".ndjson"):
        with path.open() as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    templates.append(LogTemplate(str(row["key"]), str(row["template"])))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise CatalogParseError(lineno, str(exc)) from exc
    else:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if not row or all(not c.strip() for c in row):
                    continue
                if lineno == 1 and [c.strip().lower() for c in row[:2]] == ["key", "template"]:
                    continue
                if len(row) < 2:
                    raise CatalogParseError(lineno, "expected columns (key, template)")
                templates.append(LogTemplate(row[0].strip(), row[1].strip()))
    seen: set[str] = set()
    for t in templates:
        if t.key in seen:
            raise DuplicateKeyError(t.key)
        seen.add(t.key)
    return TemplateCatalog(templates)


def match_message(catalog: TemplateCatalog, message: str) -> Optional[MatchResult]:
    """Match a raw message against the catalog.

    Tokens must agree position-wise; a wildcard template token matches any
    single message token and binds it as a parameter. Ambiguity resolves to
    the template with fewest wildcards, then the lexicographically smallest
    key. Returns None when nothing matches.
    """
    tokens = message.split()
    candidates = catalog._by_length.get(len(tokens), [])
    for template in candidates:  # pre-sorted by (wildcards, key)
        params = []
        for mt, tt in zip(tokens, template.tokens):
            if tt == WILDCARD:
                params.append(mt)
            elif tt != mt:
                break
        else:
            return MatchResult(key=template.key, params=tuple(params))
    return None


@dataclass
class MatchReport:
    """Outcome of matching a batch of raw records against a catalog."""

    events: list[LogEvent] = field(default_factory=list)
    records: list[RawLogRecord] = field(default_factory=list)  # matched records, aligned
    skipped: list[tuple[int, str]] = field(default_factory=list)  # (index, message)


def match_records(catalog: TemplateCatalog, records: Sequence[RawLogRecord]) -> MatchReport:
    """Match records in order; unmatched messages are reported, not fatal."""
    report = MatchReport()
    for i, rec in enumerate(records):
        m = match_message(catalog, rec.message)
        if m is None:
            report.skipped.append((i, rec.message))
        else:
            report.events.append(catalog.event_for(m.key))
            report.records.append(rec)
    return report


def partition(
    records: Sequence[RawLogRecord],
    events: Sequence[LogEvent],
    spec: PartitionSpec,
) -> list[LogSequence]:
    """Split parallel (record, event) lists into log sequences.

    identifier mode groups by ``group_id`` preserving input order within a
    group; count_window emits fixed-size windows advancing by stride (final
    shorter remainder kept); time_window emits events whose timestamps fall
    in [start, start + window).
    """
    if len(records) != len(events):
        raise ValueError("records and events must be the same length")
    if not records:
        return []

    if spec.mode == "identifier":
        groups: dict[str, list[int]] = {}
        for i, rec in enumerate(records):
            if rec.group_id is None:
                raise PartitionError(i, "identifier mode requires group_id")
            groups.setdefault(rec.group_id, []).append(i)
        return [
            LogSequence(
                id=gid,
                events=[events[i] for i in idxs],
                label=_labels_or_none([records[i].label for i in idxs]),
            )
            for gid, idxs in groups.items()
        ]

    if spec.mode == "count_window":
        size = int(spec.window_size)
        stride = int(spec.stride)
        sequences = []
        n = len(events)
        for start in range(0, n, stride):
            window = list(range(start, min(start + size, n)))
            sequences.append(
                LogSequence(
                    id=f"w{len(sequences)}",
                    events=[events[i] for i in window],
                    label=_labels_or_none([records[i].label for i in window]),
                )
            )
            if start + size >= n:
                break
        return sequences

    # time_window
    for i, rec in enumerate(records):
        if rec.timestamp is None:
            raise PartitionError(i, "time_window mode requires timestamps")
    sequences = []
    t0 = records[0].timestamp
    t_last = max(r.timestamp for r in records)
    start = t0
    while start <= t_last:
        end = start + spec.window_size
        window = [i for i, r in enumerate(records) if start <= r.timestamp < end]
        if window:
            sequences.append(
                LogSequence(
                    id=f"t{len(sequences)}",
                    events=[events[i] for i in window],
                    label=_labels_or_none([records[i].label for i in window]),
                )
            )
        start += spec.stride
    return sequences


def label_sequence(labels: Iterable[Optional[bool]]) -> bool:
    """A sequence is abnormal iff it contains at least one abnormal event."""
    return any(bool(l) for l in labels)


def _labels_or_none(labels: list[Optional[bool]]) -> Optional[bool]:
    if all(l is None for l in labels):
        return None
    return label_sequence(labels)


def save_sequences(sequences: Iterable[LogSequence], path: str | Path) -> None:
    """One JSON record per line: (sequence_id, ordered key list, optional label)."""
    with Path(path).open("w") as fh:
        for seq in sequences:
            row = {"sequence_id": seq.id, "keys": seq.keys}
            if seq.label is not None:
                row["label"] = seq.label
            fh.write(json.dumps(row) + "\n")


def load_sequences(path: str | Path, catalog: TemplateCatalog) -> list[LogSequence]:
    sequences = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogParseError(lineno, str(exc)) from exc
            events = [catalog.event_for(str(k)) for k in row["keys"]]
            sequences.append(
                LogSequence(id=str(row["sequence_id"]), events=events, label=row.get("label"))
            )
    return sequences
