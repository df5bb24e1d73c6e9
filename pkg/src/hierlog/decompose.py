"""Recursive decomposition of key sequences along the topic tree.

A flat list of log keys becomes one entity-level sequence, a list of
action-level sequences (one per entity chunk), and a list of status-level
sequences (one per action chunk). Entity and action levels collapse
consecutive duplicate nodes; the status level never collapses, so every
status transition survives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import DecompositionError, LookupError_
from .hierarchy import ACTION, ENTITY, STATUS, TopicTree, TreeNode

_SIG_PARENT_SEP = "|"
_SIG_NODE_SEP = ">"


def _escape(name: str) -> str:
    return name.replace("\\", "\\\\").replace("|", "\\|").replace(">", "\\>")


def make_signature(parent_path: Sequence[str], nodes: Sequence[str]) -> str:
    """Canonical KB key: injective over (parent path names, node names)."""
    return (
        _SIG_NODE_SEP.join(_escape(n) for n in parent_path)
        + _SIG_PARENT_SEP
        + _SIG_NODE_SEP.join(_escape(n) for n in nodes)
    )


@dataclass(slots=True)
class Seq:
    """A run of sibling nodes at one level, with the key chunk it covers."""

    level: str
    parent_path: tuple[str, ...]  # node names, root first
    nodes: list[str]  # node names at `level`
    chunk: list[str]  # flat log keys covered
    element_chunks: list[list[str]]  # chunk per node, concatenation == chunk
    children: Optional[list["Seq"]] = None  # absent at status level

    @property
    def signature(self) -> str:
        return make_signature(self.parent_path, self.nodes)

    @property
    def parent_name(self) -> str:
        return self.parent_path[-1]


@dataclass
class DecompositionResult:
    e_seq: Seq
    a_seqs: list[Seq] = field(default_factory=list)
    s_seqs: list[Seq] = field(default_factory=list)

    def all_seqs(self) -> list[Seq]:
        return self.s_seqs + self.a_seqs + [self.e_seq]

    def by_level(self, level: str) -> list[Seq]:
        if level == STATUS:
            return self.s_seqs
        if level == ACTION:
            return self.a_seqs
        return [self.e_seq]


def generate_level_seq(
    keys: Sequence[str], tree: TopicTree, level: str
) -> tuple[list[list[str]], list[TreeNode]]:
    """Scan keys left to right, mapping each to its node at `level`.

    At entity/action level a key extends the current chunk iff its node
    equals the last emitted one; at status level every key starts its own
    singleton chunk. Returns (chunks, nodes) with len(chunks) == len(nodes)
    and concat(chunks) == keys. Linear in len(keys).
    """
    level_idx = {ENTITY: 0, ACTION: 1, STATUS: 2}[level]
    key_nodes = tree.key_nodes
    chunks: list[list[str]] = []
    nodes: list[TreeNode] = []
    current: list[str] = []
    collapse = level != STATUS
    last: Optional[TreeNode] = None
    for pos, key in enumerate(keys):
        triple = key_nodes.get(key)
        if triple is None:
            raise DecompositionError(f"position {pos}: {LookupError_(key, level)}")
        node = triple[level_idx]
        if collapse and node is last:
            current.append(key)
        else:
            if current:
                chunks.append(current)
            current = [key]
            nodes.append(node)
            last = node
    if current:
        chunks.append(current)
    return chunks, nodes


def top_down_decompose(keys: Sequence[str], tree: TopicTree) -> DecompositionResult:
    """Decompose a key sequence into its entity/action/status sub-sequences.

    The entity-level pass chunks the whole sequence; each entity chunk is
    re-chunked at the action level, and each action chunk at the status
    level. Parent paths, chunks, and child links are populated throughout.
    Total runtime is linear in len(keys).
    """
    root_path = tree.root_path
    key_names = tree.key_names
    key_paths = tree.key_paths
    keys_list = list(keys)
    n = len(keys_list)

    # Single fused pass: action boundaries nest inside entity boundaries and
    # status chunks are per action chunk, so one scan resolves all levels.
    # Runs are recorded as start indices; chunks come from list slices below.
    # entity run: (entity name, start, e_path, action runs); action run:
    # (a_path, start, status names). Name identity marks run boundaries
    # (names are shared string objects, unique per parent).
    entity_runs: list[tuple[str, int, tuple[str, ...], list]] = []
    a_runs: list[tuple[tuple[str, ...], int, list[str]]] = []
    last_e: Optional[str] = None
    last_a: Optional[str] = None
    for i, key in enumerate(keys_list):
        names = key_names.get(key)
        if names is None:
            raise DecompositionError(f"position {i}: {LookupError_(key, ENTITY)}")
        en, an, sn = names
        if en is not last_e:
            paths = key_paths[key]
            a_runs = [(paths[1], i, [sn])]
            entity_runs.append((en, i, paths[0], a_runs))
            last_e = en
            last_a = an
        elif an is not last_a:
            a_runs.append((key_paths[key][1], i, [sn]))
            last_a = an
        else:
            a_runs[-1][2].append(sn)

    e_seq = Seq(ENTITY, root_path, [r[0] for r in entity_runs], keys_list, [], [])
    result = DecompositionResult(e_seq=e_seq)
    e_children = e_seq.children
    e_elements = e_seq.element_chunks
    all_a_seqs = result.a_seqs
    all_s_seqs = result.s_seqs

    for idx, (en, e_start, e_path, a_runs) in enumerate(entity_runs):
        e_end = entity_runs[idx + 1][1] if idx + 1 < len(entity_runs) else n
        e_chunk = keys_list[e_start:e_end]
        a_seq = Seq(ACTION, e_path, [r[0][-1] for r in a_runs], e_chunk, [], [])
        e_children.append(a_seq)
        e_elements.append(e_chunk)
        all_a_seqs.append(a_seq)
        a_children = a_seq.children
        a_elements = a_seq.element_chunks

        for jdx, (a_path, a_start, s_names) in enumerate(a_runs):
            a_end = a_runs[jdx + 1][1] if jdx + 1 < len(a_runs) else e_end
            a_chunk = keys_list[a_start:a_end]
            s_seq = Seq(STATUS, a_path, s_names, a_chunk, [[k] for k in a_chunk])
            a_children.append(s_seq)
            a_elements.append(a_chunk)
            all_s_seqs.append(s_seq)

    return result


def nested_format(seq: Seq):
    """Recursively expand a sequence into its children's nested formats.

    Status level returns the node list itself; higher levels return the
    list of each child's nested format, order preserved.
    """
    if seq.level == STATUS:
        return list(seq.nodes)
    if seq.children is None or len(seq.children) != len(seq.nodes):
        raise DecompositionError(
            f"{seq.signature}: children missing or inconsistent with nodes"
        )
    return [nested_format(child) for child in seq.children]


def seq_records(sequence_id: str, result: DecompositionResult) -> list[dict]:
    """Flat dump records for cardinality/resource reporting."""
    ordered = [result.e_seq] + result.a_seqs + result.s_seqs
    index = {id(s): i for i, s in enumerate(ordered)}
    records = []
    for i, seq in enumerate(ordered):
        records.append(
            {
                "sequence_id": sequence_id,
                "seq_index": i,
                "level": seq.level,
                "parent_path": list(seq.parent_path),
                "nodes": list(seq.nodes),
                "chunk": list(seq.chunk),
                "children": [index[id(c)] for c in seq.children] if seq.children is not None else None,
            }
        )
    return records
