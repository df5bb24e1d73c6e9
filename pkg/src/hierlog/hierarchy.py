"""Topic extraction and the three-level topic tree.

Each template yields an (entity, action, status) triple. Triples are
refined for pool consistency and assembled into a rooted tree:
root -> entities -> actions -> statuses, with every status node bound
to exactly one template key.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import DuplicateKeyError, ExtractionError, LookupError_, TreeError
from .ingest import WILDCARD, TemplateCatalog
from . import prompts as prompt_assets

NONE_STATUS = "none"

ROOT = "root"
ENTITY = "entity"
ACTION = "action"
STATUS = "status"
LEVELS = (ENTITY, ACTION, STATUS)


@dataclass(frozen=True)
class TopicTriple:
    key: str
    entity: str
    action: str
    status: str = NONE_STATUS

    def __post_init__(self):
        if not self.entity or not self.action:
            raise ValueError(f"triple for {self.key!r} has empty entity or action")


@dataclass(frozen=True)
class TreeNode:
    node_id: str
    level: str
    name: str
    parent_id: Optional[str]
    key: Optional[str] = None  # template key, status nodes only


TREE_FORMAT_VERSION = 1


class TopicTree:
    """Immutable rooted three-level hierarchy with O(1) key lookup."""

    def __init__(self, nodes: dict[str, TreeNode], key_index: dict[str, str]):
        self.nodes = nodes
        self.key_index = key_index
        self.root_id = ROOT
        self._children: dict[str, list[str]] = {}
        for node in nodes.values():
            if node.parent_id is not None:
                self._children.setdefault(node.parent_id, []).append(node.node_id)
        # key -> (entity, action, status) nodes, so per-key lookup is one dict hit
        self.key_nodes: dict[str, tuple[TreeNode, TreeNode, TreeNode]] = {}
        # name-only variant for hot loops; names are unique per parent, and the
        # shared string objects make identity comparison valid for run detection
        self.key_names: dict[str, tuple[str, str, str]] = {}
        # precomputed parent paths per key: (root,) / (root, entity) / (root, entity, action)
        self.key_paths: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {}
        root_name = nodes[ROOT].name if ROOT in nodes else ROOT
        self.root_path: tuple[str, ...] = (root_name,)
        e_paths: dict[str, tuple[str, ...]] = {}
        a_paths: dict[str, tuple[str, ...]] = {}
        for key, sid in key_index.items():
            status = nodes[sid]
            action = nodes[status.parent_id]
            entity = nodes[action.parent_id]
            self.key_nodes[key] = (entity, action, status)
            self.key_names[key] = (entity.name, action.name, status.name)
            e_path = e_paths.setdefault(entity.node_id, self.root_path + (entity.name,))
            a_path = a_paths.setdefault(action.node_id, e_path + (action.name,))
            self.key_paths[key] = (e_path, a_path)

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: str) -> TreeNode:
        return self.nodes[node_id]

    def children(self, node_id: str) -> list[TreeNode]:
        return [self.nodes[c] for c in self._children.get(node_id, [])]

    def lookup_node(self, key: str, level: str) -> TreeNode:
        """Status node for the key, its parent action, or grandparent entity."""
        triple = self.key_nodes.get(key)
        if triple is None:
            raise LookupError_(key, level)
        if level == ENTITY:
            return triple[0]
        if level == ACTION:
            return triple[1]
        if level == STATUS:
            return triple[2]
        raise ValueError(f"unknown level: {level!r}")

    def path_names(self, node_id: str) -> tuple[str, ...]:
        """Node names from root down to (and including) the given node."""
        names = []
        cur: Optional[str] = node_id
        while cur is not None:
            node = self.nodes[cur]
            names.append(node.name)
            cur = node.parent_id
        return tuple(reversed(names))

    def __eq__(self, other) -> bool:
        return isinstance(other, TopicTree) and self.nodes == other.nodes

    def to_json(self) -> dict:
        return {
            "format_version": TREE_FORMAT_VERSION,
            "nodes": [
                {
                    "node_id": n.node_id,
                    "level": n.level,
                    "name": n.name,
                    "parent_id": n.parent_id,
                    "key": n.key,
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.node_id)
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "TopicTree":
        if data.get("format_version") != TREE_FORMAT_VERSION:
            raise TreeError(f"unsupported tree format version: {data.get('format_version')}")
        nodes = {
            row["node_id"]: TreeNode(
                node_id=row["node_id"],
                level=row["level"],
                name=row["name"],
                parent_id=row["parent_id"],
                key=row.get("key"),
            )
            for row in data["nodes"]
        }
        key_index = {n.key: n.node_id for n in nodes.values() if n.key is not None}
        return cls(nodes, key_index)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TopicTree":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_tree(triples: list[TopicTriple]) -> TopicTree:
    """Assemble the tree from refined triples, one status node per key.

    Hash-indexed construction, linear in the number of triples. When two
    keys under the same action share a status name, the later node keeps
    its own identity under a key-suffixed name (status <-> key stays
    one-to-one).
    """
    nodes: dict[str, TreeNode] = {ROOT: TreeNode(ROOT, ROOT, ROOT, None)}
    key_index: dict[str, str] = {}
    name_index: dict[tuple[str, str, str], str] = {}  # (level, parent_id, name) -> node_id
    seen_keys: set[str] = set()

    for triple in triples:
        if triple.key in seen_keys:
            raise DuplicateKeyError(triple.key)
        seen_keys.add(triple.key)

        ekey = (ENTITY, ROOT, triple.entity)
        entity_id = name_index.get(ekey)
        if entity_id is None:
            entity_id = f"e:{triple.entity}"
            nodes[entity_id] = TreeNode(entity_id, ENTITY, triple.entity, ROOT)
            name_index[ekey] = entity_id

        akey = (ACTION, entity_id, triple.action)
        action_id = name_index.get(akey)
        if action_id is None:
            action_id = f"a:{triple.entity}/{triple.action}"
            nodes[action_id] = TreeNode(action_id, ACTION, triple.action, entity_id)
            name_index[akey] = action_id

        status_name = triple.status or NONE_STATUS
        if (STATUS, action_id, status_name) in name_index:
            status_name = f"{status_name}~{triple.key}"
        status_id = f"s:{triple.key}"
        nodes[status_id] = TreeNode(status_id, STATUS, status_name, action_id, key=triple.key)
        name_index[(STATUS, action_id, status_name)] = status_id
        key_index[triple.key] = status_id

    return TopicTree(nodes, key_index)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

@dataclass
class ExtractorConfig:
    kind: str  # fixture | lexicon | llm
    fixture_path: Optional[str] = None
    lexicon_path: Optional[str] = None
    refinement_enabled: bool = True

    def __post_init__(self):
        if self.kind not in ("fixture", "lexicon", "llm"):
            raise ValueError(f"unknown extractor kind: {self.kind!r}")


class FixtureExtractor:
    """Exact key -> triple map, for tests and golden runs."""

    def __init__(self, mapping: dict[str, dict]):
        self.mapping = {
            str(k): TopicTriple(
                key=str(k),
                entity=v["entity"],
                action=v["action"],
                status=v.get("status") or NONE_STATUS,
            )
            for k, v in mapping.items()
        }

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureExtractor":
        return cls(json.loads(Path(path).read_text()))

    def extract(self, catalog: TemplateCatalog) -> list[TopicTriple]:
        missing = [k for k in catalog.keys() if k not in self.mapping]
        if missing:
            raise ExtractionError(missing, "no fixture triple")
        return [self.mapping[k] for k in catalog.keys()]


DEFAULT_ACTION_VERBS = {
    "open", "close", "start", "starts", "started", "stop", "create", "delete",
    "read", "write", "send", "receive", "received", "connect", "disconnect",
    "request", "respond", "allocate", "release", "verify", "authenticate",
    "load", "save", "update", "get", "put", "post",
}

DEFAULT_STATUS_WORDS = {
    "started", "successful", "success", "succeeded", "failed", "failure",
    "done", "complete", "completed", "ok", "error", "timeout", "begin",
    "finished", "pending", "aborted", "rejected",
}


class LexiconExtractor:
    """Deterministic rule-based extraction.

    Entity: first token found in the entity lexicon (or the first
    non-verb, non-wildcard token). Action: first token in the verb list.
    Status: trailing token when it is a known status word.
    """

    def __init__(
        self,
        entity_terms: Optional[dict[str, str]] = None,
        action_verbs: Optional[set[str]] = None,
        status_words: Optional[set[str]] = None,
    ):
        self.entity_terms = {k.lower(): v for k, v in (entity_terms or {}).items()}
        self.action_verbs = {v.lower() for v in (action_verbs or DEFAULT_ACTION_VERBS)}
        self.status_words = {s.lower() for s in (status_words or DEFAULT_STATUS_WORDS)}

    @classmethod
    def from_file(cls, path: str | Path) -> "LexiconExtractor":
        cfg = json.loads(Path(path).read_text())
        return cls(
            entity_terms=cfg.get("entity_terms"),
            action_verbs=set(cfg["action_verbs"]) if "action_verbs" in cfg else None,
            status_words=set(cfg["status_words"]) if "status_words" in cfg else None,
        )

    def extract(self, catalog: TemplateCatalog) -> list[TopicTriple]:
        return [self._extract_one(t.key, t.text) for t in catalog.templates()]

    def _extract_one(self, key: str, text: str) -> TopicTriple:
        tokens = [t for t in text.split() if t != WILDCARD]
        words = [t.strip(".,:;!?()[]").lower() for t in tokens]

        entity = None
        for w in words:
            if w in self.entity_terms:
                entity = self.entity_terms[w]
                break
        action = next((w for w in words if w in self.action_verbs), None)
        if entity is None:
            entity = next(
                (w.capitalize() for w in words if w not in self.action_verbs and w not in self.status_words),
                "System",
            )
        if action is None:
            action = words[0] if words else "event"

        status = NONE_STATUS
        if words and words[-1] in self.status_words and words[-1] != action:
            status = words[-1]
        return TopicTriple(key=key, entity=entity, action=action, status=status)


class LlmExtractor:
    """In-context extraction via a chat provider.

    One call per template; entity is asked first, the action conditioned
    on it, the status conditioned on the action (the prompt enforces the
    ordering). Responses must carry ENTITY/ACTION/STATUS lines.
    """

    def __init__(self, provider):
        self.provider = provider

    def extract(self, catalog: TemplateCatalog) -> list[TopicTriple]:
        template_text = prompt_assets.load("extract")
        triples = []
        failed = []
        for t in catalog.templates():
            request = template_text.format(template_text=t.text, key=t.key)
            try:
                response = self.provider.complete(request)
                triples.append(self._parse(t.key, response))
            except Exception:
                failed.append(t.key)
        if failed:
            raise ExtractionError(failed)
        return triples

    @staticmethod
    def _parse(key: str, response: str) -> TopicTriple:
        fields = {}
        for line in response.splitlines():
            if ":" in line:
                name, _, value = line.partition(":")
                fields[name.strip().upper()] = value.strip()
        return TopicTriple(
            key=key,
            entity=fields["ENTITY"],
            action=fields["ACTION"],
            status=fields.get("STATUS") or NONE_STATUS,
        )


def make_extractor(config: ExtractorConfig, provider=None):
    if config.kind == "fixture":
        return FixtureExtractor.from_file(config.fixture_path)
    if config.kind == "lexicon":
        if config.lexicon_path:
            return LexiconExtractor.from_file(config.lexicon_path)
        return LexiconExtractor()
    if provider is None:
        raise ValueError("llm extractor requires a provider")
    return LlmExtractor(provider)


def extract_topics(catalog: TemplateCatalog, extractor) -> list[TopicTriple]:
    if len(catalog) == 0:
        return []
    return extractor.extract(catalog)


def refine_topics(
    triples: list[TopicTriple],
    synonyms: Optional[dict[str, str]] = None,
) -> list[TopicTriple]:
    """Canonicalize entity and action names against the extracted pools.

    Names that agree up to case folding (or via the synonym table) merge
    into one canonical spelling: the most frequent original, ties broken
    lexicographically. Entities are pooled globally, actions per entity;
    statuses are left untouched.
    """
    if not triples:
        return []
    synonyms = {k.lower(): v for k, v in (synonyms or {}).items()}

    def fold(name: str) -> str:
        return synonyms.get(name.lower(), name).lower()

    entity_pool: dict[str, Counter] = {}
    for t in triples:
        entity_pool.setdefault(fold(t.entity), Counter())[synonyms.get(t.entity.lower(), t.entity)] += 1
    entity_canon = {k: _canonical(c) for k, c in entity_pool.items()}

    action_pool: dict[tuple[str, str], Counter] = {}
    for t in triples:
        ekey = fold(t.entity)
        action_pool.setdefault((ekey, fold(t.action)), Counter())[
            synonyms.get(t.action.lower(), t.action)
        ] += 1
    action_canon = {k: _canonical(c) for k, c in action_pool.items()}

    refined = []
    for t in triples:
        ekey = fold(t.entity)
        refined.append(
            TopicTriple(
                key=t.key,
                entity=entity_canon[ekey],
                action=action_canon[(ekey, fold(t.action))],
                status=t.status,
            )
        )
    return refined


def _canonical(counter: Counter) -> str:
    top = max(counter.values())
    return min(name for name, n in counter.items() if n == top)


def save_triples(triples: list[TopicTriple], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for t in triples:
            fh.write(
                json.dumps({"key": t.key, "entity": t.entity, "action": t.action, "status": t.status})
                + "\n"
            )


def load_triples(path: str | Path) -> list[TopicTriple]:
    triples = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                row = json.loads(line)
                triples.append(
                    TopicTriple(
                        key=str(row["key"]),
                        entity=row["entity"],
                        action=row["action"],
                        status=row.get("status") or NONE_STATUS,
                    )
                )
    return triples
