"""End-to-end orchestration: extract -> build -> train -> detect -> evaluate.

Stages communicate through persisted artifacts (tree, KB files, reports),
so each stage can be re-run independently from a config file with
sections [hierarchy], [train], [detect], [eval], and optional [provider].
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .detect import DetectConfig, Detector, LEVEL_PRESETS, train as train_kbs
from .errors import ConfigError, HierlogError, StageError
from .evalreport import (
    attribution_report,
    compute_metrics,
    save_reports,
    structure_report,
)
from .hierarchy import (
    ExtractorConfig,
    TopicTree,
    build_tree,
    extract_topics,
    make_extractor,
    refine_topics,
    save_triples,
)
from .ingest import (
    PartitionSpec,
    RawLogRecord,
    load_sequences,
    load_template_catalog,
    match_records,
    partition as partition_records,
    save_sequences,
)
from .knowledge import KnowledgeBaseSet
from .semantics import ProviderConfig, make_provider


def parse_detector_spec(spec: str) -> dict[str, str]:
    """Parse '<exact|automaton>[:level=kind,...]' into a per-level map."""
    base, _, overrides = spec.partition(":")
    if base not in ("exact", "automaton"):
        raise ConfigError(f"unknown detector: {base!r}")
    per_level = {level: base for level in ("status", "action", "entity")}
    if overrides:
        for item in overrides.split(","):
            level, _, kind = item.partition("=")
            if level not in per_level or kind not in ("exact", "automaton"):
                raise ConfigError(f"bad detector override: {item!r}")
            per_level[level] = kind
    return per_level


def _parse_partition_spec(spec: str) -> PartitionSpec:
    """Parse 'identifier', 'count:N[:S]', or 'time:D[:S]'."""
    parts = spec.split(":")
    if parts[0] == "identifier":
        return PartitionSpec(mode="identifier")
    if parts[0] in ("count", "time"):
        if len(parts) < 2:
            raise ConfigError(f"partition {parts[0]!r} needs a window size")
        size = float(parts[1])
        stride = float(parts[2]) if len(parts) > 2 else None
        mode = "count_window" if parts[0] == "count" else "time_window"
        return PartitionSpec(mode=mode, window_size=size, stride=stride)
    raise ConfigError(f"unknown partition spec: {spec!r}")


def _flag(value: str | bool, default: bool = False) -> bool:
    if isinstance(value, bool):
        return value
    return {"on": True, "off": False, "true": True, "false": False, "": default}[value.strip().lower()]


@dataclass
class PipelineResult:
    tree: TopicTree
    kbs: KnowledgeBaseSet
    metrics: Optional[dict] = None


def run_pipeline(config_path: str | Path) -> PipelineResult:
    """Execute all configured stages in order; stage failures carry the stage tag."""
    parser = configparser.ConfigParser()
    read = parser.read(config_path)
    if not read:
        raise ConfigError(f"cannot read config file: {config_path}")

    provider = None
    if parser.has_section("provider"):
        sec = parser["provider"]
        try:
            provider = make_provider(
                ProviderConfig(
                    kind=sec.get("kind", "mock"),
                    fixture_path=sec.get("fixture_path") or None,
                    endpoint=sec.get("endpoint") or None,
                    model=sec.get("model") or None,
                    auth_env=sec.get("auth_env") or None,
                )
            )
        except (ValueError, HierlogError) as exc:
            raise ConfigError(f"provider: {exc}") from exc

    # -- ingest (optional: raw logs -> partitioned sequences) ----------------
    if parser.has_section("ingest"):
        try:
            sec = parser["ingest"]
            catalog = load_template_catalog(sec["templates"])
            records = []
            with open(sec["logs"]) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    records.append(
                        RawLogRecord(
                            message=row["message"],
                            timestamp=row.get("timestamp"),
                            group_id=row.get("group_id"),
                            label=row.get("label"),
                        )
                    )
            report = match_records(catalog, records)
            spec = _parse_partition_spec(sec.get("partition", "identifier"))
            save_sequences(partition_records(report.records, report.events, spec), sec["out"])
        except (KeyError, OSError, HierlogError, ValueError) as exc:
            raise StageError("ingest", str(exc)) from exc

    # -- hierarchy ----------------------------------------------------------
    try:
        if not parser.has_section("hierarchy"):
            raise KeyError("missing [hierarchy] section")
        sec = parser["hierarchy"]
        catalog = load_template_catalog(sec["templates"])
        tree_path = Path(sec["tree_out"])
        if _flag(sec.get("resume", "off")) and tree_path.exists():
            tree = TopicTree.load(tree_path)
        else:
            extractor = make_extractor(
                ExtractorConfig(
                    kind=sec.get("extractor", "lexicon"),
                    fixture_path=sec.get("fixture") or None,
                    lexicon_path=sec.get("lexicon") or None,
                ),
                provider=provider,
            )
            triples = refine_topics(extract_topics(catalog, extractor))
            if sec.get("triples_out"):
                save_triples(triples, sec["triples_out"])
            tree = build_tree(triples)
            tree_path.parent.mkdir(parents=True, exist_ok=True)
            tree.save(tree_path)
    except (KeyError, OSError, HierlogError, ValueError) as exc:
        raise StageError("hierarchy", str(exc)) from exc

    templates = {t.key: t.text for t in catalog.templates()}

    # -- train --------------------------------------------------------------
    try:
        sec = parser["train"]
        kb_dir = Path(sec["kb_dir"])
        if _flag(sec.get("resume", "off")) and (kb_dir / "train_status.json").exists():
            kbs = KnowledgeBaseSet.load_dir(kb_dir)
        else:
            train_sequences = load_sequences(sec["sequences"], catalog)
            llm_enabled = _flag(sec.get("llm", "off"))
            config = DetectConfig(llm_enabled=llm_enabled)
            kbs = train_kbs(train_sequences, tree, config, provider=provider, templates=templates)
            kbs.save_dir(kb_dir)
    except (KeyError, OSError, HierlogError, ValueError) as exc:
        raise StageError("train", str(exc)) from exc

    # -- detect -------------------------------------------------------------
    reports = []
    test_sequences = []
    try:
        sec = parser["detect"]
        test_sequences = load_sequences(sec["sequences"], catalog)
        config = DetectConfig(
            levels_enabled=LEVEL_PRESETS[sec.get("levels", "SAE")],
            detector_per_level=parse_detector_spec(sec.get("detector", "exact")),
            llm_enabled=_flag(sec.get("llm", "off")),
            m=sec.getint("m", 5),
            early_exit=_flag(sec.get("early_exit", "on"), default=True),
            llm_phase_fraction=sec.getfloat("llm_fraction", 1.0),
        )
        detector = Detector(tree, kbs, config, provider=provider, templates=templates)
        reports = detector.run(test_sequences)
        meta = {
            "created_at": datetime.now(timezone.utc).isoformat(),
            "levels": "".join(l[0].upper() for l in config.levels_enabled),
            "llm": config.llm_enabled,
        }
        save_reports(reports, sec["report"], meta=meta)
        kbs.save_dir(parser["train"]["kb_dir"])  # persist warmed test caches
    except (KeyError, OSError, HierlogError, ValueError) as exc:
        raise StageError("detect", str(exc)) from exc

    # -- eval ---------------------------------------------------------------
    metrics_payload = None
    if parser.has_section("eval"):
        try:
            sec = parser["eval"]
            labeled = [s for s in test_sequences if s.label is not None]
            by_id = {r.sequence_id: r for r in reports}
            preds = [by_id[s.id].final_verdict for s in labeled]
            labels = [bool(s.label) for s in labeled]
            metrics = compute_metrics(preds, labels)
            structure = structure_report(tree, kbs, reports)
            metrics_payload = {
                "metrics": {
                    "tp": metrics.tp,
                    "fp": metrics.fp,
                    "tn": metrics.tn,
                    "fn": metrics.fn,
                    "precision": metrics.precision,
                    "recall": metrics.recall,
                    "f1": metrics.f1,
                },
                "structure": structure.to_json(),
            }
            if _flag(sec.get("attribution", "off")):
                metrics_payload["attribution"] = attribution_report(
                    [by_id[s.id] for s in labeled], labels
                )
            if sec.get("out"):
                Path(sec["out"]).write_text(json.dumps(metrics_payload, indent=2, sort_keys=True))
        except (KeyError, OSError, HierlogError, ValueError) as exc:
            raise StageError("eval", str(exc)) from exc

    return PipelineResult(tree=tree, kbs=kbs, metrics=metrics_payload)
