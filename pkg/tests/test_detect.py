"""Hybrid detection: routing, caching, early exit, and training."""

import pytest

from hierlog.detect import (
    AUTOMATON,
    DetectConfig,
    Detector,
    LEVEL_PRESETS,
    detect_local_automaton,
    detect_local_exact,
    train,
)
from hierlog.decompose import top_down_decompose
from hierlog.errors import DecompositionError, ProviderError
from hierlog.hierarchy import ACTION, ENTITY, STATUS
from hierlog.ingest import LogSequence
from hierlog.semantics import MockProvider

from conftest import TOY_KEYS

TOY_TEMPLATES_MAP = {
    "k1": "Open session started",
    "k2": "Open session successful",
    "k3": "Authentication starts",
    "k4": "Authentication succeeds",
    "k5": "GET request sent to <*>",
    "k6": "GET response received from <*>",
}


def make_sequences(toy_cat, key_lists, label=False):
    return [
        LogSequence(id=f"s{i}", events=[toy_cat.event_for(k) for k in keys], label=label)
        for i, keys in enumerate(key_lists)
    ]


class FailingProvider:
    calls = 0

    def complete(self, request):
        self.calls += 1
        raise ProviderError("offline")


# -- training -------------------------------------------------------------------

def test_train_kb_sizes_for_golden_sequence(toy_cat, toy_tree):
    kbs = train(make_sequences(toy_cat, [TOY_KEYS]), toy_tree, DetectConfig())
    assert len(kbs.train[ENTITY].entries) == 1
    assert len(kbs.train[ACTION].entries) == 3
    assert len(kbs.train[STATUS].entries) == 5


def test_train_rejects_abnormal_sequences(toy_cat, toy_tree):
    seqs = make_sequences(toy_cat, [TOY_KEYS], label=True)
    with pytest.raises(ValueError):
        train(seqs, toy_tree, DetectConfig())


def test_train_computes_summaries_and_embeddings(toy_cat, toy_tree):
    provider = MockProvider()
    config = DetectConfig(llm_enabled=True)
    kbs = train(
        make_sequences(toy_cat, [TOY_KEYS]), toy_tree, config,
        provider=provider, templates=TOY_TEMPLATES_MAP,
    )
    s_entry = kbs.train[STATUS].entries["root>Session>open|started>succf"]
    assert s_entry.summary == "S:started>succf"
    assert s_entry.embedding is not None
    e_entry = kbs.train[ENTITY].entries["root|Session>Auth>Comm"]
    assert e_entry.summary.startswith("E:Session>Auth>Comm[")
    # one call per unique pattern: 5 status + 3 action + 1 entity
    assert provider.calls == 9
    # repeats add no further provider calls
    provider2 = MockProvider()
    train(make_sequences(toy_cat, [TOY_KEYS, TOY_KEYS]), toy_tree, config,
          provider=provider2, templates=TOY_TEMPLATES_MAP)
    assert provider2.calls == 9


# -- local detectors --------------------------------------------------------------

def test_exact_vs_automaton(toy_cat, toy_tree):
    # train Session>Auth and Auth>Comm; the stitched walk Session>Auth>Comm
    # is new as a whole pattern but every transition was seen
    kbs = train(make_sequences(toy_cat, [["k1", "k3"], ["k3", "k5"]]), toy_tree, DetectConfig())
    e_seq = top_down_decompose(["k1", "k3", "k5"], toy_tree).e_seq
    assert detect_local_exact(e_seq, kbs.train[ENTITY]).verdict == "abnormal"
    assert detect_local_automaton(e_seq, kbs.train[ENTITY]).verdict == "normal"


def test_detector_per_level_override(toy_cat, toy_tree):
    kbs = train(make_sequences(toy_cat, [["k1", "k3"], ["k3", "k5"]]), toy_tree, DetectConfig())
    test_seq = make_sequences(toy_cat, [["k1", "k3", "k5"]])[0]

    exact = Detector(toy_tree, kbs, DetectConfig())
    assert exact.detect_sequence(test_seq).final_verdict is True

    kbs2 = train(make_sequences(toy_cat, [["k1", "k3"], ["k3", "k5"]]), toy_tree, DetectConfig())
    mixed = Detector(
        toy_tree, kbs2,
        DetectConfig(detector_per_level={STATUS: "exact", ACTION: "exact", ENTITY: AUTOMATON}),
    )
    assert mixed.detect_sequence(test_seq).final_verdict is False


# -- hybrid routing ---------------------------------------------------------------

def hybrid_setup(toy_cat, toy_tree, detect_rules):
    provider = MockProvider(detect_rules=detect_rules)
    config = DetectConfig(llm_enabled=True)
    kbs = train(
        make_sequences(toy_cat, [TOY_KEYS]), toy_tree, config,
        provider=provider, templates=TOY_TEMPLATES_MAP,
    )
    detector = Detector(toy_tree, kbs, config, provider=provider, templates=TOY_TEMPLATES_MAP)
    return provider, detector


def test_llm_overrides_pattern_mismatch(toy_cat, toy_tree):
    provider, detector = hybrid_setup(
        toy_cat, toy_tree,
        [("TARGET-NODES: succf>started", "VERDICT: NORMAL\nbenign reordering")],
    )
    report = detector.detect_sequence(make_sequences(toy_cat, [["k2", "k1", "k3", "k4", "k5", "k6"]])[0])
    # status pattern unseen, but the scripted LLM accepts it; remaining levels trained
    by_source = {v.source for v in report.verdicts}
    assert report.final_verdict is False
    assert "llm" in by_source


def test_llm_default_abnormal_and_cache(toy_cat, toy_tree):
    provider, detector = hybrid_setup(toy_cat, toy_tree, [])
    seq = make_sequences(toy_cat, [["k2", "k1", "k3", "k4", "k5", "k6"]])[0]
    report1 = detector.detect_sequence(seq)
    assert report1.final_verdict is True
    assert report1.first_abnormal_level == STATUS
    calls_after_first = provider.calls

    report2 = detector.detect_sequence(seq)
    assert provider.calls == calls_after_first  # cached, no new provider traffic
    assert report2.final_verdict is True
    assert report2.verdicts[0].source == "cache"
    assert report2.counters.cache_hits >= 1


def test_provider_error_fallback_not_cached(toy_cat, toy_tree):
    config = DetectConfig(llm_enabled=True)
    mock = MockProvider()
    kbs = train(make_sequences(toy_cat, [TOY_KEYS]), toy_tree, config,
                provider=mock, templates=TOY_TEMPLATES_MAP)
    failing = FailingProvider()
    detector = Detector(toy_tree, kbs, config, provider=failing, templates=TOY_TEMPLATES_MAP)
    seq = make_sequences(toy_cat, [["k2", "k1", "k3", "k4", "k5", "k6"]])[0]

    report1 = detector.detect_sequence(seq)
    assert report1.final_verdict is True
    assert report1.verdicts[0].confidence_flag == "low"
    assert report1.counters.provider_errors == 1
    errors_first = failing.calls

    report2 = detector.detect_sequence(seq)  # undecided verdicts are not cached
    assert failing.calls > errors_first
    assert report2.counters.cache_hits == 0


# -- early exit and levels ----------------------------------------------------------

def test_early_exit_skips_higher_levels(toy_cat, toy_tree):
    kbs = train(make_sequences(toy_cat, [TOY_KEYS]), toy_tree, DetectConfig())
    detector = Detector(toy_tree, kbs, DetectConfig(early_exit=True))
    report = detector.detect_sequence(make_sequences(toy_cat, [["k2", "k1", "k3", "k4", "k5", "k6"]])[0])
    assert report.first_abnormal_level == STATUS
    assert report.counters.evals_per_level[ACTION] == 0
    assert report.counters.evals_per_level[ENTITY] == 0


def test_early_exit_verdict_equivalence(toy_cat, toy_tree):
    tests = [
        ["k2", "k1", "k3", "k4", "k5", "k6"],  # status anomaly
        ["k1", "k2", "k4", "k3", "k5", "k6"],  # action anomaly
        ["k1", "k2", "k5", "k6"],  # entity anomaly
        TOY_KEYS,  # normal
    ]
    verdicts = {}
    for flag in (True, False):
        kbs = train(make_sequences(toy_cat, [TOY_KEYS]), toy_tree, DetectConfig())
        detector = Detector(toy_tree, kbs, DetectConfig(early_exit=flag))
        verdicts[flag] = [
            detector.detect_sequence(s).final_verdict
            for s in make_sequences(toy_cat, tests)
        ]
    assert verdicts[True] == verdicts[False] == [True, True, True, False]


def test_levels_preset_status_only(toy_cat, toy_tree):
    kbs = train(make_sequences(toy_cat, [TOY_KEYS]), toy_tree, DetectConfig())
    detector = Detector(toy_tree, kbs, DetectConfig(levels_enabled=LEVEL_PRESETS["S"]))
    report = detector.detect_sequence(make_sequences(toy_cat, [["k1", "k2", "k5", "k6"]])[0])
    # entity anomaly is invisible to the status-only preset
    assert report.final_verdict is False
    assert report.counters.evals_per_level[ACTION] == 0


def test_llm_phase_fraction_zero(toy_cat, toy_tree):
    provider = MockProvider()
    config = DetectConfig(llm_enabled=True, llm_phase_fraction=0.0)
    kbs = train(make_sequences(toy_cat, [TOY_KEYS]), toy_tree,
                DetectConfig(llm_enabled=True), provider=provider, templates=TOY_TEMPLATES_MAP)
    detector = Detector(toy_tree, kbs, config, provider=provider, templates=TOY_TEMPLATES_MAP)
    calls_before = provider.calls
    reports = detector.run(make_sequences(toy_cat, [["k2", "k1", "k3", "k4", "k5", "k6"]]))
    assert provider.calls == calls_before  # LLM phase covers 0% of the run
    assert reports[0].counters.llm_calls == 0
    assert reports[0].final_verdict is True


# -- edge cases ----------------------------------------------------------------------

def test_empty_sequence_is_normal(toy_cat, toy_tree):
    kbs = train(make_sequences(toy_cat, [TOY_KEYS]), toy_tree, DetectConfig())
    detector = Detector(toy_tree, kbs, DetectConfig())
    report = detector.detect_sequence(LogSequence(id="empty", events=[]))
    assert report.final_verdict is False
    assert report.raw_length == 0


def test_unknown_key_surfaces_as_abnormal(toy_cat, toy_tree):
    kbs = train(make_sequences(toy_cat, [TOY_KEYS]), toy_tree, DetectConfig())
    detector = Detector(toy_tree, kbs, DetectConfig())
    report = detector.detect_sequence(["k1", "mystery"], sequence_id="x")
    assert report.final_verdict is True
    assert report.error is not None


def test_train_aborts_on_unknown_key(toy_cat, toy_tree):
    seqs = [LogSequence(id="bad", events=[toy_cat.event_for("k1")], label=False)]
    seqs[0].events.append(type(seqs[0].events[0])(key="zz", template="zz"))
    with pytest.raises(DecompositionError):
        train(seqs, toy_tree, DetectConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        DetectConfig(levels_enabled=(ACTION,))  # bottom-up needs status
    with pytest.raises(ValueError):
        DetectConfig(llm_phase_fraction=1.5)
    with pytest.raises(ValueError):
        Detector(None, None, DetectConfig(llm_enabled=True), provider=None)
    assert DetectConfig(levels_enabled="SA").levels_enabled == (STATUS, ACTION)
