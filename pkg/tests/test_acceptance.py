"""
End-to-end checks over synthetic traffic. Slower than the unit tests;
deselect with ``-m "not acceptance"``.
"""

import json
import time

import numpy as np
import pytest

from ingest.synthetic_corpus import HAM, PHISH, ZERO_DAY, SyntheticCorpus
from src.detector import PhishDetector
from src.ecm import DistanceMetric, EcmParams, EvolvingClusterer
from src.email_parser import parse_email
from src.exceptions import ProfileStoreError
from src.features import VectorMode, extract_long, reduce_short
from src.filter_server import FEEDBACK_PREFIX, FilterService
from src.fuzzy_inference import InferenceParams, classify, learn_online, rls_update
from src.fuzzy_rule import FuzzyRule
from src.labels import Label
from src.metrics import ConfusionCounts, compare_runs, report_to_record, score_run
from src.profile_manager import ProfileManager, ProfileSchedule
from src.profile_store import ProfileStore
from src.refinement import LabeledSample, ProfileWindow, RefinementHyper, bootstrap_rulebase, gradient_check

pytestmark = pytest.mark.acceptance


def test_ecm_keeps_up_with_a_long_stream(rng):
    X = rng.random((100_000, 4))
    clusterer = EvolvingClusterer(EcmParams(dthr=0.18), 4)
    start = time.perf_counter()
    assigned = np.array([clusterer.partial_fit(x).index for x in X])
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    assert np.all(clusterer.radii <= 0.18 + 1e-12)
    # Centers only move so that earlier members stay inside the grown cluster
    d = np.linalg.norm(X - clusterer.centers[assigned], axis=1)
    assert np.all(d <= clusterer.radii[assigned] + 1e-9)


def test_rls_agrees_with_least_squares(rng):
    c = 1e8
    for _ in range(50):
        n = int(rng.integers(20, 80))
        X = rng.random((n, 4))
        y = X @ rng.normal(size=4) + rng.normal() + rng.normal(0, 0.05, n)
        rule = FuzzyRule.create(rule_id=0, cluster_id=0, centers=np.zeros(4), widths=np.ones(4),
                                intercept=0.0, initial_covariance=c)
        for x, target in zip(X, y):
            rule = rls_update(rule, x, float(target), weight=1.0, forgetting_factor=1.0)
        Phi = np.hstack([np.ones((n, 1)), X])
        expected, *_ = np.linalg.lstsq(Phi, y, rcond=None)
        assert rule.consequent == pytest.approx(expected, abs=1e-4)


def test_gradients_match_finite_differences(make_rulebase, rng):
    for _ in range(20):
        n_rules = int(rng.integers(2, 7))
        rb = make_rulebase(
            centers=rng.random((n_rules, 4)),
            widths=rng.uniform(0.15, 0.3, size=(n_rules, 4)),
            consequents=rng.normal(0.5, 0.3, size=(n_rules, 5)),
        )
        samples = [
            LabeledSample(x, Label.PHISH if phish else Label.HAM, i)
            for i, (x, phish) in enumerate(zip(rng.random((25, 4)), rng.random(25) < 0.5))
        ]
        assert gradient_check(ProfileWindow(samples, rb, 25), rb, epsilon=1e-5) < 1e-4


def test_firing_weights_always_normalize(make_rulebase, rng):
    for _ in range(100):
        n_rules = int(rng.integers(1, 9))
        rb = make_rulebase(
            centers=rng.random((n_rules, 4)),
            widths=rng.uniform(0.01, 0.5, size=(n_rules, 4)),
            consequents=rng.normal(0.5, 1.0, size=(n_rules, 5)),
            m_active=int(rng.integers(1, 5)),
        )
        for x in rng.random((100, 4)):
            verdict = classify(rb, x)
            assert sum(w for _, w in verdict.fired_rules) == pytest.approx(1.0, abs=1e-9)
            assert 0.0 <= verdict.score <= 1.0


def test_short_vectors_need_fewer_rules_than_long():
    corpus = SyntheticCorpus(seed=31)
    ecm = EcmParams(dthr=0.18, distance=DistanceMetric.NORMALIZED_EUCLIDEAN)

    def kinds(n, rng):
        return [PHISH if phish else HAM for phish in rng.random(n) < 0.5]

    train_kinds = kinds(300, corpus.rng)
    stream_kinds = kinds(2000, corpus.rng)
    train_bits = corpus.bits(train_kinds)
    stream_bits = corpus.bits(stream_kinds)
    train_labels = [Label.PHISH if k == PHISH else Label.HAM for k in train_kinds]
    stream_labels = [Label.PHISH if k == PHISH else Label.HAM for k in stream_kinds]

    reports = {}
    for mode in (VectorMode.SHORT, VectorMode.LONG):
        rb = bootstrap_rulebase(corpus.to_vectors(train_bits, mode), train_labels, ecm=ecm, vector_mode=mode)
        verdicts = []
        for x, label in zip(corpus.to_vectors(stream_bits, mode), stream_labels):
            verdicts.append((classify(rb, x), label))
            rb = learn_online(rb, x, label)
        reports[mode] = score_run(verdicts, rb)

    short, long_ = reports[VectorMode.SHORT], reports[VectorMode.LONG]
    assert short.rule_count < long_.rule_count
    assert short.latency_mean < long_.latency_mean
    comparison = compare_runs(short, long_)
    assert 0.0 < comparison.rule_count_ratio < 1.0
    assert 0.0 < comparison.latency_ratio < 1.0
    for mode, report in reports.items():
        record = report_to_record(report, vector_mode=mode.value)
        assert record["total"] == 2000
        assert record["rules"]["count"] == report.rule_count
        assert record["latency"]["mean_seconds"] > 0.0


def test_profile_adapts_to_zero_day_campaign(tmp_path):
    corpus = SyntheticCorpus(seed=41)
    initial = corpus.labeled(150, 150)
    frozen = bootstrap_rulebase(initial.X, initial.labels)
    store = ProfileStore(str(tmp_path / "profiles"))
    store.persist_and_activate(frozen, event="train")
    manager = ProfileManager(
        store,
        ProfileSchedule(window_size=100, min_refine_samples=50),
        RefinementHyper(min_refine_samples=50),
    )

    drift_at, n = 1000, 3000
    stream = corpus.stream(n, labeled_fraction=0.1, drift_at=drift_at)
    early, late = [], []
    evolving_hits = frozen_hits = zero_days = 0
    start = time.perf_counter()
    for i, (x, label) in enumerate(stream.samples()):
        verdict = manager.classify(x)
        if stream.kinds[i] == ZERO_DAY:
            if i < drift_at + 200:
                early.append(verdict.is_phish)
            if i >= n - 500:
                late.append(verdict.is_phish)
            if i >= 2000:
                zero_days += 1
                evolving_hits += verdict.is_phish
                frozen_hits += classify(frozen, x).is_phish
        manager.observe(x, label)
    manager.drain()
    elapsed = time.perf_counter() - start

    assert elapsed < 60.0
    assert len(early) > 20 and len(late) > 50
    assert np.mean(late) >= np.mean(early) + 0.10
    assert zero_days > 100
    assert manager.active.stats.created > 0
    assert evolving_hits / zero_days >= frozen_hits / zero_days + 0.10
    assert store.read_audit("job_emitted")


def test_serve_feedback_fills_one_window(trained_store):
    manager = ProfileManager(trained_store, ProfileSchedule(window_size=800, min_refine_samples=50))
    service = FilterService(PhishDetector(manager))
    corpus = SyntheticCorpus(seed=51)
    for i in range(800):
        kind = PHISH if i % 2 else HAM
        response = service.handle(corpus.raw_message(kind, i))
        assert response["status"] == "ok"
        body = json.dumps({"message_id": response["message_id"], "label": "phish" if kind == PHISH else "ham"})
        assert service.handle(FEEDBACK_PREFIX + b"\n" + body.encode())["status"] == "ok"

    assert len(trained_store.read_audit("job_emitted")) == 1
    refinements = trained_store.read_audit("refinement")
    assert len(refinements) == 1
    swaps = trained_store.read_audit("swap")
    assert len(swaps) == (1 if refinements[0]["status"] == "accepted" else 0)
    assert manager.profile_version == trained_store.active_version()


def test_crash_during_swap_keeps_serving_old_version(trained_store, trained, monkeypatch, rng):
    manager = ProfileManager(trained_store, ProfileSchedule(window_size=100, min_refine_samples=20))

    def crash(version, activated_at):
        raise OSError("power loss")

    monkeypatch.setattr(trained_store, "_write_pointer", crash)
    with pytest.raises(ProfileStoreError):
        manager.swap_in(trained.copy_with(profile_version=2))
    assert manager.profile_version == 1
    for x in rng.random((10, 4)):
        assert manager.classify(x).profile_version == 1
    monkeypatch.undo()

    reopened = ProfileStore(str(trained_store.root))
    assert reopened.active_version() == 1
    assert reopened.load_active().profile_version == 1


def test_metric_identities_hold_with_empty_cells(rng):
    for tp, tn, fp, fn in rng.integers(0, 50, size=(100, 4)):
        counts = ConfusionCounts(int(tp), int(tn), int(fp), int(fn))
        if counts.sensitivity is not None:
            assert counts.sensitivity + counts.fn_rate == pytest.approx(1.0)
        else:
            assert tp + fn == 0
        if counts.specificity is not None:
            assert counts.specificity + counts.fp_rate == pytest.approx(1.0)
        else:
            assert tn + fp == 0


def _mutate(raw, rng):
    data = bytearray(raw)
    for _ in range(int(rng.integers(1, 20))):
        op = rng.integers(0, 3)
        pos = int(rng.integers(0, len(data) + 1))
        if op == 0 and data:
            data[min(pos, len(data) - 1)] = int(rng.integers(0, 256))
        elif op == 1:
            data[pos:pos] = bytes(rng.integers(0, 256, int(rng.integers(1, 8)), dtype=np.uint8))
        else:
            del data[pos:pos + int(rng.integers(1, 40))]
    return bytes(data)


def test_parser_and_features_never_raise(registry, phish_eml, ham_eml, rng):
    corpus = SyntheticCorpus(seed=61)
    seeds = [phish_eml, ham_eml, corpus.raw_message(PHISH, 1), corpus.raw_message(ZERO_DAY, 2)]
    inputs = [bytes(rng.integers(0, 256, int(rng.integers(0, 2000)), dtype=np.uint8)) for _ in range(5000)]
    inputs += [_mutate(seeds[i % len(seeds)], rng) for i in range(5000)]
    for raw in inputs:
        long_vector = extract_long(parse_email(raw), registry)
        short = reduce_short(long_vector, registry)
        assert all(0.0 <= v <= 1.0 for v in short.as_array())
