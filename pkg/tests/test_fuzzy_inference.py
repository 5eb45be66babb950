import logging

import numpy as np
import pytest

from src.exceptions import ColdStartError
from src.fuzzy_inference import (
    InferenceParams,
    RuleBase,
    classify,
    learn_batch,
    learn_online,
    rls_update,
)
from src.fuzzy_rule import FuzzyRule, RuleOrigin
from src.labels import Label


def _random_rulebase(make_rulebase, rng, n_rules=6, dim=4, m_active=3):
    return make_rulebase(
        centers=rng.random((n_rules, dim)),
        widths=rng.uniform(0.02, 0.4, size=(n_rules, dim)),
        consequents=rng.normal(0.5, 0.5, size=(n_rules, dim + 1)),
        m_active=m_active,
    )


def test_cold_start():
    with pytest.raises(ColdStartError):
        classify(RuleBase.empty(), np.zeros(4))


def test_weights_normalized_and_score_clamped(make_rulebase, rng):
    for _ in range(20):
        rb = _random_rulebase(make_rulebase, rng)
        for x in rng.random((25, 4)):
            verdict = classify(rb, x)
            weights = [w for _, w in verdict.fired_rules]
            assert len(weights) == 3
            assert sum(weights) == pytest.approx(1.0, abs=1e-9)
            assert 0.0 <= verdict.score <= 1.0
            assert verdict.label is (Label.PHISH if verdict.score >= 0.5 else Label.HAM)


def test_far_input_does_not_underflow(make_rulebase):
    rb = make_rulebase(centers=[[0.0, 0.0], [0.01, 0.0]], widths=0.001, consequents=[[0.2, 0, 0], [0.9, 0, 0]])
    verdict = classify(rb, np.array([1.0, 1.0]))
    assert sum(w for _, w in verdict.fired_rules) == pytest.approx(1.0)
    assert np.isfinite(verdict.score)
    # The second rule is much closer in log space
    assert verdict.fired_rules[0][0] == 1
    assert verdict.score == pytest.approx(0.9)


def test_threshold_tie_is_phish(make_rulebase):
    rb = make_rulebase(centers=[[0.5, 0.5, 0.5, 0.5]], widths=0.1, consequents=[[0.5, 0, 0, 0, 0]])
    verdict = classify(rb, np.array([0.1, 0.9, 0.3, 0.7]))
    assert verdict.score == 0.5
    assert verdict.label is Label.PHISH
    assert verdict.is_phish


def test_only_m_strongest_rules_contribute(make_rulebase):
    rb = make_rulebase(
        centers=[[0.1], [0.2], [0.9]], widths=0.1, consequents=[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]], m_active=2
    )
    verdict = classify(rb, np.array([0.15]))
    assert {rule_id for rule_id, _ in verdict.fired_rules} == {0, 1}
    assert verdict.score == 0.0


def test_verdict_carries_profile_version(make_rulebase):
    rb = make_rulebase(centers=[[0.5, 0.5, 0.5, 0.5]], widths=0.1, consequents=[[0.1, 0, 0, 0, 0]], profile_version=7)
    verdict = classify(rb, np.full(4, 0.5))
    assert verdict.profile_version == 7
    assert verdict.latency >= 0.0


def _fresh_rule(dim, c=1000.0):
    return FuzzyRule.create(rule_id=0, cluster_id=0, centers=np.zeros(dim), widths=np.ones(dim),
                            intercept=0.0, initial_covariance=c)


def test_rls_single_step_closed_form():
    rule = rls_update(_fresh_rule(4), np.zeros(4), target=1.0, weight=1.0, forgetting_factor=0.99)
    assert rule.consequent[0] == pytest.approx(1000.0 / (0.99 + 1000.0))
    assert np.allclose(rule.consequent[1:], 0.0)


def test_rls_matches_ridge_normal_equations(rng):
    X = rng.random((60, 4))
    y = rng.random(60)
    rule = _fresh_rule(4, c=1000.0)
    for x, target in zip(X, y):
        rule = rls_update(rule, x, float(target), weight=1.0, forgetting_factor=1.0)
    Phi = np.hstack([np.ones((60, 1)), X])
    expected = np.linalg.solve(Phi.T @ Phi + np.eye(5) / 1000.0, Phi.T @ y)
    assert rule.consequent == pytest.approx(expected, abs=1e-6)
    assert np.allclose(rule.covariance, rule.covariance.T)


def test_rls_zero_weight_is_noop():
    rule = _fresh_rule(4)
    assert rls_update(rule, np.ones(4), 1.0, weight=0.0, forgetting_factor=0.99) is rule


def test_rls_non_finite_resets_covariance(caplog):
    rule = _fresh_rule(2).evolve(consequent=np.array([0.3, 0.1, 0.2]))
    with caplog.at_level(logging.WARNING):
        updated = rls_update(rule, np.array([np.nan, 0.0]), 1.0, weight=1.0, forgetting_factor=0.99,
                             reset_covariance=50.0)
    assert np.array_equal(updated.consequent, rule.consequent)
    assert np.array_equal(updated.covariance, np.eye(3) * 50.0)
    assert "diverged" in caplog.text


def test_first_labeled_sample_spawns_rule():
    rb = learn_online(RuleBase.empty(), np.array([0.2, 0.4, 0.1, 0.3]), Label.PHISH)
    assert len(rb.rules) == 1
    rule = rb.rules[0]
    assert rule.origin is RuleOrigin.ONLINE
    assert rule.consequent[0] == pytest.approx(1.0)
    assert rule.centers == pytest.approx([0.2, 0.4, 0.1, 0.3])
    assert rule.widths == pytest.approx(np.full(4, 0.05))
    assert rb.stats.created == 1
    assert rb.samples_seen == 1


def test_unlabeled_sample_only_clusters():
    rb = learn_online(RuleBase.empty(), np.array([0.2, 0.4, 0.1, 0.3]), None)
    assert len(rb.rules) == 0
    assert len(rb.clusterer) == 1
    rb = learn_online(rb, np.array([0.2, 0.4, 0.1, 0.3]), Label.HAM)
    assert len(rb.rules) == 1
    assert rb.rules[0].consequent[0] == pytest.approx(0.0)


def test_learning_returns_new_snapshot():
    before = learn_online(RuleBase.empty(), np.full(4, 0.2), Label.HAM)
    centers = before.clusterer.centers.copy()
    after = learn_online(before, np.full(4, 0.9), Label.PHISH)
    assert len(before.rules) == 1
    assert len(after.rules) == 2
    assert np.array_equal(before.clusterer.centers, centers)
    assert before.samples_seen == 1


def test_idle_online_rules_are_pruned():
    params = InferenceParams(prune_window=5)
    rb = RuleBase.empty(inference=params)
    rb = learn_online(rb, np.full(4, 0.1), Label.HAM)
    rb = learn_online(rb, np.full(4, 0.9), Label.PHISH)
    assert len(rb.rules) == 2
    for _ in range(4):
        rb = learn_online(rb, np.full(4, 0.1), Label.HAM)
    assert len(rb.rules) == 2
    rb = learn_online(rb, np.full(4, 0.1), Label.HAM)
    assert [r.rule_id for r in rb.rules] == [0]
    assert rb.stats.deleted == 1


def test_last_rule_is_never_pruned(rng):
    rb = RuleBase.empty(inference=InferenceParams(prune_window=3))
    rb = learn_online(rb, np.zeros(4), Label.HAM)
    for x in rng.uniform(0.6, 1.0, size=(10, 4)):
        rb = learn_online(rb, x, None)
    assert len(rb.rules) == 1


def test_offline_rules_are_not_pruned(make_rulebase):
    rb = make_rulebase(centers=[[0.1] * 4, [0.9] * 4], widths=0.05, consequents=np.zeros((2, 5)), prune_window=2)
    rb = learn_batch(rb, [(np.full(4, 0.1), Label.HAM)] * 5)
    assert len(rb.rules) == 2


def test_supervised_stream_learns_both_classes(rng):
    rb = RuleBase.empty()
    samples = []
    for _ in range(200):
        if rng.random() < 0.5:
            samples.append((rng.normal(0.8, 0.03, 4).clip(0, 1), Label.PHISH))
        else:
            samples.append((rng.normal(0.1, 0.03, 4).clip(0, 1), Label.HAM))
    rb = learn_batch(rb, samples)
    assert classify(rb, np.full(4, 0.8)).label is Label.PHISH
    assert classify(rb, np.full(4, 0.1)).label is Label.HAM


def test_document_round_trip_preserves_verdicts(trained, rng):
    reloaded = RuleBase.from_document(trained.to_document())
    for x in rng.random((20, 4)):
        assert classify(reloaded, x).score == classify(trained, x).score
    assert len(reloaded.clusterer) == len(trained.clusterer)
