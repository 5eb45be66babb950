import math

import numpy as np
import pytest

from src.ecm import (
    Cluster,
    DistanceMetric,
    EcmEvent,
    EcmParams,
    EvolvingClusterer,
    clusters_to_rule_seeds,
    ecm_update,
    ecmc_refine,
    iter_ecmc,
)
from src.exceptions import PreconditionError
from src.fuzzy_rule import RuleOrigin
from src.labels import Label


def _cluster(center, radius=0.0, cluster_id=0):
    return Cluster(cluster_id=cluster_id, center=np.asarray(center, dtype=float), radius=radius,
                   member_count=1, created_at=0)


def test_first_sample_creates_cluster():
    clusters, index, event = ecm_update([], np.array([0.3, 0.1, 0.0, 0.5]), EcmParams(dthr=0.15))
    assert event is EcmEvent.CREATED
    assert index == 0
    assert np.array_equal(clusters[0].center, [0.3, 0.1, 0.0, 0.5])
    assert clusters[0].radius == 0.0


def test_covered_sample_changes_nothing():
    state = [_cluster([0.2, 0.2, 0.2, 0.2], radius=0.1)]
    clusters, index, event = ecm_update(state, np.array([0.25, 0.2, 0.2, 0.2]), EcmParams(dthr=0.15))
    assert event is EcmEvent.NONE
    assert index == 0
    assert np.array_equal(clusters[0].center, state[0].center)
    assert clusters[0].radius == 0.1
    assert clusters[0].member_count == 2


def test_update_moves_center_and_grows_radius():
    state = [_cluster([0.0, 0.0, 0.0, 0.0])]
    clusters, index, event = ecm_update(state, np.array([0.2, 0.0, 0.0, 0.0]), EcmParams(dthr=0.15))
    assert event is EcmEvent.UPDATED
    assert clusters[0].radius == pytest.approx(0.1)
    assert clusters[0].center == pytest.approx([0.1, 0.0, 0.0, 0.0])


def test_far_sample_creates_second_cluster():
    state = [_cluster([0.0, 0.0, 0.0, 0.0])]
    clusters, index, event = ecm_update(state, np.array([1.0, 0.0, 0.0, 0.0]), EcmParams(dthr=0.15))
    assert event is EcmEvent.CREATED
    assert len(clusters) == 2
    assert index == 1
    assert clusters[1].cluster_id == 1


def test_normalized_distance_divides_by_sqrt_dim():
    params = EcmParams(dthr=0.5, distance=DistanceMetric.NORMALIZED_EUCLIDEAN)
    d = params.distances(np.zeros((1, 4)), np.ones(4))
    assert d[0] == pytest.approx(1.0)
    assert EcmParams(dthr=0.5).distances(np.zeros((1, 4)), np.ones(4))[0] == pytest.approx(2.0)


def test_nearest_covering_cluster_wins():
    state = [_cluster([0.0, 0.0], radius=0.3, cluster_id=0), _cluster([0.2, 0.0], radius=0.3, cluster_id=1)]
    _, index, event = ecm_update(state, np.array([0.15, 0.0]), EcmParams(dthr=0.3))
    assert event is EcmEvent.NONE
    assert index == 1


@pytest.mark.parametrize("dthr", [0.05, 0.18, 0.4])
def test_stream_invariants(dthr, rng):
    clusterer = EvolvingClusterer(EcmParams(dthr=dthr), 4)
    for x in rng.random((3000, 4)):
        step = clusterer.partial_fit(x)
        center = clusterer.centers[step.index]
        assert np.linalg.norm(x - center) <= clusterer.radii[step.index] + 1e-9
    assert np.all(clusterer.radii <= dthr + 1e-12)
    assert np.all((clusterer.centers >= 0.0) & (clusterer.centers <= 1.0))
    assert clusterer.samples_seen == 3000
    assert len(set(clusterer.cluster_ids.tolist())) == len(clusterer)


def test_smaller_threshold_gives_more_clusters(rng):
    X = rng.random((1000, 4))
    coarse = EvolvingClusterer(EcmParams(dthr=0.4), 4).fit(X)
    fine = EvolvingClusterer(EcmParams(dthr=0.1), 4).fit(X)
    assert len(fine) > len(coarse)


def test_copy_is_independent(rng):
    clusterer = EvolvingClusterer(EcmParams(), 4).fit(rng.random((50, 4)))
    clone = clusterer.copy()
    clone.partial_fit(np.full(4, 0.99))
    clone.partial_fit(np.zeros(4))
    assert clone.samples_seen == clusterer.samples_seen + 2
    assert clusterer.centers.shape[0] <= clone.centers.shape[0]


def test_ecmc_empty_batch():
    with pytest.raises(PreconditionError):
        ecmc_refine(np.empty((0, 4)), [], EcmParams())


def test_ecmc_sse_never_increases(rng):
    blobs = np.vstack([rng.normal(c, 0.05, size=(60, 4)) for c in (0.2, 0.5, 0.8)]).clip(0, 1)
    seed = EvolvingClusterer(EcmParams(dthr=0.1), 4).fit(blobs).clusters
    sse = [s for _, _, s in iter_ecmc(blobs, seed, EcmParams(dthr=0.1))]
    assert all(b <= a + 1e-9 for a, b in zip(sse, sse[1:]))


def test_ecmc_drops_empty_clusters():
    X = np.array([[0.1, 0.1], [0.12, 0.1], [0.9, 0.9], [0.88, 0.9]])
    seed = [_cluster([0.1, 0.1], cluster_id=0), _cluster([0.9, 0.9], cluster_id=1),
            _cluster([0.5, 0.0], cluster_id=7)]
    clusters = ecmc_refine(X, seed, EcmParams(dthr=0.05))
    assert [c.cluster_id for c in clusters] == [0, 1]
    assert clusters[0].center == pytest.approx([0.11, 0.1])
    assert [c.radius for c in clusters] == pytest.approx([0.01, 0.01])
    assert [c.member_count for c in clusters] == [2, 2]


def test_ecmc_splits_members_beyond_threshold():
    X = np.array([[0.1, 0.1], [0.12, 0.1], [0.9, 0.9], [0.88, 0.9]])
    seed = [_cluster([0.1, 0.1], cluster_id=0), _cluster([0.9, 0.9], cluster_id=1)]
    clusters = ecmc_refine(X, seed, EcmParams(dthr=0.005), next_cluster_id=10)
    assert all(c.radius <= 0.005 + 1e-12 for c in clusters)
    assert sum(c.member_count for c in clusters) == 4
    new_ids = [c.cluster_id for c in clusters if c.cluster_id not in (0, 1)]
    assert new_ids and min(new_ids) >= 10
    assert len({c.cluster_id for c in clusters}) == len(clusters)


@pytest.mark.parametrize("distance", list(DistanceMetric))
def test_ecmc_members_lie_within_their_radius(distance, rng):
    blobs = np.vstack([rng.normal(c, 0.08, size=(80, 4)) for c in (0.25, 0.5, 0.75)]).clip(0, 1)
    params = EcmParams(dthr=0.1, distance=distance)
    seed = EvolvingClusterer(params, 4).fit(blobs[::7]).clusters
    for clusters, assignment, _ in iter_ecmc(blobs, seed, params):
        centers = np.array([c.center for c in clusters])
        radii = np.array([c.radius for c in clusters])
        d = params.distances(centers[assignment], blobs)
        assert np.all(d <= radii[assignment] + 1e-9)
        assert np.all(radii <= params.dthr + 1e-9)
        assert np.array_equal(np.bincount(assignment, minlength=len(clusters)),
                              [c.member_count for c in clusters])


def test_ecmc_without_seed_runs_ecm_first(rng):
    X = rng.random((200, 4))
    clusters = ecmc_refine(X, [], EcmParams(dthr=0.2))
    assert clusters
    assert sum(c.member_count for c in clusters) == 200


def test_rule_seeds_from_clusters():
    clusters = [_cluster([0.1, 0.1], radius=0.01, cluster_id=3), _cluster([0.9, 0.9], radius=0.2, cluster_id=4),
                _cluster([0.5, 0.1], radius=0.0, cluster_id=5)]
    labeled = [
        (np.array([0.1, 0.12]), Label.HAM),
        (np.array([0.11, 0.1]), Label.PHISH),
        (np.array([0.9, 0.85]), Label.PHISH),
    ]
    rules = clusters_to_rule_seeds(clusters, labeled, sigma_min=0.05, first_rule_id=10,
                                   origin=RuleOrigin.OFFLINE_ENHANCED)
    assert [r.rule_id for r in rules] == [10, 11, 12]
    assert [r.cluster_id for r in rules] == [3, 4, 5]
    assert [r.consequent[0] for r in rules] == [0.5, 1.0, 0.5]
    assert np.all(rules[0].widths == 0.05)
    assert np.all(rules[1].widths == 0.2)
    assert [r.support for r in rules] == [2, 1, 0]
    assert all(r.origin is RuleOrigin.OFFLINE_ENHANCED for r in rules)


def test_dthr_range():
    with pytest.raises(ValueError):
        EcmParams(dthr=0.0)
    with pytest.raises(ValueError):
        EcmParams(dthr=1.5)
    assert math.isclose(EcmParams().dthr, 0.18)
