#!/usr/bin/env python3
"""
Evolving clustering

ECM is a one-pass online clustering: each sample either falls inside an
existing cluster, grows the cluster that can absorb it within the distance
threshold, or opens a new cluster. ECMc refines a batch offline by
reassignment and recentering seeded from the online clusters. Both feed the
fuzzy rule base: every cluster can carry exactly one rule.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config import ECM_DISTANCE, ECM_DTHR, ECMC_MAX_ITERS, RLS_INITIAL_COVARIANCE, SIGMA_MIN
from src.exceptions import PreconditionError
from src.fuzzy_rule import FuzzyRule, RuleOrigin
from src.labels import Label
from src.logger import get_logger

logger = get_logger(__name__)


class DistanceMetric(str, Enum):
    EUCLIDEAN = "euclidean"
    NORMALIZED_EUCLIDEAN = "normalized_euclidean"


class EcmEvent(str, Enum):
    NONE = "none"
    UPDATED = "updated"
    CREATED = "created"


@dataclass(frozen=True)
class EcmParams:
    dthr: float = ECM_DTHR
    distance: DistanceMetric = DistanceMetric(ECM_DISTANCE)

    def __post_init__(self):
        object.__setattr__(self, "distance", DistanceMetric(self.distance))
        if not 0.0 < self.dthr <= 1.0:
            raise ValueError(f"dthr must lie in (0, 1], got {self.dthr}")

    def distances(self, centers: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Distance from x to every row of centers"""
        d = np.sqrt(np.sum((centers - x) ** 2, axis=-1))
        if self.distance is DistanceMetric.NORMALIZED_EUCLIDEAN:
            d = d / np.sqrt(x.shape[-1])
        return d

    def to_document(self) -> Dict[str, Any]:
        return {"dthr": self.dthr, "distance": self.distance.value}

    @classmethod
    def from_document(cls, document: Dict[str, Any]) -> "EcmParams":
        return cls(dthr=document["dthr"], distance=document["distance"])


@dataclass(frozen=True, eq=False)
class Cluster:
    cluster_id: int
    center: np.ndarray
    radius: float
    member_count: int
    created_at: int

    def __post_init__(self):
        center = np.array(self.center, dtype=float)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)

    def to_document(self) -> Dict[str, Any]:
        return {
            "cluster_id": self.cluster_id,
            "center": self.center.tolist(),
            "radius": float(self.radius),
            "member_count": int(self.member_count),
            "created_at": int(self.created_at),
        }

    @classmethod
    def from_document(cls, document: Dict[str, Any]) -> "Cluster":
        return cls(
            cluster_id=document["cluster_id"],
            center=document["center"],
            radius=document["radius"],
            member_count=document["member_count"],
            created_at=document["created_at"],
        )


@dataclass(frozen=True)
class EcmStep:
    index: int
    cluster_id: int
    event: EcmEvent


class EvolvingClusterer:
    """Array-backed ECM state for streaming use"""

    def __init__(self, params: EcmParams, dim: int):
        self.params = params
        self.dim = dim
        self.samples_seen = 0
        self.next_cluster_id = 0
        self._centers = np.empty((0, dim))
        self._radii = np.empty(0)
        self._counts = np.empty(0, dtype=int)
        self._created = np.empty(0, dtype=int)
        self._ids = np.empty(0, dtype=int)

    def __len__(self) -> int:
        return self._radii.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def radii(self) -> np.ndarray:
        return self._radii

    @property
    def cluster_ids(self) -> np.ndarray:
        return self._ids

    def index_of(self, cluster_id: int) -> Optional[int]:
        hits = np.flatnonzero(self._ids == cluster_id)
        return int(hits[0]) if hits.size else None

    def cluster(self, cluster_id: int) -> Optional[Cluster]:
        index = self.index_of(cluster_id)
        return None if index is None else self._cluster_at(index)

    def _cluster_at(self, index: int) -> Cluster:
        return Cluster(
            cluster_id=int(self._ids[index]),
            center=self._centers[index].copy(),
            radius=float(self._radii[index]),
            member_count=int(self._counts[index]),
            created_at=int(self._created[index]),
        )

    @property
    def clusters(self) -> List[Cluster]:
        return [self._cluster_at(i) for i in range(len(self))]

    def _append(self, center: np.ndarray, radius: float, count: int, created_at: int, cluster_id: int) -> int:
        self._centers = np.vstack([self._centers, center[None, :]])
        self._radii = np.append(self._radii, radius)
        self._counts = np.append(self._counts, count)
        self._created = np.append(self._created, created_at)
        self._ids = np.append(self._ids, cluster_id)
        self.next_cluster_id = max(self.next_cluster_id, cluster_id + 1)
        return len(self) - 1

    def partial_fit(self, x: np.ndarray, ordinal: Optional[int] = None) -> EcmStep:
        """Process one sample"""
        x = np.asarray(x, dtype=float)
        ordinal = self.samples_seen if ordinal is None else ordinal
        self.samples_seen += 1

        if len(self) == 0:
            index = self._append(x.copy(), 0.0, 1, ordinal, self.next_cluster_id)
            return EcmStep(index, int(self._ids[index]), EcmEvent.CREATED)

        d = self.params.distances(self._centers, x)
        covered = np.flatnonzero(d <= self._radii)
        if covered.size:
            index = int(covered[np.argmin(d[covered])])
            self._counts[index] += 1
            return EcmStep(index, int(self._ids[index]), EcmEvent.NONE)

        s = d + self._radii
        index = int(np.argmin(s))
        if s[index] > 2.0 * self.params.dthr:
            index = self._append(x.copy(), 0.0, 1, ordinal, self.next_cluster_id)
            return EcmStep(index, int(self._ids[index]), EcmEvent.CREATED)

        # d[index] > radius >= 0 here, so the ratio is well defined
        new_radius = s[index] / 2.0
        center = x + (self._centers[index] - x) * (new_radius / d[index])
        self._centers[index] = np.clip(center, 0.0, 1.0)
        self._radii[index] = min(new_radius, self.params.dthr)
        self._counts[index] += 1
        return EcmStep(index, int(self._ids[index]), EcmEvent.UPDATED)

    def fit(self, samples: np.ndarray) -> "EvolvingClusterer":
        for x in np.asarray(samples, dtype=float):
            self.partial_fit(x)
        return self

    def nearest(self, x: np.ndarray) -> int:
        return int(np.argmin(self.params.distances(self._centers, x)))

    def copy(self) -> "EvolvingClusterer":
        clone = EvolvingClusterer(self.params, self.dim)
        clone.samples_seen = self.samples_seen
        clone.next_cluster_id = self.next_cluster_id
        clone._centers = self._centers.copy()
        clone._radii = self._radii.copy()
        clone._counts = self._counts.copy()
        clone._created = self._created.copy()
        clone._ids = self._ids.copy()
        return clone

    @classmethod
    def from_clusters(
        cls,
        params: EcmParams,
        clusters: Sequence[Cluster],
        dim: int,
        next_cluster_id: int = 0,
        samples_seen: int = 0,
    ) -> "EvolvingClusterer":
        clusterer = cls(params, dim)
        for cluster in clusters:
            if cluster.center.shape != (dim,):
                raise ValueError(f"Cluster {cluster.cluster_id} has dimension {cluster.center.shape}, expected {dim}")
            clusterer._append(
                cluster.center.copy(), float(cluster.radius), cluster.member_count,
                cluster.created_at, cluster.cluster_id,
            )
        clusterer.next_cluster_id = max(clusterer.next_cluster_id, next_cluster_id)
        clusterer.samples_seen = samples_seen
        return clusterer


def ecm_update(
    state: Sequence[Cluster], x: np.ndarray, params: EcmParams, ordinal: int = 0
) -> Tuple[List[Cluster], int, EcmEvent]:
    """Functional ECM step over a list of clusters"""
    x = np.asarray(x, dtype=float)
    next_id = max((c.cluster_id for c in state), default=-1) + 1
    clusterer = EvolvingClusterer.from_clusters(params, state, x.shape[0], next_cluster_id=next_id)
    step = clusterer.partial_fit(x, ordinal)
    return clusterer.clusters, step.index, step.event


def _assign(samples: np.ndarray, centers: np.ndarray) -> np.ndarray:
    sq = ((samples[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(sq, axis=1)


def _compact(
    assignment: np.ndarray, centers: np.ndarray, ids: np.ndarray, created: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Drop clusters without members and renumber the assignment"""
    occupied = np.unique(assignment)
    if occupied.size == centers.shape[0]:
        return assignment, centers, ids, created
    remap = np.full(centers.shape[0], -1)
    remap[occupied] = np.arange(occupied.size)
    return remap[assignment], centers[occupied], ids[occupied], created[occupied]


def _split_violators(
    samples: np.ndarray, violators: np.ndarray, params: EcmParams, first_id: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """ECM over the members that sit farther than dthr from their center"""
    clusterer = EvolvingClusterer(params, samples.shape[1])
    local = np.array([clusterer.partial_fit(samples[i], int(i)).index for i in violators])
    ids = first_id + np.arange(len(clusterer))
    created = np.array([c.created_at for c in clusterer.clusters])
    return clusterer.centers.copy(), ids, created, local


def iter_ecmc(
    samples: np.ndarray,
    seed: Sequence[Cluster],
    params: EcmParams,
    max_iters: int = ECMC_MAX_ITERS,
    next_cluster_id: Optional[int] = None,
) -> Iterator[Tuple[List[Cluster], np.ndarray, float]]:
    """Yield (clusters, assignment, SSE) after every reassign/recenter pass

    Members farther than dthr from their recentered cluster are split off
    into new clusters, so every yielded radius is both the true member
    maximum and at most dthr.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise PreconditionError("ECMc needs a non-empty batch")
    dim = samples.shape[1]
    if not seed:
        seed = EvolvingClusterer(params, dim).fit(samples).clusters

    scale = dim if params.distance is DistanceMetric.NORMALIZED_EUCLIDEAN else 1
    ids = np.array([c.cluster_id for c in seed])
    created = np.array([c.created_at for c in seed])
    centers = np.array([c.center for c in seed], dtype=float)
    next_id = max(int(ids.max()) + 1, next_cluster_id or 0)
    assignment = None

    for iteration in range(max_iters):
        n_before = centers.shape[0]
        new_assignment, centers, ids, created = _compact(_assign(samples, centers), centers, ids, created)
        if centers.shape[0] < n_before:
            assignment = None

        stable = assignment is not None and np.array_equal(assignment, new_assignment)
        assignment = new_assignment
        counts = np.bincount(assignment, minlength=centers.shape[0])
        sums = np.zeros_like(centers)
        np.add.at(sums, assignment, samples)
        centers = np.clip(sums / counts[:, None], 0.0, 1.0)

        sq = ((samples - centers[assignment]) ** 2).sum(axis=1) / scale
        violators = np.flatnonzero(np.sqrt(sq) > params.dthr)
        if violators.size:
            extra_centers, extra_ids, extra_created, local = _split_violators(samples, violators, params, next_id)
            assignment[violators] = centers.shape[0] + local
            centers = np.vstack([centers, extra_centers])
            ids = np.concatenate([ids, extra_ids])
            created = np.concatenate([created, extra_created])
            next_id += extra_ids.size
            assignment, centers, ids, created = _compact(assignment, centers, ids, created)
            counts = np.bincount(assignment, minlength=centers.shape[0])
            sq = ((samples - centers[assignment]) ** 2).sum(axis=1) / scale
            stable = False

        sse = float(sq.sum())
        radii = np.zeros(centers.shape[0])
        np.maximum.at(radii, assignment, np.sqrt(sq))

        clusters = [
            Cluster(cluster_id=int(ids[k]), center=centers[k], radius=float(radii[k]),
                    member_count=int(counts[k]), created_at=int(created[k]))
            for k in range(centers.shape[0])
        ]
        yield clusters, assignment.copy(), sse
        if stable:
            logger.debug(f"ECMc converged after {iteration + 1} passes, SSE={sse:.6f}")
            return


def ecmc_refine(
    samples: np.ndarray,
    seed: Sequence[Cluster],
    params: EcmParams,
    max_iters: int = ECMC_MAX_ITERS,
    next_cluster_id: Optional[int] = None,
) -> List[Cluster]:
    """Offline refinement of a batch seeded from online clusters"""
    clusters: List[Cluster] = []
    for clusters, _, _ in iter_ecmc(samples, seed, params, max_iters, next_cluster_id):
        pass
    return clusters


def clusters_to_rule_seeds(
    state: Sequence[Cluster],
    labeled: Sequence[Tuple[np.ndarray, Label]],
    sigma_min: float = SIGMA_MIN,
    first_rule_id: int = 0,
    initial_covariance: float = RLS_INITIAL_COVARIANCE,
    origin: RuleOrigin = RuleOrigin.ONLINE,
) -> List[FuzzyRule]:
    """One rule per cluster; the intercept is the mean label of the cluster's labeled members"""
    if not state:
        return []
    centers = np.array([c.center for c in state])
    targets: List[List[float]] = [[] for _ in state]
    if labeled:
        X = np.array([np.asarray(x, dtype=float) for x, _ in labeled])
        for k, (_, label) in zip(_assign(X, centers), labeled):
            targets[k].append(Label(label).target)

    rules = []
    for k, cluster in enumerate(state):
        width = max(cluster.radius, sigma_min)
        rules.append(
            FuzzyRule.create(
                rule_id=first_rule_id + k,
                cluster_id=cluster.cluster_id,
                centers=cluster.center,
                widths=np.full(cluster.center.shape[0], width),
                intercept=float(np.mean(targets[k])) if targets[k] else 0.5,
                initial_covariance=initial_covariance,
                born_at=cluster.created_at,
                origin=origin,
            ).evolve(support=len(targets[k]))
        )
    return rules
