#!/usr/bin/env python3
"""
Online evolving fuzzy inference

First-order Takagi-Sugeno inference over the m most strongly firing rules,
with rule creation driven by ECM events, consequent learning by weighted
recursive least squares and pruning of idle online rules. RuleBase values
are treated as immutable snapshots: learning returns a new RuleBase, so a
reader holding a reference never observes a half-applied update.
"""

import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    DECISION_THRESHOLD,
    FIRING_THRESHOLD,
    FORGETTING_FACTOR,
    M_ACTIVE,
    PRUNE_WINDOW,
    RLS_INITIAL_COVARIANCE,
    SIGMA_MIN,
)
from src.ecm import EcmEvent, EcmParams, EvolvingClusterer, Cluster
from src.exceptions import ColdStartError
from src.features import VectorMode
from src.fuzzy_rule import FuzzyRule, RuleOrigin
from src.labels import Label
from src.logger import get_logger
from src.schemas import RULEBASE_SCHEMA, RULEBASE_SCHEMA_ID, validate_document

logger = get_logger(__name__)


@dataclass(frozen=True)
class InferenceParams:
    m_active: int = M_ACTIVE
    decision_threshold: float = DECISION_THRESHOLD
    forgetting_factor: float = FORGETTING_FACTOR
    prune_window: int = PRUNE_WINDOW
    firing_threshold: float = FIRING_THRESHOLD
    sigma_min: float = SIGMA_MIN
    initial_covariance: float = RLS_INITIAL_COVARIANCE

    def __post_init__(self):
        if self.m_active < 1:
            raise ValueError("m_active must be at least 1")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must lie in (0, 1)")
        if not 0.9 < self.forgetting_factor <= 1.0:
            raise ValueError("forgetting factor must lie in (0.9, 1]")
        if self.prune_window < 1:
            raise ValueError("prune_window must be at least 1")
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive")

    def to_document(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_document(cls, document: Dict[str, Any]) -> "InferenceParams":
        known = {k: v for k, v in document.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class Verdict:
    score: float
    label: Label
    fired_rules: Tuple[Tuple[int, float], ...]
    latency: float
    profile_version: int

    @property
    def is_phish(self) -> bool:
        return self.label is Label.PHISH


@dataclass(frozen=True)
class RuleStats:
    created: int = 0
    updated: int = 0
    deleted: int = 0


@dataclass(frozen=True, eq=False)
class RuleBase:
    rules: Tuple[FuzzyRule, ...]
    clusterer: EvolvingClusterer
    ecm: EcmParams = field(default_factory=EcmParams)
    inference: InferenceParams = field(default_factory=InferenceParams)
    profile_version: int = 0
    stats: RuleStats = field(default_factory=RuleStats)
    samples_seen: int = 0
    next_rule_id: int = 0
    vector_mode: VectorMode = VectorMode.SHORT
    dim: int = 4

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "vector_mode", VectorMode(self.vector_mode))
        for rule in self.rules:
            if rule.dim != self.dim:
                raise ValueError(f"Rule {rule.rule_id} has dimension {rule.dim}, rule base has {self.dim}")

    @classmethod
    def empty(
        cls,
        ecm: Optional[EcmParams] = None,
        inference: Optional[InferenceParams] = None,
        vector_mode: VectorMode = VectorMode.SHORT,
        dim: Optional[int] = None,
    ) -> "RuleBase":
        ecm = ecm or EcmParams()
        vector_mode = VectorMode(vector_mode)
        dim = dim or vector_mode.dim
        return cls(
            rules=(),
            clusterer=EvolvingClusterer(ecm, dim),
            ecm=ecm,
            inference=inference or InferenceParams(),
            vector_mode=vector_mode,
            dim=dim,
        )

    def __len__(self) -> int:
        return len(self.rules)

    @cached_property
    def _centers(self) -> np.ndarray:
        return np.array([r.centers for r in self.rules]).reshape(len(self.rules), self.dim)

    @cached_property
    def _widths(self) -> np.ndarray:
        return np.array([r.widths for r in self.rules]).reshape(len(self.rules), self.dim)

    @cached_property
    def _consequents(self) -> np.ndarray:
        return np.array([r.consequent for r in self.rules]).reshape(len(self.rules), self.dim + 1)

    @property
    def offline_count(self) -> int:
        return sum(1 for r in self.rules if r.origin is RuleOrigin.OFFLINE_ENHANCED)

    def rule_for_cluster(self, cluster_id: int) -> Optional[int]:
        for position, rule in enumerate(self.rules):
            if rule.cluster_id == cluster_id:
                return position
        return None

    def log_firing(self, x: np.ndarray) -> np.ndarray:
        """Log firing strength of every rule at x"""
        return -0.5 * np.sum(((x - self._centers) / self._widths) ** 2, axis=1)

    def select(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Indices of the m_active strongest rules and their normalized weights"""
        log_mu = self.log_firing(x)
        m = min(self.inference.m_active, len(self.rules))
        top = np.argsort(-log_mu, kind="stable")[:m]
        shifted = np.exp(log_mu[top] - log_mu[top].max())
        return top, shifted / shifted.sum()

    def raw_output(self, x: np.ndarray) -> float:
        """Un-clamped Takagi-Sugeno output"""
        top, weights = self.select(x)
        B = self._consequents[top]
        return float(weights @ (B[:, 0] + B[:, 1:] @ x))

    def copy_with(self, **changes) -> "RuleBase":
        return replace(self, **changes)

    def to_document(self, created_at: Optional[str] = None) -> Dict[str, Any]:
        document = {
            "schema": RULEBASE_SCHEMA_ID,
            "profile_version": self.profile_version,
            "vector_mode": self.vector_mode.value,
            "dim": self.dim,
            "params": {"ecm": self.ecm.to_document(), "inference": self.inference.to_document()},
            "clusters": [c.to_document() for c in self.clusterer.clusters],
            "rules": [r.to_document() for r in self.rules],
            "counters": {
                "created": self.stats.created,
                "updated": self.stats.updated,
                "deleted": self.stats.deleted,
                "samples_seen": self.samples_seen,
                "next_rule_id": self.next_rule_id,
                "next_cluster_id": self.clusterer.next_cluster_id,
            },
        }
        if created_at:
            document["created_at"] = created_at
        return document

    @classmethod
    def from_document(cls, document: Dict[str, Any]) -> "RuleBase":
        validate_document(document, RULEBASE_SCHEMA, "rule base")
        ecm = EcmParams.from_document(document["params"]["ecm"])
        counters = document["counters"]
        dim = document["dim"]
        clusters = [Cluster.from_document(c) for c in document["clusters"]]
        clusterer = EvolvingClusterer.from_clusters(
            ecm, clusters, dim,
            next_cluster_id=counters["next_cluster_id"],
            samples_seen=counters["samples_seen"],
        )
        return cls(
            rules=tuple(FuzzyRule.from_document(r) for r in document["rules"]),
            clusterer=clusterer,
            ecm=ecm,
            inference=InferenceParams.from_document(document["params"]["inference"]),
            profile_version=document["profile_version"],
            stats=RuleStats(counters["created"], counters["updated"], counters["deleted"]),
            samples_seen=counters["samples_seen"],
            next_rule_id=counters["next_rule_id"],
            vector_mode=document["vector_mode"],
            dim=dim,
        )


def classify(rb: RuleBase, x: np.ndarray) -> Verdict:
    """Score x against the m_active strongest rules of a snapshot"""
    started = time.perf_counter()
    if not rb.rules:
        raise ColdStartError("Rule base is empty; train a profile first")
    x = np.asarray(x, dtype=float)
    top, weights = rb.select(x)
    B = rb._consequents[top]
    raw = float(weights @ (B[:, 0] + B[:, 1:] @ x))
    score = float(np.clip(raw, 0.0, 1.0))
    label = Label.PHISH if score >= rb.inference.decision_threshold else Label.HAM
    fired = tuple((rb.rules[j].rule_id, float(w)) for j, w in zip(top, weights))
    return Verdict(
        score=score,
        label=label,
        fired_rules=fired,
        latency=time.perf_counter() - started,
        profile_version=rb.profile_version,
    )


def rls_update(
    rule: FuzzyRule,
    x: np.ndarray,
    target: float,
    weight: float,
    forgetting_factor: float,
    reset_covariance: float = RLS_INITIAL_COVARIANCE,
) -> FuzzyRule:
    """One weighted recursive least-squares step on the rule consequent"""
    if weight <= 0.0:
        return rule
    phi = np.concatenate(([1.0], np.asarray(x, dtype=float)))
    P = rule.covariance
    Pphi = P @ phi
    gain = Pphi / (forgetting_factor / weight + phi @ Pphi)
    error = target - rule.consequent @ phi
    consequent = rule.consequent + gain * error
    covariance = (P - np.outer(gain, Pphi)) / forgetting_factor
    covariance = 0.5 * (covariance + covariance.T)

    if not (np.all(np.isfinite(covariance)) and np.all(np.isfinite(consequent))):
        logger.warning(f"RLS covariance of rule {rule.rule_id} diverged, resetting to {reset_covariance:g}*I")
        return rule.evolve(covariance=np.eye(phi.shape[0]) * reset_covariance)
    return rule.evolve(consequent=consequent, covariance=covariance)


def _spawn_rule(rb: RuleBase, cluster: Cluster, target: float, ordinal: int) -> FuzzyRule:
    return FuzzyRule.create(
        rule_id=rb.next_rule_id,
        cluster_id=cluster.cluster_id,
        centers=cluster.center,
        widths=np.full(rb.dim, max(cluster.radius, rb.inference.sigma_min)),
        intercept=target,
        initial_covariance=rb.inference.initial_covariance,
        born_at=ordinal,
        version=rb.profile_version,
    )


def _follow_cluster(rule: FuzzyRule, old_center: np.ndarray, cluster: Cluster, sigma_min: float) -> FuzzyRule:
    """Move a rule's antecedent together with its cluster"""
    if rule.origin is RuleOrigin.ONLINE:
        widths = np.full(rule.dim, max(cluster.radius, sigma_min))
        return rule.evolve(centers=cluster.center, widths=widths)
    shifted = np.clip(rule.centers + (cluster.center - old_center), 0.0, 1.0)
    widths = np.maximum(rule.widths, max(cluster.radius, sigma_min))
    return rule.evolve(centers=shifted, widths=widths)


def learn_online(rb: RuleBase, x: np.ndarray, label: Optional[Label]) -> RuleBase:
    """One supervised (or, with label=None, unsupervised) online step"""
    x = np.asarray(x, dtype=float)
    params = rb.inference
    ordinal = rb.samples_seen
    clusterer = rb.clusterer.copy()
    step = clusterer.partial_fit(x, ordinal)
    cluster = clusterer.cluster(step.cluster_id)

    rules: List[FuzzyRule] = list(rb.rules)
    created = updated = deleted = 0
    next_rule_id = rb.next_rule_id

    linked = rb.rule_for_cluster(step.cluster_id)
    if step.event is EcmEvent.UPDATED and linked is not None:
        old_center = rb.clusterer.centers[rb.clusterer.index_of(step.cluster_id)]
        rules[linked] = _follow_cluster(rules[linked], old_center, cluster, params.sigma_min)

    if label is not None:
        target = Label(label).target
        if linked is None:
            rules.append(_spawn_rule(rb, cluster, target, ordinal))
            next_rule_id += 1
            created += 1
            logger.debug(f"Created rule {next_rule_id - 1} for cluster {cluster.cluster_id} at sample {ordinal}")

    # Firing bookkeeping and consequent learning see the structural changes above
    working = rb.copy_with(rules=tuple(rules), clusterer=clusterer, next_rule_id=next_rule_id)
    if working.rules:
        log_mu = working.log_firing(x)
        fired = np.flatnonzero(np.exp(log_mu) >= params.firing_threshold)
        for j in fired:
            rules[j] = rules[j].evolve(support=rules[j].support + 1, last_fired=ordinal)

        if label is not None:
            top, weights = working.select(x)
            for j, w in zip(top, weights):
                rules[j] = rls_update(
                    rules[j], x, target, float(w), params.forgetting_factor, params.initial_covariance
                )
                updated += 1

    # Prune idle online rules, always keeping one
    survivors = []
    for position, rule in enumerate(rules):
        idle = ordinal - max(rule.born_at, rule.last_fired)
        remaining = len(rules) - deleted
        if rule.origin is RuleOrigin.ONLINE and idle >= params.prune_window and remaining > 1:
            deleted += 1
            logger.debug(f"Pruned rule {rule.rule_id}, idle for {idle} samples")
            continue
        survivors.append(rule)

    stats = RuleStats(
        created=rb.stats.created + created,
        updated=rb.stats.updated + updated,
        deleted=rb.stats.deleted + deleted,
    )
    return rb.copy_with(
        rules=tuple(survivors),
        clusterer=clusterer,
        stats=stats,
        samples_seen=ordinal + 1,
        next_rule_id=next_rule_id,
    )


def learn_batch(rb: RuleBase, samples: Sequence[Tuple[np.ndarray, Optional[Label]]]) -> RuleBase:
    for x, label in samples:
        rb = learn_online(rb, x, label)
    return rb
