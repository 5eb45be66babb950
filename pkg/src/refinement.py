#!/usr/bin/env python3
"""
Offline rule refinement

Given a buffered window of labeled samples and a snapshot of the live rule
base, re-cluster the window with ECMc, rebuild the Gaussian antecedents,
tune centers and widths by gradient descent on the window MSE and refit the
consequents by weighted least squares. The output uses the same rule format
as the online engine and is only accepted if it does not do worse than the
snapshot on the same window.

Also hosts the initial offline training used to bootstrap a profile.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import (
    DIVERGENCE_TOLERANCE,
    ECMC_MAX_ITERS,
    EPOCHS,
    L2_PENALTY,
    LEARNING_RATE,
    MIN_REFINE_SAMPLES,
    WINDOW_SIZE,
)
from src.ecm import EcmParams, EvolvingClusterer, clusters_to_rule_seeds, ecmc_refine
from src.exceptions import ColdStartError, InsufficientWindowError, PreconditionError
from src.features import VectorMode
from src.fuzzy_inference import InferenceParams, RuleBase
from src.fuzzy_rule import FuzzyRule, RuleOrigin
from src.labels import Label
from src.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class RefinementHyper:
    learning_rate: float = LEARNING_RATE
    epochs: int = EPOCHS
    l2: float = L2_PENALTY
    min_refine_samples: int = MIN_REFINE_SAMPLES
    divergence_tolerance: float = DIVERGENCE_TOLERANCE
    ecmc_max_iters: int = ECMC_MAX_ITERS

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.l2 < 0:
            raise ValueError("epochs and l2 must be non-negative")
        if self.min_refine_samples < 1:
            raise ValueError("min_refine_samples must be at least 1")


@dataclass(frozen=True, eq=False)
class LabeledSample:
    x: np.ndarray
    label: Label
    timestamp: int = 0


@dataclass(frozen=True, eq=False)
class ProfileWindow:
    """A capture of labeled stream samples plus the rule base they were seen with"""
    samples: Tuple[LabeledSample, ...]
    snapshot: RuleBase
    window_size: int = WINDOW_SIZE

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if len(self.samples) > self.window_size:
            raise ValueError(f"Window holds {len(self.samples)} samples, capacity is {self.window_size}")
        if any(s.label is None for s in self.samples):
            raise ValueError("Profile windows hold labeled samples only")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def X(self) -> np.ndarray:
        if not self.samples:
            return np.empty((0, self.snapshot.dim))
        return np.array([s.x for s in self.samples], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array([Label(s.label).target for s in self.samples], dtype=float)


class RefinementStatus(str, Enum):
    ACCEPTED = "accepted"
    NO_IMPROVEMENT = "no_improvement"
    DIVERGED = "diverged"


@dataclass(frozen=True, eq=False)
class RefinementResult:
    status: RefinementStatus
    rulebase: RuleBase
    mse_before: float
    mse_after: float
    epochs_run: int
    window_samples: int
    loss_trace: Tuple[float, ...] = field(default=())

    @property
    def accepted(self) -> bool:
        return self.status is RefinementStatus.ACCEPTED

    @property
    def no_improvement(self) -> bool:
        return not self.accepted


@dataclass
class RuleParams:
    """Stacked antecedent and consequent arrays of a rule base"""
    centers: np.ndarray
    widths: np.ndarray
    consequents: np.ndarray

    @classmethod
    def of(cls, rules: Sequence[FuzzyRule], dim: int) -> "RuleParams":
        n = len(rules)
        return cls(
            centers=np.array([r.centers for r in rules], dtype=float).reshape(n, dim),
            widths=np.array([r.widths for r in rules], dtype=float).reshape(n, dim),
            consequents=np.array([r.consequent for r in rules], dtype=float).reshape(n, dim + 1),
        )

    def copy(self) -> "RuleParams":
        return RuleParams(self.centers.copy(), self.widths.copy(), self.consequents.copy())


def active_mask(params: RuleParams, X: np.ndarray, m_active: int) -> np.ndarray:
    """Boolean (samples, rules) matrix marking each sample's top-m rules"""
    n, r = X.shape[0], params.centers.shape[0]
    mask = np.zeros((n, r), dtype=bool)
    if n == 0 or r == 0:
        return mask
    log_mu = _log_firing(params, X)
    m = min(m_active, r)
    top = np.argsort(-log_mu, axis=1, kind="stable")[:, :m]
    np.put_along_axis(mask, top, True, axis=1)
    return mask


def _log_firing(params: RuleParams, X: np.ndarray) -> np.ndarray:
    diff = (X[:, None, :] - params.centers[None, :, :]) / params.widths[None, :, :]
    return -0.5 * np.sum(diff ** 2, axis=2)


def _forward(params: RuleParams, X: np.ndarray, mask: np.ndarray):
    """Normalized weights, per-rule outputs and the un-clamped model output"""
    log_mu = np.where(mask, _log_firing(params, X), -np.inf)
    peak = log_mu.max(axis=1, keepdims=True)
    unnormalized = np.where(mask, np.exp(log_mu - peak), 0.0)
    weights = unnormalized / unnormalized.sum(axis=1, keepdims=True)
    outputs = params.consequents[:, 0][None, :] + X @ params.consequents[:, 1:].T
    y_hat = np.sum(weights * outputs, axis=1)
    return weights, outputs, y_hat


def window_mse(params: RuleParams, X: np.ndarray, y: np.ndarray, m_active: int,
               mask: Optional[np.ndarray] = None) -> float:
    if X.shape[0] == 0:
        return 0.0
    if params.centers.shape[0] == 0:
        raise ColdStartError("Cannot score a window against an empty rule base")
    mask = active_mask(params, X, m_active) if mask is None else mask
    _, _, y_hat = _forward(params, X, mask)
    return float(np.mean((y_hat - y) ** 2))


def gradients(params: RuleParams, X: np.ndarray, y: np.ndarray, mask: np.ndarray) -> RuleParams:
    """Analytic MSE gradients with the active sets held fixed"""
    grads = RuleParams(
        np.zeros_like(params.centers), np.zeros_like(params.widths), np.zeros_like(params.consequents)
    )
    n = X.shape[0]
    if n == 0:
        return grads
    weights, outputs, y_hat = _forward(params, X, mask)
    g = 2.0 * (y_hat - y) / n
    # dL/dlog(mu_j) for every sample and rule
    d_log_mu = g[:, None] * weights * (outputs - y_hat[:, None])
    diff = X[:, None, :] - params.centers[None, :, :]
    sigma = params.widths[None, :, :]
    grads.centers = np.sum(d_log_mu[:, :, None] * diff / sigma ** 2, axis=0)
    grads.widths = np.sum(d_log_mu[:, :, None] * diff ** 2 / sigma ** 3, axis=0)
    gw = g[:, None] * weights
    grads.consequents[:, 0] = gw.sum(axis=0)
    grads.consequents[:, 1:] = gw.T @ X
    return grads


def fit_consequents(params: RuleParams, X: np.ndarray, y: np.ndarray, mask: np.ndarray, l2: float) -> np.ndarray:
    """Per-rule weighted ridge least squares anchored at the current consequents"""
    fitted = params.consequents.copy()
    if X.shape[0] == 0:
        return fitted
    weights, _, _ = _forward(params, X, mask)
    Phi = np.hstack([np.ones((X.shape[0], 1)), X])
    eye = np.eye(Phi.shape[1])
    for j in range(fitted.shape[0]):
        w = weights[:, j]
        if not np.any(w > 0):
            continue
        Pw = Phi * w[:, None]
        lhs = Phi.T @ Pw + l2 * eye
        rhs = Pw.T @ y + l2 * params.consequents[j]
        try:
            fitted[j] = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            fitted[j] = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return fitted


def _finite_difference(params: RuleParams, X: np.ndarray, y: np.ndarray, mask: np.ndarray,
                       m_active: int, epsilon: float) -> RuleParams:
    """Central differences of window_mse, one parameter at a time, with the active sets held fixed"""
    numeric = RuleParams(
        np.zeros_like(params.centers), np.zeros_like(params.widths), np.zeros_like(params.consequents)
    )
    for name in ("centers", "widths", "consequents"):
        target = getattr(numeric, name)
        for index in np.ndindex(*target.shape):
            losses = []
            for step in (epsilon, -epsilon):
                shifted = params.copy()
                getattr(shifted, name)[index] += step
                losses.append(window_mse(shifted, X, y, m_active, mask))
            target[index] = (losses[0] - losses[1]) / (2.0 * epsilon)
    return numeric


def gradient_check(window: ProfileWindow, rulebase: RuleBase, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central finite differences

    Gradients smaller than 1e-6 in magnitude are compared absolutely.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    X, y = window.X, window.y
    if X.shape[0] == 0:
        return 0.0
    m_active = rulebase.inference.m_active
    params = RuleParams.of(rulebase.rules, rulebase.dim)
    mask = active_mask(params, X, m_active)
    analytic = gradients(params, X, y, mask)
    numeric = _finite_difference(params, X, y, mask, m_active, epsilon)
    worst = 0.0
    for a, fd in ((analytic.centers, numeric.centers),
                  (analytic.widths, numeric.widths),
                  (analytic.consequents, numeric.consequents)):
        if a.size:
            scale = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)
            worst = max(worst, float(np.max(np.abs(a - fd) / scale)))
    return worst


def _descend(params: RuleParams, X: np.ndarray, y: np.ndarray, m_active: int,
             hyper: RefinementHyper, sigma_min: float) -> Tuple[RuleParams, List[float], bool]:
    """Gradient descent keeping the best epoch; returns (best, trace, diverged)"""
    start = window_mse(params, X, y, m_active)
    trace = [start]
    best, best_loss = params.copy(), start
    current = params.copy()
    for epoch in range(hyper.epochs):
        mask = active_mask(current, X, m_active)
        grads = gradients(current, X, y, mask)
        current.centers = np.clip(current.centers - hyper.learning_rate * grads.centers, 0.0, 1.0)
        current.widths = np.maximum(current.widths - hyper.learning_rate * grads.widths, sigma_min)
        current.consequents = current.consequents - hyper.learning_rate * grads.consequents
        with np.errstate(over="ignore", invalid="ignore"):
            loss = window_mse(current, X, y, m_active)
        trace.append(loss)
        if not np.isfinite(loss) or loss > (1.0 + hyper.divergence_tolerance) * start:
            logger.warning(f"Refinement diverged at epoch {epoch + 1}: loss {loss:.6g} from {start:.6g}")
            return best, trace, True
        if loss < best_loss:
            best, best_loss = current.copy(), loss
    return best, trace, False


def _rules_from_params(template: Sequence[FuzzyRule], params: RuleParams, version: int) -> List[FuzzyRule]:
    return [
        rule.evolve(
            centers=params.centers[j],
            widths=params.widths[j],
            consequent=params.consequents[j],
            origin=RuleOrigin.OFFLINE_ENHANCED,
            version=version,
        )
        for j, rule in enumerate(template)
    ]


def refine(window: ProfileWindow, hyper: Optional[RefinementHyper] = None) -> RefinementResult:
    """Enhance the snapshot rule base on a window of labeled samples"""
    hyper = hyper or RefinementHyper()
    snapshot = window.snapshot
    if len(window) < hyper.min_refine_samples:
        raise InsufficientWindowError(
            f"Window has {len(window)} labeled samples, refinement needs {hyper.min_refine_samples}"
        )
    if not snapshot.rules:
        raise ColdStartError("Cannot refine an empty rule base")

    X, y = window.X, window.y
    inference = snapshot.inference
    m = inference.m_active
    mse_before = window_mse(RuleParams.of(snapshot.rules, snapshot.dim), X, y, m)

    # Re-cluster the window seeded by the clusters that carry rules
    rule_by_cluster = {r.cluster_id: r for r in snapshot.rules if r.cluster_id is not None}
    seed = [c for c in snapshot.clusterer.clusters if c.cluster_id in rule_by_cluster]
    refined_clusters = ecmc_refine(
        X, seed, snapshot.ecm, hyper.ecmc_max_iters, snapshot.clusterer.next_cluster_id
    ) if seed else []
    # Clusters split off to honour dthr get fresh rules
    split = [replace(c, created_at=snapshot.samples_seen) for c in refined_clusters
             if c.cluster_id not in rule_by_cluster]
    linked_clusters = [c for c in refined_clusters if c.cluster_id in rule_by_cluster]

    template = []
    for cluster in linked_clusters:
        linked = rule_by_cluster[cluster.cluster_id]
        template.append(linked.evolve(
            centers=cluster.center,
            widths=np.full(snapshot.dim, max(cluster.radius, inference.sigma_min)),
        ))
    template += clusters_to_rule_seeds(
        split, [(s.x, s.label) for s in window.samples], inference.sigma_min,
        first_rule_id=snapshot.next_rule_id, initial_covariance=inference.initial_covariance,
        origin=RuleOrigin.OFFLINE_ENHANCED,
    )
    if not template:
        logger.info("Refinement kept no clusters, snapshot retained")
        return RefinementResult(RefinementStatus.NO_IMPROVEMENT, snapshot, mse_before, mse_before, 0, len(window))

    params = RuleParams.of(template, snapshot.dim)
    params.consequents = fit_consequents(params, X, y, active_mask(params, X, m), hyper.l2)
    best, trace, diverged = _descend(params, X, y, m, hyper, inference.sigma_min)
    if diverged:
        return RefinementResult(
            RefinementStatus.DIVERGED, snapshot, mse_before, trace[-1], len(trace) - 1, len(window), tuple(trace)
        )

    refit = best.copy()
    refit.consequents = fit_consequents(refit, X, y, active_mask(refit, X, m), hyper.l2)
    candidates = [(window_mse(best, X, y, m), best), (window_mse(refit, X, y, m), refit)]
    mse_after, final = min(candidates, key=lambda item: item[0])

    if not np.isfinite(mse_after) or mse_after > mse_before:
        logger.info(f"Refinement rejected: window MSE {mse_after:.6f} > snapshot {mse_before:.6f}")
        return RefinementResult(
            RefinementStatus.NO_IMPROVEMENT, snapshot, mse_before, mse_after, len(trace) - 1, len(window), tuple(trace)
        )

    version = snapshot.profile_version + 1
    rules = _rules_from_params(template, final, version)
    kept = [c for c in snapshot.clusterer.clusters if c.cluster_id not in rule_by_cluster]
    clusterer = EvolvingClusterer.from_clusters(
        snapshot.ecm, linked_clusters + split + kept, snapshot.dim,
        next_cluster_id=snapshot.clusterer.next_cluster_id,
        samples_seen=snapshot.clusterer.samples_seen,
    )
    refined = snapshot.copy_with(
        rules=tuple(rules), clusterer=clusterer, profile_version=version,
        next_rule_id=snapshot.next_rule_id + len(split),
    )
    logger.info(
        f"Refinement accepted: {len(rules)} rules, window MSE {mse_before:.6f} -> {mse_after:.6f}"
    )
    return RefinementResult(
        RefinementStatus.ACCEPTED, refined, mse_before, mse_after, len(trace) - 1, len(window), tuple(trace)
    )


def bootstrap_rulebase(
    X: np.ndarray,
    labels: Sequence[Optional[Label]],
    ecm: Optional[EcmParams] = None,
    inference: Optional[InferenceParams] = None,
    hyper: Optional[RefinementHyper] = None,
    vector_mode: VectorMode = VectorMode.SHORT,
) -> RuleBase:
    """Initial offline training of a profile from a (partly) labeled corpus"""
    ecm = ecm or EcmParams()
    inference = inference or InferenceParams()
    hyper = hyper or RefinementHyper()
    X = np.asarray(X, dtype=float)
    labels = [Label.parse(label) for label in labels]
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise PreconditionError("Training needs one label slot per sample")
    present = {label for label in labels if label is not None}
    if present != {Label.PHISH, Label.HAM}:
        raise PreconditionError("Training corpus must contain both phish and ham samples")

    dim = X.shape[1]
    clusterer = EvolvingClusterer(ecm, dim).fit(X)
    labeled = [(x, label) for x, label in zip(X, labels) if label is not None]
    X_labeled = np.array([x for x, _ in labeled])
    y = np.array([label.target for _, label in labeled])

    clusters = [
        replace(c, created_at=0) for c in ecmc_refine(X_labeled, clusterer.clusters, ecm, hyper.ecmc_max_iters)
    ]
    seeds = clusters_to_rule_seeds(
        clusters, labeled, inference.sigma_min,
        initial_covariance=inference.initial_covariance, origin=RuleOrigin.OFFLINE_ENHANCED,
    )
    params = RuleParams.of(seeds, dim)
    params.consequents = fit_consequents(params, X_labeled, y, active_mask(params, X_labeled, inference.m_active), hyper.l2)
    rules = tuple(
        rule.evolve(consequent=params.consequents[j], version=1, born_at=0, last_fired=0)
        for j, rule in enumerate(seeds)
    )
    trained = EvolvingClusterer.from_clusters(
        ecm, clusters, dim, next_cluster_id=clusterer.next_cluster_id
    )
    logger.info(f"Bootstrapped {len(rules)} rules from {X.shape[0]} samples ({len(labeled)} labeled)")
    return RuleBase(
        rules=rules,
        clusterer=trained,
        ecm=ecm,
        inference=inference,
        profile_version=1,
        samples_seen=0,
        next_rule_id=len(rules),
        vector_mode=vector_mode,
        dim=dim,
    )
