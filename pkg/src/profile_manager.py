#!/usr/bin/env python3
"""
Profile lifecycle: buffer, refine, hot-swap, consolidate

The manager owns the live rule base. Classification reads the current
snapshot without locking; learning and swaps go through one write lock and
publish a new snapshot by reference assignment. Full windows become
refinement jobs that run inline or on a single background worker with a
one-slot pending queue.
"""

import itertools
import threading
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Deque, List, Optional, Tuple

import numpy as np
from dateutil.rrule import DAILY, SA, WEEKLY, rrule

from config import (
    CONSOLIDATION_EVERY,
    CONSOLIDATION_WINDOWS,
    MIN_REFINE_SAMPLES,
    REFINE_HOUR,
    REFINE_TRIGGER,
    WINDOW_SIZE,
)
from src.exceptions import InsufficientWindowError, PdenffError, PreconditionError
from src.fuzzy_inference import RuleBase, Verdict, classify, learn_online
from src.fuzzy_rule import RuleOrigin
from src.labels import Label
from src.logger import get_logger
from src.profile_store import ActivationRecord, ProfileStore
from src.refinement import (
    LabeledSample,
    ProfileWindow,
    RefinementHyper,
    RefinementResult,
    refine,
)

logger = get_logger(__name__)


class RefineTrigger(str, Enum):
    ON_WINDOW_FULL = "on_window_full"
    TIMED = "timed"


class JobKind(str, Enum):
    REFINE = "refine"
    CONSOLIDATE = "consolidate"


@dataclass(frozen=True)
class ProfileSchedule:
    window_size: int = WINDOW_SIZE
    refine_trigger: RefineTrigger = RefineTrigger(REFINE_TRIGGER)
    consolidation_every: int = CONSOLIDATION_EVERY
    consolidation_windows: int = CONSOLIDATION_WINDOWS
    min_refine_samples: int = MIN_REFINE_SAMPLES
    refine_hour: int = REFINE_HOUR

    def __post_init__(self):
        object.__setattr__(self, "refine_trigger", RefineTrigger(self.refine_trigger))
        if self.min_refine_samples < 1 or self.window_size < self.min_refine_samples:
            raise ValueError("window_size must be at least min_refine_samples (>= 1)")
        if self.consolidation_every < 1 or self.consolidation_windows < 1:
            raise ValueError("consolidation_every and consolidation_windows must be at least 1")
        if not 0 <= self.refine_hour <= 23:
            raise ValueError("refine_hour must lie in 0..23")

    def refinement_times(self, start: datetime) -> rrule:
        """Daily enhancement ticks"""
        return rrule(DAILY, dtstart=start, byhour=self.refine_hour, byminute=0, bysecond=0)

    def consolidation_times(self, start: datetime) -> rrule:
        """Weekly full-rule consolidation on Saturdays, live from Sunday"""
        return rrule(WEEKLY, dtstart=start, byweekday=SA, byhour=self.refine_hour, byminute=30, bysecond=0)


@dataclass(frozen=True, eq=False)
class RefinementJob:
    job_id: int
    kind: JobKind
    window: ProfileWindow
    created_at: datetime = field(default_factory=datetime.now)


class ProfileManager:
    """Life-long loop around one live rule base"""

    def __init__(
        self,
        store: ProfileStore,
        schedule: Optional[ProfileSchedule] = None,
        hyper: Optional[RefinementHyper] = None,
        background: bool = False,
        rulebase: Optional[RuleBase] = None,
        now: Optional[datetime] = None,
    ):
        self.store = store
        self.schedule = schedule or ProfileSchedule()
        self.hyper = hyper or RefinementHyper(min_refine_samples=self.schedule.min_refine_samples)
        self.background = background

        self._active: RuleBase = rulebase if rulebase is not None else store.load_active()
        self._write_lock = threading.RLock()
        self._buffer: Deque[LabeledSample] = deque(maxlen=self.schedule.window_size)
        self._replay: Deque[Tuple[LabeledSample, ...]] = deque(maxlen=self.schedule.consolidation_windows)
        self._job_ids = itertools.count(1)
        self._ordinal = 0
        self.completed_cycles = 0
        self.results: List[RefinementResult] = []

        self._cond = threading.Condition()
        self._pending: Optional[RefinementJob] = None
        self._running = False
        self._closing = False
        self._worker: Optional[threading.Thread] = None

        start = now or datetime.now()
        self._next_refine = self.schedule.refinement_times(start).after(start)
        self._next_consolidation = self.schedule.consolidation_times(start).after(start)

        if background:
            self._worker = threading.Thread(target=self._work, name="pdenff-refiner", daemon=True)
            self._worker.start()
        logger.info(
            f"Profile manager started on version {self._active.profile_version} "
            f"({len(self._active.rules)} rules, trigger={self.schedule.refine_trigger.value})"
        )

    @property
    def active(self) -> RuleBase:
        return self._active

    @property
    def profile_version(self) -> int:
        return self._active.profile_version

    @property
    def buffered(self) -> int:
        return len(self._buffer)

    @property
    def retained_samples(self) -> int:
        return len(self._buffer) + sum(len(w) for w in self._replay)

    def classify(self, x: np.ndarray) -> Verdict:
        return classify(self._active, x)

    def observe(self, x: np.ndarray, label: Optional[Label]) -> Optional[RefinementJob]:
        """Learn online from a sample, buffer it and dispatch a job if one is due"""
        x = np.asarray(x, dtype=float)
        with self._write_lock:
            self._active = learn_online(self._active, x, label)
            job = self.ingest(x, label)
        if job is not None:
            self.dispatch(job)
        return job

    def ingest(self, x: np.ndarray, label: Optional[Label]) -> Optional[RefinementJob]:
        """Buffer a labeled sample; emit a job when the window fills"""
        label = Label.parse(label)
        timestamp = self._ordinal
        self._ordinal += 1
        if label is None:
            return None
        self._buffer.append(LabeledSample(np.asarray(x, dtype=float), label, timestamp))
        if self.schedule.refine_trigger is RefineTrigger.ON_WINDOW_FULL and len(self._buffer) >= self.schedule.window_size:
            return self._cut_window()
        return None

    def _cut_window(self) -> RefinementJob:
        samples = tuple(self._buffer)
        self._buffer.clear()
        self._replay.append(samples)
        job = RefinementJob(
            job_id=next(self._job_ids),
            kind=JobKind.REFINE,
            window=ProfileWindow(samples, self._active, self.schedule.window_size),
        )
        self.store.audit(
            "job_emitted", job_id=job.job_id, kind=job.kind.value,
            window_samples=len(samples), snapshot_version=self._active.profile_version,
        )
        logger.info(f"Window full: refinement job {job.job_id} with {len(samples)} samples")
        return job

    def tick(self, now: datetime) -> List[RefinementJob]:
        """Emit jobs due on the wall-clock schedule"""
        jobs = []
        if self.schedule.refine_trigger is not RefineTrigger.TIMED:
            return jobs
        if self._next_refine is not None and now >= self._next_refine:
            self._next_refine = self.schedule.refinement_times(now).after(now)
            with self._write_lock:
                if len(self._buffer) >= self.schedule.min_refine_samples:
                    jobs.append(self._cut_window())
                else:
                    self.store.audit("refinement_skipped", reason="window too small", window_samples=len(self._buffer))
        if self._next_consolidation is not None and now >= self._next_consolidation:
            self._next_consolidation = self.schedule.consolidation_times(now).after(now)
            if self.completed_cycles >= 1:
                jobs.append(self._consolidation_job(self.schedule.consolidation_windows))
        for job in jobs:
            self.dispatch(job)
        return jobs

    def dispatch(self, job: RefinementJob) -> None:
        if not self.background:
            self.run_job(job)
            return
        with self._cond:
            if self._pending is not None:
                dropped = self._pending
                self.store.audit("job_dropped", job_id=dropped.job_id, replaced_by=job.job_id)
                logger.warning(f"Refinement job {dropped.job_id} dropped, replaced by job {job.job_id}")
            self._pending = job
            self._cond.notify_all()

    def _work(self) -> None:
        while True:
            with self._cond:
                while self._pending is None and not self._closing:
                    self._cond.wait()
                if self._pending is None and self._closing:
                    return
                job, self._pending = self._pending, None
                self._running = True
            try:
                self.run_job(job)
            except Exception as e:
                logger.error(f"Refinement job {job.job_id} failed: {e}")
                try:
                    self.store.audit("refinement_failed", job_id=job.job_id, error=str(e))
                except PdenffError:
                    pass
            finally:
                with self._cond:
                    self._running = False
                    self._cond.notify_all()

    def run_job(self, job: RefinementJob) -> Optional[RefinementResult]:
        """Refine a window and swap the result in when it improves"""
        window = job.window
        live = self._active
        if live.profile_version > window.snapshot.profile_version:
            logger.info(f"Job {job.job_id}: rebasing snapshot from version {window.snapshot.profile_version} to {live.profile_version}")
            window = ProfileWindow(window.samples, live, window.window_size)
        try:
            result = refine(window, self.hyper)
        except InsufficientWindowError as e:
            self.store.audit("refinement_skipped", job_id=job.job_id, reason=str(e), window_samples=len(window))
            logger.warning(str(e))
            return None

        self.results.append(result)
        self.store.audit(
            "refinement" if job.kind is JobKind.REFINE else "consolidation",
            job_id=job.job_id,
            status=result.status.value,
            mse_before=result.mse_before,
            mse_after=result.mse_after,
            epochs=result.epochs_run,
            window_samples=result.window_samples,
            snapshot_version=window.snapshot.profile_version,
        )
        if result.accepted:
            self.swap_in(result.rulebase, window)
        else:
            self.store.audit("swap_skipped", job_id=job.job_id, status=result.status.value,
                             active_version=self._active.profile_version)
            logger.info(f"Job {job.job_id}: {result.status.value}, version {self._active.profile_version} stays active")

        if job.kind is JobKind.REFINE:
            self.completed_cycles += 1
            if (
                self.schedule.refine_trigger is RefineTrigger.ON_WINDOW_FULL
                and self.completed_cycles % self.schedule.consolidation_every == 0
            ):
                self.run_job(self._consolidation_job(self.schedule.consolidation_windows))
        return result

    def _merge_live(self, refined: RuleBase, live: RuleBase, snapshot: RuleBase) -> RuleBase:
        """Carry online rules and clusters created after the snapshot into the refined base

        Ids only grow, so anything at or past the snapshot's counters is newer.
        Refinement hands out ids from the same counters; colliding online ids
        are renumbered.
        """
        clusterer = refined.clusterer.copy()
        clusterer.next_cluster_id = max(clusterer.next_cluster_id, live.clusterer.next_cluster_id)
        present = set(int(i) for i in clusterer.cluster_ids)
        cluster_ids = {c: c for c in present if c < snapshot.clusterer.next_cluster_id}
        for cluster in live.clusterer.clusters:
            if cluster.cluster_id < snapshot.clusterer.next_cluster_id:
                continue
            new_id = clusterer.next_cluster_id if cluster.cluster_id in present else cluster.cluster_id
            clusterer._append(cluster.center.copy(), cluster.radius, cluster.member_count,
                              cluster.created_at, new_id)
            present.add(new_id)
            cluster_ids[cluster.cluster_id] = new_id
        clusterer.samples_seen = live.clusterer.samples_seen

        next_rule_id = max(refined.next_rule_id, live.next_rule_id)
        taken = {r.rule_id for r in refined.rules}
        ruled = {r.cluster_id for r in refined.rules}
        newer_rules = []
        for rule in live.rules:
            if rule.origin is not RuleOrigin.ONLINE or rule.rule_id < snapshot.next_rule_id:
                continue
            cluster_id = cluster_ids.get(rule.cluster_id)
            if cluster_id is None or cluster_id in ruled:
                continue
            rule_id = rule.rule_id
            if rule_id in taken:
                rule_id, next_rule_id = next_rule_id, next_rule_id + 1
            taken.add(rule_id)
            ruled.add(cluster_id)
            newer_rules.append(rule.evolve(rule_id=rule_id, cluster_id=cluster_id))
        return refined.copy_with(
            rules=refined.rules + tuple(newer_rules),
            clusterer=clusterer,
            stats=live.stats,
            samples_seen=live.samples_seen,
            next_rule_id=next_rule_id,
        )

    def swap_in(self, refined: RuleBase, window: Optional[ProfileWindow] = None) -> ActivationRecord:
        """Persist and atomically activate a refined rule base"""
        with self._write_lock:
            live = self._active
            snapshot = window.snapshot if window is not None else live
            merged = self._merge_live(refined, live, snapshot)
            version = self.store.next_version()
            offline_version = refined.profile_version
            merged = merged.copy_with(
                profile_version=version,
                rules=tuple(
                    r.evolve(version=version) if r.origin is RuleOrigin.OFFLINE_ENHANCED and r.version == offline_version else r
                    for r in merged.rules
                ),
            )
            try:
                record = self.store.persist_and_activate(
                    merged,
                    event="swap",
                    window_samples=len(window) if window is not None else 0,
                    rules=len(merged.rules),
                )
            except PdenffError as e:
                logger.error(f"Swap to a new profile failed, version {live.profile_version} stays active: {e}")
                self.store.audit("swap_failed", active_version=live.profile_version, error=str(e))
                raise
            self._active = merged
            logger.info(f"Swapped in profile version {record.new_version} ({len(merged.rules)} rules)")
            return record

    def _consolidation_job(self, k: int) -> RefinementJob:
        if self.completed_cycles < 1:
            raise PreconditionError("Consolidation needs at least one completed refinement cycle")
        with self._write_lock:
            windows = list(self._replay)[-k:]
        samples = tuple(s for window in windows for s in window)
        capacity = max(len(samples), 1)
        return RefinementJob(
            job_id=next(self._job_ids),
            kind=JobKind.CONSOLIDATE,
            window=ProfileWindow(samples, self._active, capacity),
        )

    def consolidate(self, k: Optional[int] = None) -> Optional[RefinementResult]:
        """Re-refine the last k windows from the active rule base"""
        k = k or self.schedule.consolidation_windows
        job = self._consolidation_job(k)
        logger.info(f"Consolidating the last {k} windows ({len(job.window)} samples)")
        return self.run_job(job)

    def drain(self, timeout: Optional[float] = None) -> bool:
        """Wait until no job is pending or running"""
        with self._cond:
            return self._cond.wait_for(lambda: self._pending is None and not self._running, timeout=timeout)

    def close(self, timeout: Optional[float] = None) -> None:
        if self._worker is None:
            return
        with self._cond:
            self._closing = True
            self._cond.notify_all()
        self._worker.join(timeout)
        self._worker = None
