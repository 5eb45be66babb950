#!/usr/bin/env python3
"""
Message-level pipeline: raw bytes -> features -> verdict -> learning

``PhishDetector`` ties the feature registry to a ``ProfileManager`` and is
what the CLI and the filter server drive. ``run_stream`` is the
prequential evaluation loop: every message is classified before its label
is handed to the learner.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.data_loader import CorpusItem
from src.email_parser import parse_email, message_key
from src.exceptions import EmptyRunError
from src.features import (
    FeatureRegistry,
    LongVector,
    ShortVector,
    VectorMode,
    extract_long,
    reduce_short,
)
from src.fuzzy_inference import Verdict
from src.labels import Label
from src.logger import get_logger
from src.metrics import MetricsReport, report_to_record, score_run
from src.profile_manager import ProfileManager
from src.profile_store import ProfileStore
from src.run_config import RunConfig

logger = get_logger(__name__)


@dataclass(frozen=True)
class FeatureRecord:
    """Features of one message"""
    message_id: str
    long: LongVector
    short: ShortVector
    source: str = ""
    position: int = 0
    diagnostics: Tuple[str, ...] = ()

    def vector(self, mode: VectorMode) -> np.ndarray:
        if VectorMode(mode) is VectorMode.LONG:
            return self.long.as_array()
        return self.short.as_array()

    def to_row(self, registry: FeatureRegistry) -> Dict[str, Any]:
        row: Dict[str, Any] = {"message_id": self.message_id, "source": self.source, "position": self.position}
        for entry, bit in zip(registry.entries, self.long.bits):
            row[entry.id] = int(bit)
        row.update(
            spam_score=self.short.spam_score,
            body_score=self.short.body_score,
            url_score=self.short.url_score,
            header_score=self.short.header_score,
        )
        return row


class FeaturePipeline:
    """Parse and featurize raw messages against one registry"""

    def __init__(self, registry: Optional[FeatureRegistry] = None, mode: VectorMode = VectorMode.SHORT):
        self.registry = registry or FeatureRegistry.default()
        self.mode = VectorMode(mode)

    def record(self, raw: bytes, source: str = "", position: int = 0) -> FeatureRecord:
        email = parse_email(raw)
        long_vector = extract_long(email, self.registry)
        return FeatureRecord(
            message_id=message_key(email, raw),
            long=long_vector,
            short=reduce_short(long_vector, self.registry),
            source=source,
            position=position,
            diagnostics=email.diagnostics,
        )

    def vector(self, raw: bytes) -> Tuple[str, np.ndarray]:
        """Message identifier and engine input"""
        record = self.record(raw)
        return record.message_id, record.vector(self.mode)

    def dump(self, items: Iterable[CorpusItem], progress: bool = False) -> pd.DataFrame:
        """One row per message: identifier, 21 bits, 4 group scores"""
        rows = []
        for item in tqdm(items, desc="Extracting features", disable=not progress, unit="msg"):
            row = self.record(item.raw, item.source, item.position).to_row(self.registry)
            row["label"] = item.label.value if item.label is not None else ""
            rows.append(row)
        columns = (
            ["message_id", "source", "position"]
            + [e.id for e in self.registry.entries]
            + ["spam_score", "body_score", "url_score", "header_score", "label"]
        )
        return pd.DataFrame(rows, columns=columns)


class PhishDetector:
    """Classify raw messages against the live profile and learn from labels"""

    def __init__(self, manager: ProfileManager, registry: Optional[FeatureRegistry] = None):
        self.manager = manager
        self.pipeline = FeaturePipeline(registry, manager.active.vector_mode)

    @classmethod
    def from_config(cls, cfg: RunConfig, background: bool = False) -> "PhishDetector":
        store = ProfileStore(cfg.store_path)
        manager = ProfileManager(store, cfg.schedule(), cfg.refinement_hyper(), background=background)
        if manager.active.vector_mode is not cfg.mode:
            logger.warning(
                f"Configured vector mode {cfg.vector_mode} differs from the active profile's "
                f"{manager.active.vector_mode.value}; using the profile's"
            )
        return cls(manager, FeatureRegistry.load(cfg.registry_path))

    @property
    def profile_version(self) -> int:
        return self.manager.profile_version

    def classify_raw(self, raw: bytes) -> Tuple[Verdict, str, np.ndarray]:
        key, x = self.pipeline.vector(raw)
        return self.manager.classify(x), key, x

    def learn(self, x: np.ndarray, label: Optional[Label]) -> None:
        self.manager.observe(x, label)

    def close(self) -> None:
        self.manager.close()


@dataclass
class StreamResult:
    verdicts: List[Tuple[Verdict, Optional[Label]]] = field(default_factory=list)
    report: Optional[MetricsReport] = None

    @property
    def processed(self) -> int:
        return len(self.verdicts)

    @property
    def scored(self) -> List[Tuple[Verdict, Label]]:
        return [(v, label) for v, label in self.verdicts if label is not None]


def run_stream(
    manager: ProfileManager,
    samples: Iterable[Tuple[np.ndarray, Optional[Label]]],
    report_every: Optional[int] = None,
    progress: bool = False,
) -> StreamResult:
    """Prequential loop: classify, record, then learn from the label"""
    result = StreamResult()
    for i, (x, label) in enumerate(tqdm(samples, desc="Streaming", disable=not progress, unit="msg"), start=1):
        label = Label.parse(label)
        verdict = manager.classify(x)
        result.verdicts.append((verdict, label))
        manager.observe(x, label)
        if report_every and i % report_every == 0 and result.scored:
            record = report_to_record(score_run(result.scored, manager.active), processed=i)
            logger.info(f"After {i} messages: accuracy={record['metrics']['accuracy']}, rules={record['rules']['count']}")

    if not result.verdicts:
        raise EmptyRunError("The stream contained no messages")
    manager.drain()
    if result.scored:
        result.report = score_run(result.scored, manager.active)
    else:
        logger.warning(f"Streamed {result.processed} unlabeled messages; no metrics to report")
    return result


def stream_corpus(
    detector: PhishDetector,
    items: Iterable[CorpusItem],
    report_every: Optional[int] = None,
    progress: bool = False,
) -> StreamResult:
    """run_stream over raw corpus messages"""
    samples = ((detector.pipeline.vector(item.raw)[1], item.label) for item in items)
    return run_stream(detector.manager, samples, report_every=report_every, progress=progress)
