#!/usr/bin/env python3
"""
Initial training pipeline for PDENFF
Builds the first rule-base profile from a labeled corpus and activates it
"""

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent))

import numpy as np
from tqdm import tqdm

from src.data_loader import CorpusItem, iter_corpus
from src.detector import FeaturePipeline
from src.exceptions import CorpusError, PdenffError
from src.features import FeatureRegistry
from src.fuzzy_inference import RuleBase, classify
from src.labels import Label
from src.logger import get_logger, setup_logging
from src.metrics import MetricsReport, score_run
from src.profile_store import ActivationRecord, ProfileStore
from src.refinement import bootstrap_rulebase
from src.run_config import RunConfig, load_run_config

logger = get_logger(__name__)


@dataclass(frozen=True)
class TrainingOutcome:
    version: int
    rulebase: RuleBase
    report: MetricsReport
    samples: int
    labeled: int


class ProfileBuilder:
    """Featurizes a corpus, bootstraps a rule base and stores it as the active profile"""

    def __init__(self, cfg: Optional[RunConfig] = None, store: Optional[ProfileStore] = None, progress: bool = False):
        self.cfg = cfg or RunConfig()
        self.store = store or ProfileStore(self.cfg.store_path)
        self.pipeline = FeaturePipeline(FeatureRegistry.load(self.cfg.registry_path), self.cfg.mode)
        self.progress = progress

    def featurize(self, items: Iterable[CorpusItem]) -> Tuple[np.ndarray, List[Optional[Label]]]:
        vectors, labels = [], []
        for item in tqdm(items, desc="Featurizing corpus", disable=not self.progress, unit="msg"):
            _, x = self.pipeline.vector(item.raw)
            vectors.append(x)
            labels.append(item.label)
        if not vectors:
            raise CorpusError("Training corpus is empty")
        logger.info(f"Featurized {len(vectors)} messages ({sum(label is not None for label in labels)} labeled)")
        return np.vstack(vectors), labels

    def fit(self, X: np.ndarray, labels: Sequence[Optional[Label]]) -> RuleBase:
        return bootstrap_rulebase(
            X,
            labels,
            ecm=self.cfg.ecm_params(),
            inference=self.cfg.inference_params(),
            hyper=self.cfg.refinement_hyper(),
            vector_mode=self.cfg.mode,
        )

    @staticmethod
    def evaluate(rulebase: RuleBase, X: np.ndarray, labels: Sequence[Optional[Label]]) -> MetricsReport:
        """Training-set metrics of a freshly built rule base"""
        pairs = [(classify(rulebase, x), label) for x, label in zip(X, labels) if label is not None]
        return score_run(pairs, rulebase)

    def save(self, rulebase: RuleBase, **details) -> ActivationRecord:
        return self.store.persist_and_activate(rulebase, event="train", **details)

    def build_from_vectors(self, X: np.ndarray, labels: Sequence[Optional[Label]]) -> TrainingOutcome:
        labels = [Label.parse(label) for label in labels]
        rulebase = self.fit(X, labels)
        record = self.save(rulebase, samples=len(labels), rules=len(rulebase.rules))
        stored = self.store.load(record.new_version)
        report = self.evaluate(stored, X, labels)
        logger.info(
            f"Trained profile version {record.new_version}: {len(stored.rules)} rules, "
            f"training accuracy {report.accuracy:.4f}"
        )
        return TrainingOutcome(
            version=record.new_version,
            rulebase=stored,
            report=report,
            samples=len(labels),
            labeled=sum(label is not None for label in labels),
        )

    def build(self, items: Iterable[CorpusItem]) -> TrainingOutcome:
        """Complete training pipeline"""
        X, labels = self.featurize(items)
        return self.build_from_vectors(X, labels)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Train from a manifest or mail source given on the command line"""
    import argparse

    parser = argparse.ArgumentParser(description="Build the initial PDENFF profile")
    parser.add_argument("corpus", help="CSV manifest, mbox file, .eml file or .eml directory")
    parser.add_argument("--label", choices=[label.value for label in Label], help="label for a non-manifest source")
    parser.add_argument("--config", help="JSON run config")
    args = parser.parse_args(argv)

    cfg = load_run_config(args.config)
    setup_logging(cfg.log_level)
    try:
        outcome = ProfileBuilder(cfg, progress=True).build(iter_corpus(args.corpus, Label.parse(args.label)))
    except PdenffError as e:
        logger.error(f"Error building profile: {e}")
        print(f"Error building profile: {e}")
        return 3
    print(f"Profile version {outcome.version} built with {len(outcome.rulebase.rules)} rules")
    return 0


if __name__ == "__main__":
    sys.exit(main())
