"""
Offline pipelines for PDENFF: initial profile training and synthetic traffic
"""

from .build_profile import ProfileBuilder, TrainingOutcome
from .synthetic_corpus import SyntheticCorpus, SyntheticStream

__all__ = ['ProfileBuilder', 'TrainingOutcome', 'SyntheticCorpus', 'SyntheticStream']
