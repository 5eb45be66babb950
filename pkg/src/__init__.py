"""
PDENFF - streaming phishing e-mail detection with evolving fuzzy rules
"""

__version__ = "0.1.0"
__author__ = "PDENFF Team"
__description__ = "Streaming phishing e-mail filter with online evolving and offline-refined fuzzy rule profiles"
