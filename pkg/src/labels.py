"""
Ground-truth and verdict labels
"""

from enum import Enum
from typing import Optional, Union


class Label(str, Enum):
    """Phish is the positive class everywhere"""

    PHISH = "phish"
    HAM = "ham"

    @property
    def target(self) -> float:
        return 1.0 if self is Label.PHISH else 0.0

    @classmethod
    def parse(cls, value: Union["Label", str, int, bool, None]) -> Optional["Label"]:
        """Accept phish/ham strings, 1/0 and booleans; blank, None or other integers mean unlabeled"""
        if value is None or isinstance(value, Label):
            return value
        if isinstance(value, bool):
            return cls.PHISH if value else cls.HAM
        if isinstance(value, int):
            return {1: cls.PHISH, 0: cls.HAM}.get(value)
        text = str(value).strip().lower()
        if text in ("", "nan", "none", "unlabeled"):
            return None
        if text in ("phish", "phishing", "1"):
            return cls.PHISH
        if text in ("ham", "legit", "legitimate", "0"):
            return cls.HAM
        raise ValueError(f"Unknown label: {value!r}")
