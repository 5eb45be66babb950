#!/usr/bin/env python3
"""
Fuzzy rule type shared by the online and offline engines

A rule has one Gaussian membership per input dimension and a first-order
linear consequent b0 + b . x. Online-created and offline-enhanced rules use
exactly this format, so either engine can load the other's output.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np


class RuleOrigin(str, Enum):
    ONLINE = "online"
    OFFLINE_ENHANCED = "offline_enhanced"


def _frozen_array(values, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=float, ndmin=ndim)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FuzzyRule:
    rule_id: int
    cluster_id: Optional[int]
    centers: np.ndarray
    widths: np.ndarray
    consequent: np.ndarray
    covariance: np.ndarray
    support: int = 0
    born_at: int = 0
    last_fired: int = 0
    origin: RuleOrigin = RuleOrigin.ONLINE
    version: int = 0

    def __post_init__(self):
        object.__setattr__(self, "centers", _frozen_array(self.centers, 1))
        object.__setattr__(self, "widths", _frozen_array(self.widths, 1))
        object.__setattr__(self, "consequent", _frozen_array(self.consequent, 1))
        object.__setattr__(self, "covariance", _frozen_array(self.covariance, 2))
        object.__setattr__(self, "origin", RuleOrigin(self.origin))
        dim = self.centers.shape[0]
        if self.widths.shape != (dim,):
            raise ValueError(f"Rule {self.rule_id}: widths must have {dim} entries")
        if self.consequent.shape != (dim + 1,):
            raise ValueError(f"Rule {self.rule_id}: consequent must have {dim + 1} coefficients")
        if self.covariance.shape != (dim + 1, dim + 1):
            raise ValueError(f"Rule {self.rule_id}: covariance must be {dim + 1}x{dim + 1}")
        if np.any(self.widths <= 0):
            raise ValueError(f"Rule {self.rule_id}: widths must be positive")

    @property
    def dim(self) -> int:
        return self.centers.shape[0]

    @classmethod
    def create(
        cls,
        rule_id: int,
        cluster_id: Optional[int],
        centers,
        widths,
        intercept: float,
        initial_covariance: float,
        born_at: int = 0,
        origin: RuleOrigin = RuleOrigin.ONLINE,
        version: int = 0,
    ) -> "FuzzyRule":
        """New rule with a constant consequent b0 = intercept"""
        dim = len(centers)
        consequent = np.zeros(dim + 1)
        consequent[0] = intercept
        return cls(
            rule_id=rule_id,
            cluster_id=cluster_id,
            centers=centers,
            widths=widths,
            consequent=consequent,
            covariance=np.eye(dim + 1) * initial_covariance,
            born_at=born_at,
            last_fired=born_at,
            origin=origin,
            version=version,
        )

    def log_firing(self, x: np.ndarray) -> float:
        """Log of the product of Gaussian memberships at x"""
        return float(-0.5 * np.sum(((x - self.centers) / self.widths) ** 2))

    def firing(self, x: np.ndarray) -> float:
        return float(np.exp(self.log_firing(x)))

    def output(self, x: np.ndarray) -> float:
        return float(self.consequent[0] + self.consequent[1:] @ x)

    def evolve(self, **changes) -> "FuzzyRule":
        return replace(self, **changes)

    def to_document(self) -> Dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "cluster_id": self.cluster_id,
            "centers": self.centers.tolist(),
            "widths": self.widths.tolist(),
            "consequent": self.consequent.tolist(),
            "covariance": self.covariance.tolist(),
            "support": self.support,
            "born_at": self.born_at,
            "last_fired": self.last_fired,
            "origin": self.origin.value,
            "version": self.version,
        }

    @classmethod
    def from_document(cls, document: Dict[str, Any]) -> "FuzzyRule":
        return cls(
            rule_id=document["rule_id"],
            cluster_id=document.get("cluster_id"),
            centers=document["centers"],
            widths=document["widths"],
            consequent=document["consequent"],
            covariance=document["covariance"],
            support=document["support"],
            born_at=document.get("born_at", 0),
            last_fired=document.get("last_fired", document.get("born_at", 0)),
            origin=document["origin"],
            version=document["version"],
        )
