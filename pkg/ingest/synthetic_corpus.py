#!/usr/bin/env python3
"""
Synthetic labeled mail traffic for demos and acceptance runs

Messages are drawn at the feature-bit level from per-kind bit probabilities,
so the same draw can be fed to SHORT and LONG mode. ``zero_day`` traffic is
phishing built from a feature combination the classic profiles never show
(spoofed headers on an otherwise plain message). Raw RFC 822 messages can be
generated too, for the CLI and filter paths.
"""

from dataclasses import dataclass
from email.message import EmailMessage as MimeMessage
from email.utils import formatdate, make_msgid
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.features import GROUP_ORDER, FeatureRegistry, VectorMode
from src.labels import Label

HAM = "ham"
PHISH = "phish"
ZERO_DAY = "zero_day"

KIND_LABELS = {HAM: Label.HAM, PHISH: Label.PHISH, ZERO_DAY: Label.PHISH}

BIT_PROFILES: Dict[str, Dict[str, float]] = {
    HAM: {
        "body_html_part": 0.4,
        "body_external_images": 0.15,
        "url_many_links": 0.1,
        "header_fake_reply": 0.05,
    },
    PHISH: {
        "url_ip_host": 0.6,
        "url_anchor_domain_mismatch": 0.7,
        "url_many_dots": 0.4,
        "url_click_here_anchor": 0.75,
        "url_hex_escape": 0.3,
        "url_at_sign": 0.15,
        "body_html_part": 0.95,
        "body_has_form": 0.6,
        "body_generic_greeting": 0.6,
        "body_has_script": 0.3,
        "header_urgent_subject": 0.6,
        "header_from_reply_to_mismatch": 0.4,
        "spam_urgency": 0.5,
        "spam_money_keywords": 0.35,
    },
    ZERO_DAY: {
        "header_from_reply_to_mismatch": 0.95,
        "header_message_id_domain_mismatch": 0.9,
        "body_html_part": 0.4,
        "body_external_images": 0.15,
        "url_many_links": 0.1,
    },
}


@dataclass(frozen=True)
class SyntheticStream:
    """Vectors in stream order with revealed labels (None = unlabeled) and the truth"""
    X: np.ndarray
    labels: List[Optional[Label]]
    truth: List[Label]
    kinds: List[str]

    def __len__(self) -> int:
        return len(self.truth)

    def samples(self):
        return list(zip(self.X, self.labels))


class SyntheticCorpus:
    """Seeded generator of feature bits, vectors and raw messages"""

    def __init__(self, registry: Optional[FeatureRegistry] = None, seed: int = 0, base_rate: float = 0.02):
        self.registry = registry or FeatureRegistry.default()
        self.rng = np.random.default_rng(seed)
        self.base_rate = base_rate

    def bits(self, kinds: Sequence[str]) -> np.ndarray:
        """Bit matrix, one row per requested kind"""
        probabilities = np.array([
            [BIT_PROFILES[kind].get(entry.id, self.base_rate) for entry in self.registry.entries]
            for kind in kinds
        ]).reshape(len(kinds), len(self.registry.entries))
        return self.rng.random(probabilities.shape) < probabilities

    def to_vectors(self, bits: np.ndarray, mode: VectorMode = VectorMode.SHORT) -> np.ndarray:
        bits = np.asarray(bits, dtype=float)
        if VectorMode(mode) is VectorMode.LONG:
            return bits
        return np.column_stack([
            bits[:, list(self.registry.group_indices(group))].mean(axis=1) for group in GROUP_ORDER
        ])

    def labeled(self, n_phish: int, n_ham: int, mode: VectorMode = VectorMode.SHORT) -> SyntheticStream:
        """Shuffled, fully labeled classic traffic"""
        kinds = [PHISH] * n_phish + [HAM] * n_ham
        kinds = [kinds[i] for i in self.rng.permutation(len(kinds))]
        X = self.to_vectors(self.bits(kinds), mode)
        truth = [KIND_LABELS[k] for k in kinds]
        return SyntheticStream(X, list(truth), truth, kinds)

    def stream(
        self,
        n: int,
        phish_share: float = 0.5,
        labeled_fraction: float = 1.0,
        drift_at: Optional[int] = None,
        zero_day_share: float = 0.5,
        mode: VectorMode = VectorMode.SHORT,
    ) -> SyntheticStream:
        """Mixed traffic; from ``drift_at`` on, a share of the phish is zero-day"""
        kinds = []
        for i in range(n):
            if self.rng.random() >= phish_share:
                kinds.append(HAM)
            elif drift_at is not None and i >= drift_at and self.rng.random() < zero_day_share:
                kinds.append(ZERO_DAY)
            else:
                kinds.append(PHISH)
        X = self.to_vectors(self.bits(kinds), mode)
        truth = [KIND_LABELS[k] for k in kinds]
        revealed = self.rng.random(n) < labeled_fraction
        labels = [label if shown else None for label, shown in zip(truth, revealed)]
        return SyntheticStream(X, labels, truth, kinds)

    def raw_message(self, kind: str, index: int = 0) -> bytes:
        """A raw message whose features follow the kind's dominant bits"""
        msg = MimeMessage()
        msg["Date"] = formatdate(1700000000 + index * 60, usegmt=True)
        msg["To"] = f"user{index}@example.org"
        if kind == HAM:
            msg["From"] = f"Colleague {index} <colleague{index}@example.org>"
            msg["Message-ID"] = make_msgid(idstring=f"ham{index}", domain="example.org")
            msg["Subject"] = f"Notes from meeting {index}"
            msg.set_content(f"Hi,\n\nattached are my notes from meeting {index}.\nSee you tomorrow.\n")
        elif kind == PHISH:
            msg["From"] = f"Security Team <security@bank{index}.example.com>"
            msg["Reply-To"] = f"helpdesk{index}@collector.example.net"
            msg["Message-ID"] = make_msgid(idstring=f"phish{index}", domain=f"bank{index}.example.com")
            msg["Subject"] = "Verify your account immediately"
            msg.set_content("Dear customer,\nplease verify your account.\n")
            msg.add_alternative(
                "<html><body><p>Dear customer,</p>"
                f'<p><a href="http://192.0.2.{index % 250 + 1}/login">click here</a> to verify.</p>'
                '<form action="http://192.0.2.1/collect"><input name="password"></form>'
                "</body></html>",
                subtype="html",
            )
        elif kind == ZERO_DAY:
            msg["From"] = f"Director {index} <director@partner{index}.example.com>"
            msg["Reply-To"] = f"director{index}@mailbox.example.net"
            msg["Message-ID"] = make_msgid(idstring=f"zd{index}", domain="relay.example.net")
            msg["Subject"] = f"Invoice {index}"
            msg.set_content(f"Hello,\n\nplease handle invoice {index} as discussed.\n")
        else:
            raise ValueError(f"Unknown message kind: {kind}")
        return msg.as_bytes()

    def mbox(self, kinds: Sequence[str]) -> bytes:
        """Concatenate raw messages into mbox form"""
        parts = []
        for index, kind in enumerate(kinds):
            raw = self.raw_message(kind, index).replace(b"\nFrom ", b"\n>From ")
            parts.append(b"From generator@example.org Thu Jan  1 00:00:00 2026\n" + raw.rstrip(b"\n") + b"\n\n")
        return b"".join(parts)
