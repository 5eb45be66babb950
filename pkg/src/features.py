#!/usr/bin/env python3
"""
Feature extraction for the PDENFF mail filter

Computes the 21-bit long vector from an EmailMessage using the predicates
named in a FeatureRegistry, and reduces it to the 4-D short vector of group
scores (spam, body, URL, header).
"""

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import tldextract
from bs4 import BeautifulSoup

from config import FEATURE_REGISTRY_PATH
from src.email_parser import EmailMessage
from src.exceptions import ConfigError
from src.logger import get_logger
from src.schemas import REGISTRY_SCHEMA, REGISTRY_SCHEMA_ID, validate_document

logger = get_logger(__name__)

LONG_VECTOR_SIZE = 21


class FeatureGroup(str, Enum):
    SPAM = "spam"
    BODY = "body"
    URL = "url"
    HEADER = "header"


# Short vector component order
GROUP_ORDER: Tuple[FeatureGroup, ...] = (
    FeatureGroup.SPAM,
    FeatureGroup.BODY,
    FeatureGroup.URL,
    FeatureGroup.HEADER,
)


class VectorMode(str, Enum):
    SHORT = "short"
    LONG = "long"

    @property
    def dim(self) -> int:
        return len(GROUP_ORDER) if self is VectorMode.SHORT else LONG_VECTOR_SIZE


@dataclass(frozen=True)
class FeatureDef:
    """One binary feature of the long vector"""
    index: int
    id: str
    group: FeatureGroup
    description: str
    parameters: Dict[str, Any] = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class LongVector:
    bits: Tuple[bool, ...]

    def __post_init__(self):
        if len(self.bits) != LONG_VECTOR_SIZE:
            raise ValueError(f"Long vector needs {LONG_VECTOR_SIZE} bits, got {len(self.bits)}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=float)

    def active_ids(self, registry: "FeatureRegistry") -> Tuple[str, ...]:
        return tuple(entry.id for entry, bit in zip(registry.entries, self.bits) if bit)


@dataclass(frozen=True)
class ShortVector:
    spam_score: float
    body_score: float
    url_score: float
    header_score: float

    def __post_init__(self):
        for name in ("spam_score", "body_score", "url_score", "header_score"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    def as_array(self) -> np.ndarray:
        return np.array([self.spam_score, self.body_score, self.url_score, self.header_score])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ShortVector":
        spam, body, url, header = (float(v) for v in values)
        return cls(spam_score=spam, body_score=body, url_score=url, header_score=header)


@dataclass
class _MessageFacts:
    """HTML facts shared by several predicates, computed once per message"""
    tags: frozenset
    external_images: bool

    @classmethod
    def of(cls, email: EmailMessage) -> "_MessageFacts":
        if not email.body_html:
            return cls(tags=frozenset(), external_images=False)
        try:
            soup = BeautifulSoup(email.body_html, "html.parser")
            tags = frozenset(tag.name for tag in soup.find_all(True))
            external = any(
                str(img.get("src", "")).strip().lower().startswith(("http://", "https://", "//"))
                for img in soup.find_all("img")
            )
            return cls(tags=tags, external_images=external)
        except Exception as e:
            logger.warning(f"Could not inspect HTML body: {e}")
            return cls(tags=frozenset(), external_images=False)


Predicate = Callable[[EmailMessage, _MessageFacts, Dict[str, Any]], bool]

_DOMAIN_LIKE = re.compile(r"^(?:https?://)?(?:www\.)?([a-z0-9-]+(?:\.[a-z0-9-]+)+)(?:[/:?#]\S*)?$")


@lru_cache(maxsize=1)
def _domain_extractor() -> tldextract.TLDExtract:
    # Bundled public suffix snapshot only, no network fetch
    return tldextract.TLDExtract(suffix_list_urls=())


def registered_domain(host: Optional[str]) -> Optional[str]:
    """Registrable domain of a host name (the host itself for IPs or bare names)"""
    if not host:
        return None
    host = host.strip().strip(".").lower()
    parts = _domain_extractor()(host)
    if parts.domain and parts.suffix:
        return f"{parts.domain}.{parts.suffix}"
    return host or None


def _anchor_domain(anchor_text: str) -> Optional[str]:
    match = _DOMAIN_LIKE.match(anchor_text.strip().lower())
    if not match:
        return None
    parts = _domain_extractor()(match.group(1))
    if not parts.suffix or not parts.domain:
        return None
    return f"{parts.domain}.{parts.suffix}"


def _contains_phrase(text: str, phrases: Sequence[str]) -> bool:
    text = " ".join(text.lower().split())
    return any(re.search(rf"\b{re.escape(phrase.lower())}", text) for phrase in phrases)


def _from_reply_to_mismatch(email, facts, params):
    return bool(email.reply_to_domain and email.sender_domain and email.reply_to_domain != email.sender_domain)


def _message_id_domain_mismatch(email, facts, params):
    if not (email.message_id_domain and email.sender_domain):
        return False
    return registered_domain(email.message_id_domain) != registered_domain(email.sender_domain)


def _urgent_subject(email, facts, params):
    return _contains_phrase(email.subject, params.get("words", []))


def _fake_reply(email, facts, params):
    prefixes = "|".join(re.escape(p) for p in params.get("prefixes", ["re", "fwd"]))
    is_reply = re.match(rf"^\s*(?:{prefixes})\s*:", email.subject, re.IGNORECASE)
    return bool(is_reply) and not email.has_thread_headers


def _undisclosed_recipients(email, facts, params):
    if email.to_header is None:
        return False
    if not email.recipients:
        return True
    return _contains_phrase(email.to_header, params.get("markers", ["undisclosed"]))


def _ip_host(email, facts, params):
    return any(url.host_is_ip for url in email.urls)


def _anchor_domain_mismatch(email, facts, params):
    for url in email.urls:
        shown = _anchor_domain(url.anchor_text) if url.anchor_text else None
        if shown and url.host and shown != registered_domain(url.host):
            return True
    return False


def _many_dots(email, facts, params):
    max_dots = int(params.get("max_dots", 3))
    return any(url.dot_count_in_host > max_dots for url in email.urls)


def _at_sign(email, facts, params):
    return any(url.contains_at_sign for url in email.urls)


def _many_links(email, facts, params):
    return len(email.urls) > int(params.get("max_links", 5))


def _nonstandard_port(email, facts, params):
    standard = set(params.get("standard_ports", [80, 443]))
    return any(url.port is not None and url.port not in standard for url in email.urls)


def _click_here_anchor(email, facts, params):
    phrases = params.get("phrases", ["click here", "login"])
    return any(url.anchor_text and _contains_phrase(url.anchor_text, phrases) for url in email.urls)


def _hex_escape(email, facts, params):
    return any(url.contains_hex_escape for url in email.urls)


def _html_part(email, facts, params):
    return email.has_html_part


def _has_form(email, facts, params):
    return "form" in facts.tags


def _has_script(email, facts, params):
    return "script" in facts.tags


def _generic_greeting(email, facts, params):
    return _contains_phrase(email.body_text, params.get("greetings", []))


def _external_images(email, facts, params):
    return facts.external_images


def _money_keywords(email, facts, params):
    keywords = params.get("keywords", [])
    return _contains_phrase(email.subject, keywords) or _contains_phrase(email.body_text, keywords)


def _all_caps_subject(email, facts, params):
    letters = [c for c in email.subject if c.isalpha()]
    return len(letters) >= int(params.get("min_letters", 4)) and all(c.isupper() for c in letters)


def _urgency(email, facts, params):
    run = "!" * int(params.get("min_exclamations", 3))
    if run in email.subject or run in email.body_text:
        return True
    phrases = params.get("phrases", [])
    return _contains_phrase(email.subject, phrases) or _contains_phrase(email.body_text, phrases)


PREDICATES: Dict[str, Predicate] = {
    "header_from_reply_to_mismatch": _from_reply_to_mismatch,
    "header_message_id_domain_mismatch": _message_id_domain_mismatch,
    "header_urgent_subject": _urgent_subject,
    "header_fake_reply": _fake_reply,
    "header_undisclosed_recipients": _undisclosed_recipients,
    "url_ip_host": _ip_host,
    "url_anchor_domain_mismatch": _anchor_domain_mismatch,
    "url_many_dots": _many_dots,
    "url_at_sign": _at_sign,
    "url_many_links": _many_links,
    "url_nonstandard_port": _nonstandard_port,
    "url_click_here_anchor": _click_here_anchor,
    "url_hex_escape": _hex_escape,
    "body_html_part": _html_part,
    "body_has_form": _has_form,
    "body_has_script": _has_script,
    "body_generic_greeting": _generic_greeting,
    "body_external_images": _external_images,
    "spam_money_keywords": _money_keywords,
    "spam_all_caps_subject": _all_caps_subject,
    "spam_urgency": _urgency,
}


@dataclass(frozen=True)
class FeatureRegistry:
    """Ordered set of the 21 long-vector features"""
    entries: Tuple[FeatureDef, ...]
    name: str = "default-21"

    def __post_init__(self):
        if len(self.entries) != LONG_VECTOR_SIZE:
            raise ConfigError(f"Registry must define {LONG_VECTOR_SIZE} features, found {len(self.entries)}")
        for position, entry in enumerate(self.entries):
            if entry.index != position:
                raise ConfigError(f"Feature {entry.id} has index {entry.index}, expected {position}")
            if entry.id not in PREDICATES:
                raise ConfigError(f"Unknown feature id: {entry.id}")
        ids = [entry.id for entry in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError("Feature ids must be unique")
        for group in GROUP_ORDER:
            if not self.group_indices(group):
                raise ConfigError(f"Feature group {group.value} is empty")

    def group_indices(self, group: FeatureGroup) -> Tuple[int, ...]:
        return tuple(entry.index for entry in self.entries if entry.group is group)

    def group_sizes(self) -> Dict[FeatureGroup, int]:
        return {group: len(self.group_indices(group)) for group in GROUP_ORDER}

    @classmethod
    def from_document(cls, document: Dict[str, Any]) -> "FeatureRegistry":
        validate_document(document, REGISTRY_SCHEMA, "feature registry")
        entries = sorted(
            (
                FeatureDef(
                    index=item["index"],
                    id=item["id"],
                    group=FeatureGroup(item["group"]),
                    description=item["description"],
                    parameters=dict(item.get("parameters", {})),
                )
                for item in document["features"]
            ),
            key=lambda entry: entry.index,
        )
        return cls(entries=tuple(entries), name=document.get("name", "custom"))

    @classmethod
    def load(cls, path) -> "FeatureRegistry":
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot load feature registry {path}: {e}") from e
        registry = cls.from_document(document)
        logger.debug(f"Loaded feature registry '{registry.name}' from {path}")
        return registry

    @classmethod
    def default(cls) -> "FeatureRegistry":
        return _default_registry()

    def to_document(self) -> Dict[str, Any]:
        return {
            "schema": REGISTRY_SCHEMA_ID,
            "name": self.name,
            "features": [
                {
                    "index": entry.index,
                    "id": entry.id,
                    "group": entry.group.value,
                    "description": entry.description,
                    "parameters": entry.parameters,
                }
                for entry in self.entries
            ],
        }

    def dump(self) -> str:
        return json.dumps(self.to_document(), indent=2)


@lru_cache(maxsize=1)
def _default_registry() -> FeatureRegistry:
    return FeatureRegistry.load(Path(FEATURE_REGISTRY_PATH))


def extract_long(email: EmailMessage, registry: FeatureRegistry) -> LongVector:
    """Evaluate every registry predicate on the message"""
    facts = _MessageFacts.of(email)
    bits = []
    for entry in registry.entries:
        try:
            bits.append(bool(PREDICATES[entry.id](email, facts, entry.parameters)))
        except Exception as e:
            logger.warning(f"Feature {entry.id} failed, treated as inactive: {e}")
            bits.append(False)
    return LongVector(bits=tuple(bits))


def reduce_short(long_vector: LongVector, registry: FeatureRegistry) -> ShortVector:
    """Group score = active features in the group / group size"""
    bits = long_vector.as_array()
    scores = [float(bits[list(registry.group_indices(group))].mean()) for group in GROUP_ORDER]
    return ShortVector.from_array(scores)


def vectorize(email: EmailMessage, registry: FeatureRegistry, mode: VectorMode) -> np.ndarray:
    """Engine input for a message: 4 group scores or the 21 bits as reals"""
    long_vector = extract_long(email, registry)
    if VectorMode(mode) is VectorMode.LONG:
        return long_vector.as_array()
    return reduce_short(long_vector, registry).as_array()
