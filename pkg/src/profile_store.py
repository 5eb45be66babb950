#!/usr/bin/env python3
"""
Versioned on-disk store of rule-base profiles

Layout under the store root:

    versions/rulebase-v000001.json   one document per version
    ACTIVE                           activation pointer (the commit point)
    audit.jsonl                      append-only audit log, one record per line

Activation is two-phase: the version document is written first, then the
pointer is flipped with an atomic rename. A crash between the two leaves the
previously active version in force.
"""

import json
import os
import re
import tempfile
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from config import STORE_PATH
from src.exceptions import PdenffError, ProfileStoreError
from src.fuzzy_inference import RuleBase
from src.logger import get_logger
from src.schemas import (
    AUDIT_SCHEMA,
    AUDIT_SCHEMA_ID,
    POINTER_SCHEMA,
    POINTER_SCHEMA_ID,
    SchemaValidationError,
    validate_document,
)

logger = get_logger(__name__)

_VERSION_FILE = re.compile(r"^rulebase-v(\d{6,})\.json$")


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_json_atomic(path: Path, document: Dict[str, Any]) -> None:
    """Write a JSON document via a temp file and os.replace"""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class ActivationRecord:
    old_version: Optional[int]
    new_version: int
    activated_at: str
    event: str


class ProfileStore:
    """Profile versions, activation pointer and audit log"""

    def __init__(self, root: Optional[str] = None):
        self.root = Path(root or STORE_PATH)
        self.versions_dir = self.root / "versions"
        self.pointer_path = self.root / "ACTIVE"
        self.audit_path = self.root / "audit.jsonl"
        self._lock = threading.RLock()
        self.versions_dir.mkdir(parents=True, exist_ok=True)

    def version_path(self, version: int) -> Path:
        return self.versions_dir / f"rulebase-v{version:06d}.json"

    def list_versions(self) -> List[int]:
        versions = []
        for entry in self.versions_dir.iterdir():
            match = _VERSION_FILE.match(entry.name)
            if match:
                versions.append(int(match.group(1)))
        return sorted(versions)

    def next_version(self) -> int:
        versions = self.list_versions()
        return versions[-1] + 1 if versions else 1

    def save(self, rulebase: RuleBase, version: Optional[int] = None) -> int:
        """Persist a rule base as a new version document (not activated)"""
        with self._lock:
            version = version or self.next_version()
            path = self.version_path(version)
            if path.exists():
                raise ProfileStoreError(f"Profile version {version} already exists in {self.root}")
            stamped = rulebase.copy_with(profile_version=version)
            try:
                write_json_atomic(path, stamped.to_document(created_at=utc_now()))
            except OSError as e:
                raise ProfileStoreError(f"Could not write profile version {version}: {e}") from e
            logger.debug(f"Saved profile version {version} to {path}")
            return version

    def load(self, version: int) -> RuleBase:
        path = self.version_path(version)
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
            return RuleBase.from_document(document)
        except FileNotFoundError as e:
            raise ProfileStoreError(f"Profile version {version} not found in {self.root}") from e
        except (OSError, json.JSONDecodeError, SchemaValidationError, ValueError) as e:
            raise ProfileStoreError(f"Profile version {version} is unreadable: {e}") from e

    def read_document(self, version: int) -> Dict[str, Any]:
        try:
            with open(self.version_path(version), "r", encoding="utf-8") as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ProfileStoreError(f"Profile version {version} is unreadable: {e}") from e

    def _read_pointer(self) -> Optional[Dict[str, Any]]:
        if not self.pointer_path.exists():
            return None
        try:
            with open(self.pointer_path, "r", encoding="utf-8") as f:
                pointer = json.load(f)
            validate_document(pointer, POINTER_SCHEMA, "activation pointer")
        except (OSError, json.JSONDecodeError, SchemaValidationError) as e:
            raise ProfileStoreError(f"Activation pointer is unreadable: {e}") from e
        return pointer

    def active_version(self) -> Optional[int]:
        pointer = self._read_pointer()
        return None if pointer is None else pointer["active_version"]

    def load_active(self) -> RuleBase:
        version = self.active_version()
        if version is None:
            raise ProfileStoreError(f"No active profile in {self.root}; run 'train' first")
        return self.load(version)

    def _write_pointer(self, version: int, activated_at: str) -> None:
        write_json_atomic(
            self.pointer_path,
            {"schema": POINTER_SCHEMA_ID, "active_version": version, "activated_at": activated_at},
        )

    def _restore_pointer(self, previous: Optional[Dict[str, Any]]) -> None:
        try:
            if previous is None:
                self.pointer_path.unlink(missing_ok=True)
            else:
                write_json_atomic(self.pointer_path, previous)
        except OSError as e:
            logger.error(f"Could not restore the activation pointer in {self.root}: {e}")

    def activate(self, version: int, event: str = "activation", **details) -> ActivationRecord:
        """Flip the activation pointer to an existing version

        The flip only stands once its audit record is written.
        """
        with self._lock:
            if not self.version_path(version).exists():
                raise ProfileStoreError(f"Cannot activate missing profile version {version}")
            previous = self._read_pointer()
            old = None if previous is None else previous["active_version"]
            activated_at = utc_now()
            try:
                self._write_pointer(version, activated_at)
            except OSError as e:
                raise ProfileStoreError(f"Could not activate profile version {version}: {e}") from e
            try:
                self.audit(event, old_version=old, new_version=version, **details)
            except PdenffError:
                self._restore_pointer(previous)
                raise
            logger.info(f"Activated profile version {version} (was {old})")
            return ActivationRecord(old, version, activated_at, event)

    def persist_and_activate(self, rulebase: RuleBase, event: str = "swap", **details) -> ActivationRecord:
        with self._lock:
            version = self.save(rulebase)
            return self.activate(version, event=event, **details)

    def audit(self, event: str, **fields) -> Dict[str, Any]:
        record = {"schema": AUDIT_SCHEMA_ID, "event": event, "timestamp": utc_now(), **fields}
        validate_document(record, AUDIT_SCHEMA, "audit record")
        with self._lock:
            try:
                with open(self.audit_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(record, default=str) + "\n")
                    f.flush()
                    os.fsync(f.fileno())
            except OSError as e:
                logger.error(f"Could not append audit record '{event}': {e}")
                raise ProfileStoreError(f"Audit log write failed: {e}") from e
        return record

    def read_audit(self, event: Optional[str] = None) -> List[Dict[str, Any]]:
        if not self.audit_path.exists():
            return []
        records = []
        with open(self.audit_path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    logger.warning(f"Skipping torn audit line in {self.audit_path}")
                    continue
                if event is None or record.get("event") == event:
                    records.append(record)
        return records
