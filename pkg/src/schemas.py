#!/usr/bin/env python3
"""
JSON schemas for every document the filter persists or emits
"""

from typing import Any, Dict

import jsonschema

from src.exceptions import PdenffError

REGISTRY_SCHEMA_ID = "pdenff.registry/1"
RULEBASE_SCHEMA_ID = "pdenff.rulebase/1"
POINTER_SCHEMA_ID = "pdenff.pointer/1"
AUDIT_SCHEMA_ID = "pdenff.audit/1"
REPORT_SCHEMA_ID = "pdenff.report/1"

_NUMBER_LIST = {"type": "array", "items": {"type": "number"}}

REGISTRY_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["schema", "features"],
    "properties": {
        "schema": {"const": REGISTRY_SCHEMA_ID},
        "name": {"type": "string"},
        "features": {
            "type": "array",
            "minItems": 21,
            "maxItems": 21,
            "items": {
                "type": "object",
                "required": ["index", "id", "group", "description"],
                "properties": {
                    "index": {"type": "integer", "minimum": 0, "maximum": 20},
                    "id": {"type": "string", "pattern": "^[a-z][a-z0-9_]*$"},
                    "group": {"enum": ["spam", "body", "url", "header"]},
                    "description": {"type": "string"},
                    "parameters": {"type": "object"},
                },
            },
        },
    },
}

CLUSTER_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["cluster_id", "center", "radius", "member_count", "created_at"],
    "properties": {
        "cluster_id": {"type": "integer", "minimum": 0},
        "center": _NUMBER_LIST,
        "radius": {"type": "number", "minimum": 0},
        "member_count": {"type": "integer", "minimum": 0},
        "created_at": {"type": "integer", "minimum": 0},
    },
}

RULE_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": [
        "rule_id", "centers", "widths", "consequent", "covariance",
        "support", "origin", "version",
    ],
    "properties": {
        "rule_id": {"type": "integer", "minimum": 0},
        "cluster_id": {"type": ["integer", "null"]},
        "centers": _NUMBER_LIST,
        "widths": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "consequent": _NUMBER_LIST,
        "covariance": {"type": "array", "items": _NUMBER_LIST},
        "support": {"type": "integer", "minimum": 0},
        "born_at": {"type": "integer", "minimum": 0},
        "last_fired": {"type": "integer", "minimum": 0},
        "origin": {"enum": ["online", "offline_enhanced"]},
        "version": {"type": "integer", "minimum": 0},
    },
}

RULEBASE_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["schema", "profile_version", "vector_mode", "dim", "params", "clusters", "rules", "counters"],
    "properties": {
        "schema": {"const": RULEBASE_SCHEMA_ID},
        "profile_version": {"type": "integer", "minimum": 0},
        "vector_mode": {"enum": ["short", "long"]},
        "dim": {"type": "integer", "minimum": 1},
        "created_at": {"type": "string"},
        "params": {
            "type": "object",
            "required": ["ecm", "inference"],
            "properties": {
                "ecm": {
                    "type": "object",
                    "required": ["dthr", "distance"],
                    "properties": {
                        "dthr": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "distance": {"enum": ["euclidean", "normalized_euclidean"]},
                    },
                },
                "inference": {"type": "object"},
            },
        },
        "clusters": {"type": "array", "items": CLUSTER_SCHEMA},
        "rules": {"type": "array", "items": RULE_SCHEMA},
        "counters": {
            "type": "object",
            "required": ["created", "updated", "deleted", "samples_seen", "next_rule_id", "next_cluster_id"],
            "properties": {
                "created": {"type": "integer", "minimum": 0},
                "updated": {"type": "integer", "minimum": 0},
                "deleted": {"type": "integer", "minimum": 0},
                "samples_seen": {"type": "integer", "minimum": 0},
                "next_rule_id": {"type": "integer", "minimum": 0},
                "next_cluster_id": {"type": "integer", "minimum": 0},
            },
        },
    },
}

POINTER_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["schema", "active_version", "activated_at"],
    "properties": {
        "schema": {"const": POINTER_SCHEMA_ID},
        "active_version": {"type": "integer", "minimum": 1},
        "activated_at": {"type": "string"},
    },
}

AUDIT_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["schema", "event", "timestamp"],
    "properties": {
        "schema": {"const": AUDIT_SCHEMA_ID},
        "event": {"type": "string"},
        "timestamp": {"type": "string"},
    },
}

REPORT_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["schema", "total", "counts", "metrics"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "total": {"type": "integer", "minimum": 1},
        "counts": {
            "type": "object",
            "required": ["tp", "tn", "fp", "fn"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("tp", "tn", "fp", "fn")},
        },
        "metrics": {"type": "object"},
    },
}


class SchemaValidationError(PdenffError):
    code = "SCHEMA"


def validate_document(document: Dict[str, Any], schema: Dict[str, Any], what: str) -> None:
    """Validate a document, raising SchemaValidationError with a readable message"""
    try:
        jsonschema.validate(instance=document, schema=schema)
    except jsonschema.ValidationError as e:
        location = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise SchemaValidationError(f"Invalid {what} document at {location}: {e.message}") from e
