#!/usr/bin/env python3
"""
Error types raised by the PDENFF engine

Every error carries a stable ``code`` so the CLI and the socket protocol can
report it without parsing messages.
"""


class PdenffError(Exception):
    """Base class for engine errors"""

    code = "ERROR"


class ColdStartError(PdenffError):
    """Classification was requested against an empty rule base"""

    code = "COLD_START"


class InsufficientWindowError(PdenffError):
    """A profile window holds too few labeled samples to refine"""

    code = "INSUFFICIENT_WINDOW"


class PreconditionError(PdenffError):
    code = "PRECONDITION"


class ProfileStoreError(PdenffError):
    """Reading or writing the profile store failed"""

    code = "PERSISTENCE"


class CorpusError(PdenffError):
    """An input corpus could not be read"""

    code = "CORPUS"


class ConfigError(PdenffError):
    code = "CONFIG"


class EmptyRunError(PdenffError):
    """Metrics were requested for a run without scored samples"""

    code = "EMPTY_RUN"


class ProtocolError(PdenffError):
    code = "PROTOCOL"
