#!/usr/bin/env python3
"""
Run configuration: defaults from config.py, an optional JSON config file,
the PDENFF_STORE_PATH environment override and CLI flag overrides (in that
order of increasing precedence).
"""

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional

import config
from src.ecm import DistanceMetric, EcmParams
from src.exceptions import ConfigError
from src.features import VectorMode
from src.fuzzy_inference import InferenceParams
from src.logger import get_logger
from src.profile_manager import ProfileSchedule
from src.refinement import RefinementHyper

logger = get_logger(__name__)

STORE_ENV_VAR = "PDENFF_STORE_PATH"


@dataclass(frozen=True)
class RunConfig:
    registry_path: str = config.FEATURE_REGISTRY_PATH
    store_path: str = config.STORE_PATH
    vector_mode: str = config.VECTOR_MODE

    dthr: float = config.ECM_DTHR
    distance: str = config.ECM_DISTANCE
    ecmc_max_iters: int = config.ECMC_MAX_ITERS
    sigma_min: float = config.SIGMA_MIN

    m_active: int = config.M_ACTIVE
    decision_threshold: float = config.DECISION_THRESHOLD
    forgetting_factor: float = config.FORGETTING_FACTOR
    prune_window: int = config.PRUNE_WINDOW
    firing_threshold: float = config.FIRING_THRESHOLD
    initial_covariance: float = config.RLS_INITIAL_COVARIANCE

    learning_rate: float = config.LEARNING_RATE
    epochs: int = config.EPOCHS
    l2: float = config.L2_PENALTY
    min_refine_samples: int = config.MIN_REFINE_SAMPLES
    divergence_tolerance: float = config.DIVERGENCE_TOLERANCE

    window_size: int = config.WINDOW_SIZE
    refine_trigger: str = config.REFINE_TRIGGER
    consolidation_every: int = config.CONSOLIDATION_EVERY
    consolidation_windows: int = config.CONSOLIDATION_WINDOWS
    refine_hour: int = config.REFINE_HOUR

    io_mode: str = config.IO_MODE
    socket_address: str = config.SOCKET_ADDRESS
    max_message_bytes: int = config.MAX_MESSAGE_BYTES
    feedback_memory: int = config.FEEDBACK_MEMORY

    log_level: str = config.LOG_LEVEL

    @property
    def mode(self) -> VectorMode:
        return VectorMode(self.vector_mode)

    def ecm_params(self) -> EcmParams:
        return EcmParams(dthr=self.dthr, distance=self.distance)

    def inference_params(self) -> InferenceParams:
        return InferenceParams(
            m_active=self.m_active,
            decision_threshold=self.decision_threshold,
            forgetting_factor=self.forgetting_factor,
            prune_window=self.prune_window,
            firing_threshold=self.firing_threshold,
            sigma_min=self.sigma_min,
            initial_covariance=self.initial_covariance,
        )

    def refinement_hyper(self) -> RefinementHyper:
        return RefinementHyper(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            l2=self.l2,
            min_refine_samples=self.min_refine_samples,
            divergence_tolerance=self.divergence_tolerance,
            ecmc_max_iters=self.ecmc_max_iters,
        )

    def schedule(self) -> ProfileSchedule:
        return ProfileSchedule(
            window_size=self.window_size,
            refine_trigger=self.refine_trigger,
            consolidation_every=self.consolidation_every,
            consolidation_windows=self.consolidation_windows,
            min_refine_samples=self.min_refine_samples,
            refine_hour=self.refine_hour,
        )

    def to_document(self) -> Dict[str, Any]:
        return asdict(self)


def coerce_value(key: str, value: Any) -> Any:
    """Convert a raw value to the type of the RunConfig default for key"""
    kind = type(getattr(RunConfig(), key))
    if isinstance(value, kind) and not isinstance(value, bool):
        return value
    try:
        if isinstance(value, (bool, dict, list)) or value is None:
            raise TypeError(f"expected {kind.__name__}")
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError("expected a whole number")
        return kind(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Bad value for {key}: {value!r} ({e})") from e


def validate_config(cfg: RunConfig) -> List[str]:
    """Check documented ranges; an empty list means the config is usable"""
    errors = []
    if cfg.vector_mode not in {m.value for m in VectorMode}:
        errors.append(f"vector_mode must be one of short/long, got {cfg.vector_mode!r}")
    if cfg.distance not in {d.value for d in DistanceMetric}:
        errors.append(f"distance must be euclidean or normalized_euclidean, got {cfg.distance!r}")
    if not 0 < cfg.dthr <= 1:
        errors.append("dthr must lie in (0, 1]")
    if cfg.ecmc_max_iters < 1:
        errors.append("ecmc_max_iters must be at least 1")
    if cfg.sigma_min <= 0:
        errors.append("sigma_min must be positive")
    if cfg.m_active < 1:
        errors.append("m_active must be at least 1")
    if not 0 < cfg.decision_threshold < 1:
        errors.append("decision_threshold must lie in (0, 1)")
    if not 0.9 < cfg.forgetting_factor <= 1:
        errors.append("forgetting_factor must lie in (0.9, 1]")
    if cfg.prune_window < 1:
        errors.append("prune_window must be at least 1")
    if not 0 <= cfg.firing_threshold < 1:
        errors.append("firing_threshold must lie in [0, 1)")
    if cfg.initial_covariance <= 0:
        errors.append("initial_covariance must be positive")
    if cfg.learning_rate <= 0:
        errors.append("learning_rate must be positive")
    if cfg.epochs < 0:
        errors.append("epochs must be non-negative")
    if cfg.l2 < 0:
        errors.append("l2 must be non-negative")
    if cfg.min_refine_samples < 1:
        errors.append("min_refine_samples must be at least 1")
    if cfg.window_size < cfg.min_refine_samples:
        errors.append("window_size must be at least min_refine_samples")
    if cfg.divergence_tolerance <= 0:
        errors.append("divergence_tolerance must be positive")
    if cfg.refine_trigger not in ("on_window_full", "timed"):
        errors.append(f"refine_trigger must be on_window_full or timed, got {cfg.refine_trigger!r}")
    if cfg.consolidation_every < 1 or cfg.consolidation_windows < 1:
        errors.append("consolidation_every and consolidation_windows must be at least 1")
    if not 0 <= cfg.refine_hour <= 23:
        errors.append("refine_hour must lie in 0..23")
    if cfg.io_mode not in ("pipe", "socket"):
        errors.append(f"io_mode must be pipe or socket, got {cfg.io_mode!r}")
    if cfg.max_message_bytes < 1:
        errors.append("max_message_bytes must be positive")
    if cfg.feedback_memory < 1:
        errors.append("feedback_memory must be positive")
    if not os.path.exists(cfg.registry_path):
        errors.append(f"feature registry not found: {cfg.registry_path}")
    return errors


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Build a RunConfig from defaults, a JSON file, the environment and flags"""
    known = {f.name for f in fields(RunConfig)}
    cfg = RunConfig()

    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                document = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        if not isinstance(document, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        unknown = sorted(set(document) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys in {path}: {', '.join(unknown)}")
        cfg = replace(cfg, **{key: coerce_value(key, value) for key, value in document.items()})
        logger.debug(f"Loaded run config from {path}")

    env_store = os.getenv(STORE_ENV_VAR)
    if env_store:
        cfg = replace(cfg, store_path=env_store)

    flags = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = sorted(set(flags) - known)
    if unknown:
        raise ConfigError(f"Unknown config overrides: {', '.join(unknown)}")
    return replace(cfg, **{key: coerce_value(key, value) for key, value in flags.items()})
