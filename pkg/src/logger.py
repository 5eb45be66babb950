#!/usr/bin/env python3
"""
Logging configuration for the PDENFF mail filter
"""

import copy
import logging
import logging.config
from typing import Optional

from config import LOGGING_CONFIG, LOGS_DIR


def setup_logging(level: Optional[str] = None, log_to_file: bool = True):
    """Setup logging configuration"""
    # Ensure logs directory exists
    LOGS_DIR.mkdir(exist_ok=True)

    logging_config = copy.deepcopy(LOGGING_CONFIG)
    if level:
        level = level.upper()
        for handler in logging_config["handlers"].values():
            handler["level"] = level
        logging_config["loggers"][""]["level"] = level
    if not log_to_file:
        logging_config["handlers"].pop("file")
        logging_config["loggers"][""]["handlers"] = ["default"]

    # Configure logging
    logging.config.dictConfig(logging_config)

    # Get logger
    logger = logging.getLogger(__name__)
    logger.debug("Logging configured successfully")

    return logger


def get_logger(name: str = None):
    """Get a logger instance"""
    return logging.getLogger(name or __name__)
