import logging

import src.config as config


def build_logger(name: str) -> logging.Logger:
    logging.basicConfig(level=config.log_level.upper())
    return logging.getLogger(name)

logger: logging.Logger = build_logger("energy-xattn")
