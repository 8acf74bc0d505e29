import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Optional

import yaml
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

THREADS_ENV = "SQUEEZE_LAB_THREADS"

DEFAULTS = {
    "dim": 6,
    "k": 2,
    "radius": 1.0,
    "eps": 0.3,
    "shoulder": None,
    "seed": 7,
    "trials": 1000,
    "scale": 0.5,
    "tol": 1e-8,
    "cells": None,
    "samples": 1_000_000,
    "map": "identity",
    "unitary": False,
    "calibrate": False,
    "out": "results",
    "format": "csv",
    "timestamp": True,
    "plot": True,
}


def load_config(config_path="config.yaml"):
    """
    Loads run defaults from a YAML file, falling back to the built-in defaults.
    """
    config = dict(DEFAULTS)
    if not os.path.exists(config_path):
        return config

    with open(config_path, "r") as f:
        loaded = yaml.safe_load(f) or {}

    for key in loaded:
        if key not in DEFAULTS:
            logger.warning(f"⚠️ Ignoring unknown config key '{key}' in {config_path}")
    config.update({key: value for key, value in loaded.items() if key in DEFAULTS})
    return config


def get_thread_cap():
    """
    Returns the worker cap from SQUEEZE_LAB_THREADS, or None when unset.
    """
    raw = os.getenv(THREADS_ENV)
    if not raw:
        return None
    try:
        cap = int(raw)
    except ValueError:
        logger.warning(f"⚠️ Ignoring non-integer {THREADS_ENV}={raw!r}")
        return None
    return cap if cap >= 1 else None


def worker_count():
    cpus = os.cpu_count() or 1
    cap = get_thread_cap()
    return min(cap, cpus) if cap else cpus


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved settings of one experiment run."""

    command: str
    dim: int
    k: int
    radius: float
    eps: float
    shoulder: Optional[float]
    seed: int
    trials: int
    scale: float
    tol: float
    cells: Optional[int]
    samples: int
    map: str
    unitary: bool
    calibrate: bool
    out: str
    format: str
    timestamp: bool
    plot: bool

    def header(self):
        """Key/value pairs recorded at the top of every output table."""
        return {key: value for key, value in asdict(self).items() if key not in ("out",)}


def resolve_config(command, overrides=None, config_path="config.yaml"):
    """
    Built-in defaults < config file < explicit overrides (None means unset).
    """
    values = load_config(config_path)
    for key, value in (overrides or {}).items():
        if value is not None and key in values:
            values[key] = value
    names = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(command=command, **{k: v for k, v in values.items() if k in names})
