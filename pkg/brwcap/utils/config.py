"""
Configuration utilities for brwcap.
"""

import os
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)


class Config:
    """Configuration manager for numerical knobs shared by every module"""

    DEFAULT_CONFIG = {
        # gw_forest
        "pmf_truncation": 1e-12,
        "forest_vertex_ceiling": 2 ** 25,
        "quadratic_ceiling": 20000,
        "conditioned_acceptance_floor": 1e-6,
        "conditioned_max_attempts": 10 ** 7,
        "debug_checks": False,
        "release_check_fraction": 0.01,
        # lattice_walks
        "transition_max_steps": 128,
        "transition_max_radius": 256,
        # green
        "green_r_exact": 64,
        "green_r_exact_max": 256,
        "green_tolerance": 1e-9,
        "green_crossover_jump": 1e-3,
        "green_log_step": 0.1,
        "green_fft_max_points": 2 ** 24,
        "green_fft_min_size": 64,
        "green_remainder_tolerance": 1e-6,
        # capacity
        "solve_ceiling": 4000,
        "condition_ceiling": 1e12,
        "green_sum_ceiling": 8000,
        "green_sum_samples": 200000,
        "upper_bound_candidates": 256,
        "upper_bound_near_radius": 4.0,
        "mc_walkers": 64,
        "mc_radius_factor": 4.0,
        "mc_step_budget": 10 ** 7,
        "mc_max_sources": 2000,
        # harness
        "workers": 1,
        "memory_fraction": 0.8,
    }

    def __init__(self, config_dir: Optional[str] = None):
        """Initialize the configuration manager"""
        self.config_dir = config_dir or self._get_config_dir()
        self.config_file = os.path.join(self.config_dir, "config.json")
        self.config = self._load_config()

    def _get_config_dir(self):
        """Get the configuration directory, create if it doesn't exist"""
        home_dir = str(Path.home())
        config_dir = os.path.join(home_dir, ".brwcap")

        if not os.path.exists(config_dir):
            try:
                os.makedirs(config_dir)
            except Exception as e:
                logger.error(f"Failed to create config directory: {str(e)}")
                # Fall back to current directory
                config_dir = "."

        return config_dir

    def _load_config(self):
        """Load configuration from file, or create default if it doesn't exist"""
        if not os.path.exists(self.config_file):
            return self._save_config(dict(self.DEFAULT_CONFIG))

        try:
            with open(self.config_file, "r") as f:
                config = json.load(f)

            # Update with any missing default keys
            updated = False
            for key, value in self.DEFAULT_CONFIG.items():
                if key not in config:
                    config[key] = value
                    updated = True

            if updated:
                self._save_config(config)

            return config

        except Exception as e:
            logger.error(f"Failed to load config: {str(e)}")
            return dict(self.DEFAULT_CONFIG)

    def _save_config(self, config):
        """Save configuration to file"""
        try:
            os.makedirs(self.config_dir, exist_ok=True)
            with open(self.config_file, "w") as f:
                json.dump(config, f, indent=2)
            return config
        except Exception as e:
            logger.error(f"Failed to save config: {str(e)}")
            return config

    def get(self, key, default=None):
        """Get a configuration value"""
        if default is None:
            default = self.DEFAULT_CONFIG.get(key)
        return self.config.get(key, default)

    def set(self, key, value):
        """Set a configuration value"""
        self.config[key] = value
        self._save_config(self.config)

    def update(self, values: Dict[str, Any]):
        """Override several values in memory (not persisted)"""
        for key, value in values.items():
            if key not in self.DEFAULT_CONFIG:
                logger.warning(f"Unknown configuration key ignored: {key}")
                continue
            self.config[key] = value

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.config)

    @classmethod
    def defaults(cls) -> "Config":
        """In-memory configuration holding the defaults only"""
        config = cls.__new__(cls)
        config.config_dir = None
        config.config_file = None
        config.config = dict(cls.DEFAULT_CONFIG)
        return config


def _coerce(text: str):
    """Turn a key=value string into int, float, bool or str"""
    value = text.strip()
    lowered = value.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def load_document(path: str) -> Dict[str, Any]:
    """
    Load an experiment document.

    Accepts a JSON object or flat ``key=value`` lines (``#`` starts a comment).
    Keys use either CLI spelling (``n-min``) or attribute spelling (``n_min``).
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()

    stripped = text.lstrip()
    if stripped.startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            raw[key.strip()] = _coerce(value)

    document = {key.replace("-", "_"): value for key, value in raw.items()}
    logger.debug(f"Loaded {len(document)} keys from {path}")
    return document


_default_config: Optional[Config] = None


def default_config() -> Config:
    """Process-wide in-memory defaults, used when a caller passes no Config"""
    global _default_config
    if _default_config is None:
        _default_config = Config.defaults()
    return _default_config
