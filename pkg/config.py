# config.py
import logging
import os
import sys

import dotenv

from utils import constants

logger = logging.getLogger(__name__)

# Determine the base path (works for frozen and non-frozen)
if getattr(sys, 'frozen', False):
    _BASE_DIR = os.path.dirname(sys.executable)
else:
    _BASE_DIR = os.path.dirname(os.path.abspath(__file__))

_DOTENV_PATH = os.path.join(_BASE_DIR, '.env')

# env var -> (config key, parser, default)
_ENV_OVERRIDES = {
    "FERSP_RESOLUTION": ("resolution", int, constants.DEFAULT_RESOLUTION),
    "FERSP_BINS": ("variant", str, constants.DEFAULT_VARIANT),
    "FERSP_TOP_K": ("top_k", int, constants.DEFAULT_TOP_K),
    "FERSP_SEED": ("seed", int, constants.DEFAULT_SEED),
    "FERSP_WORKERS": ("workers", int, constants.DEFAULT_WORKERS),
    "FERSP_CASCADE_DIR": ("cascade_dir", str, constants.CASCADE_DIR),
    "FERSP_LOG_LEVEL": ("log_level", str, constants.LOG_LEVEL),
}


def _normalize_variant(raw: str) -> str:
    # "16" is accepted as shorthand for bins16
    raw = raw.strip().lower()
    return f"bins{raw}" if raw.isdigit() else raw


def load_config() -> dict:
    """Loads pipeline defaults, letting .env and the environment override them."""
    if os.path.exists(_DOTENV_PATH):
        logger.info(f"Loading configuration from: {_DOTENV_PATH}")
        try:
            dotenv.load_dotenv(dotenv_path=_DOTENV_PATH)
        except Exception as e:
            logger.exception(f"Error loading .env file at {_DOTENV_PATH}: {e}")
    else:
        logger.debug(f".env file not found at {_DOTENV_PATH}; using environment variables only.")

    config = {}
    for env_name, (key, parser, default) in _ENV_OVERRIDES.items():
        raw = os.getenv(env_name)
        if raw is None or raw.strip() == "":
            config[key] = default
            continue
        try:
            config[key] = parser(raw.strip())
        except ValueError:
            logger.warning(f"Ignoring {env_name}={raw!r}: not a valid {parser.__name__}. Using {default!r}.")
            config[key] = default
    config["variant"] = _normalize_variant(config["variant"])
    return config


# Load config once on import
APP_CONFIG = load_config()
