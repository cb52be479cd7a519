import hashlib
import logging
import os

from pathlib import Path

import numpy as np

from dotenv import load_dotenv


logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
OUTPUT_DIR_ENV = 'FEDTLU_OUTPUT_DIR'


def config_logging():
    """Configure basic logging."""
    log_level = (os.getenv('FEDTLU_LOG_LEVEL') or 'INFO').upper()
    # Only configure if not already configured
    if not logging.getLogger().hasHandlers():
        logging.basicConfig(
            level=getattr(logging, log_level, logging.INFO),
            format=LOG_FORMAT,
            handlers=[logging.StreamHandler()],
        )


def load_env(env_file: str | Path | None = None) -> None:
    """Load environment overrides from a .env file if present."""
    if env_file is None:
        load_dotenv()
    else:
        load_dotenv(env_file)


def resolve_output_dir(cli_out: str | Path | None, config_out: str | Path) -> Path:
    """Pick the output directory: CLI flag, then environment, then config."""
    if cli_out:
        return Path(cli_out)
    env_out = os.getenv(OUTPUT_DIR_ENV)
    if env_out:
        logger.debug(f'Output directory taken from {OUTPUT_DIR_ENV}={env_out}')
        return Path(env_out)
    return Path(config_out)


def derive_seed(*parts: int | str) -> int:
    """Derive a 63-bit seed by hashing an ordered tuple of tags and indices.

    Every per-round, per-client and per-epoch random stream is derived this
    way, so streams for different purposes never share state and do not
    depend on which strategy is running.
    """
    key = '/'.join(str(part) for part in parts).encode('utf-8')
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, 'little') >> 1


def make_rng(*parts: int | str) -> np.random.Generator:
    """Seeded PRNG for the stream identified by ``parts``."""
    return np.random.default_rng(derive_seed(*parts))
