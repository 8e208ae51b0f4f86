import os
import logging
from contextlib import contextmanager
from typing import Generator, Optional

from dotenv import load_dotenv
from threadpoolctl import threadpool_limits

load_dotenv()

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Runtime configuration from environment variables
LOG_LEVEL = os.getenv("LAYER_LOG_LEVEL", "INFO")
NUM_THREADS = os.getenv("LAYER_NUM_THREADS")
DEFAULT_SEED = int(os.getenv("LAYER_SEED", "20240607"))

REPORT_SCHEMA_VERSION = "curved-layer.report/1"


def configure_logging(verbose: bool = False) -> None:
    """
    Apply the log level from the environment (or DEBUG when verbose).
    Safe to call more than once.
    """
    level_name = "DEBUG" if verbose else LOG_LEVEL.upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        logger.warning(f"Unknown LAYER_LOG_LEVEL '{LOG_LEVEL}', falling back to INFO")
        level = logging.INFO
    logging.getLogger().setLevel(level)


def get_thread_count() -> Optional[int]:
    """Thread count override, or None to let numpy/joblib decide"""
    if not NUM_THREADS:
        return None
    try:
        count = int(NUM_THREADS)
    except ValueError:
        logger.warning(f"Ignoring non-integer LAYER_NUM_THREADS={NUM_THREADS!r}")
        return None
    return count if count > 0 else None


def get_worker_count() -> int:
    """Worker count for joblib sweeps (-1 means all cores)"""
    return get_thread_count() or -1


@contextmanager
def thread_limits() -> Generator[None, None, None]:
    """
    Bound BLAS/OpenMP pools for the duration of a command.
    Without an override nothing is changed.
    """
    count = get_thread_count()
    if count is None:
        yield
        return
    logger.info(f"Limiting native thread pools to {count}")
    with threadpool_limits(limits=count):
        yield


def get_settings_info() -> dict:
    """Effective settings, echoed into every report"""
    return {
        "log_level": LOG_LEVEL,
        "num_threads": get_thread_count(),
        "default_seed": DEFAULT_SEED,
        "schema_version": REPORT_SCHEMA_VERSION,
    }
