"""
Utility functions: logging setup, hashing, CSV plumbing.
"""
import csv
import hashlib
import logging
import sys
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .config import PPGANConfig

logger = logging.getLogger(__name__)


def setup_logging(level: str = None, log_file: str = None):
    """Configure logging for the toolkit with Windows encoding support."""
    # Fix Windows console encoding
    if sys.platform == 'win32':
        sys.stdout.reconfigure(encoding='utf-8', errors='replace')
        sys.stderr.reconfigure(encoding='utf-8', errors='replace')

    level = level or PPGANConfig.LOG_LEVEL
    log_file = PPGANConfig.LOG_FILE if log_file is None else log_file

    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))

    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def fingerprint_array(array: np.ndarray) -> str:
    """SHA-256 over dtype, shape and raw bytes of an array."""
    array = np.ascontiguousarray(array)
    digest = hashlib.sha256()
    digest.update(str(array.dtype).encode('ascii'))
    digest.update(str(array.shape).encode('ascii'))
    digest.update(array.tobytes())
    return digest.hexdigest()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], append: bool = False):
    """
    Write (or append to) a comma-separated file with LF line endings.

    The header is written only when the file is new or empty.
    """
    path = Path(path)
    new_file = not append or not path.exists() or path.stat().st_size == 0
    mode = 'a' if append else 'w'

    with open(path, mode, encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        if new_file:
            writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def read_csv(path) -> List[List[str]]:
    """Read every row (header included) of a CSV file."""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return [row for row in csv.reader(f)]
