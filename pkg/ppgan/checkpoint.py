"""
Checkpoint and metrics file codecs.

Checkpoint layout (little-endian):

    offset  type            field
    0       8 bytes         magic b"PPGANCKP"
    8       uint32          format version (1)
    12      32 bytes        SHA-256 config hash (raw digest)
    44      uint64          completed generator iterations
    52      uint32          number of RNG streams k
            k x (uint64, uint64)   (stream_id, counter)
            uint64 + f64[]  theta (generator flat parameters)
            uint64 + f64[]  omega (critic flat parameters)
            uint32 + utf-8  ledger snapshot text
            uint32 + utf-8  canonical config text
"""
import logging
import struct
from pathlib import Path
from typing import List

import numpy as np

from .errors import DataFormatError, DataLengthError
from .models import Checkpoint, StepMetrics
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PPGANCKP"
CHECKPOINT_VERSION = 1
METRICS_HEADER = ["iter", "critic_loss", "gen_loss", "grad_norm", "eps"]


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        bytes.fromhex(ckpt.config_hash),
        struct.pack("<Q", ckpt.iteration),
        struct.pack("<I", len(ckpt.rng_counters)),
    ]
    for stream_id in sorted(ckpt.rng_counters):
        parts.append(struct.pack("<QQ", stream_id, ckpt.rng_counters[stream_id]))
    for array in (ckpt.theta, ckpt.omega):
        array = np.ascontiguousarray(array, dtype="<f8")
        parts.append(struct.pack("<Q", array.size))
        parts.append(array.tobytes())
    for text in (ckpt.ledger_snapshot, ckpt.config_text):
        raw = text.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataLengthError(f"checkpoint truncated: need {n} bytes at offset {self.pos}, "
                                  f"file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    magic = reader.take(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"not a checkpoint: magic {magic!r}")
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    config_hash = reader.take(32).hex()
    (iteration,) = reader.unpack("<Q")
    (n_streams,) = reader.unpack("<I")
    counters = {}
    for _ in range(n_streams):
        stream_id, counter = reader.unpack("<QQ")
        counters[stream_id] = counter
    arrays = []
    for _ in range(2):
        (size,) = reader.unpack("<Q")
        arrays.append(np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64))
    texts = []
    for _ in range(2):
        (size,) = reader.unpack("<I")
        texts.append(reader.take(size).decode("utf-8"))
    if reader.pos != len(data):
        raise DataFormatError(f"{len(data) - reader.pos} trailing bytes after checkpoint")

    return Checkpoint(theta=arrays[0], omega=arrays[1], iteration=iteration,
                      ledger_snapshot=texts[0], rng_counters=counters,
                      config_hash=config_hash, config_text=texts[1])


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(ckpt))
    logger.info(f"💾 Checkpoint saved: {path} (iteration {ckpt.iteration})")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def metrics_row(m: StepMetrics) -> List[str]:
    return [str(m.iteration), repr(m.critic_loss), repr(m.gen_loss),
            repr(m.grad_norm_pre_clip), repr(m.eps_spent)]


def append_metrics(path, metrics: List[StepMetrics]):
    write_csv(path, METRICS_HEADER, (metrics_row(m) for m in metrics), append=True)


def read_metrics(path) -> List[StepMetrics]:
    rows = read_csv(path)
    if not rows or rows[0] != METRICS_HEADER:
        raise DataFormatError(f"{path}: missing metrics header {METRICS_HEADER}")
    return [StepMetrics(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]))
            for r in rows[1:]]


def truncate_metrics(path, last_iteration: int):
    """Drop rows past `last_iteration` so a resumed run continues without gaps or duplicates."""
    path = Path(path)
    if not path.exists():
        return
    kept = [m for m in read_metrics(path) if m.iteration <= last_iteration]
    write_csv(path, METRICS_HEADER, (metrics_row(m) for m in kept))
