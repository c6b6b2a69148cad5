"""
Dataset ingestion: MNIST IDX files, image normalisation, the bundled 8x8
digits, ICD9 admission vectors and the synthetic EHR generator.

IDX layout (big-endian):

    [offset] [type]          [value]          [description]
    0000     32 bit integer  0x00000803(2051) magic number (images)
    0004     32 bit integer  count            number of images
    0008     32 bit integer  rows
    0012     32 bit integer  cols
    0016     unsigned byte   ...              pixels, row-major

    0000     32 bit integer  0x00000801(2049) magic number (labels)
    0004     32 bit integer  count
    0008     unsigned byte   ...              labels
"""
import gzip
import json
import logging
import math
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.datasets import load_digits

from .config import PPGANConfig
from .errors import DataFormatError, DataLengthError, ParameterError, ShapeError, ValidationError
from .models import ICD9_VECTOR_LENGTH, EhrRecord, IdxImageSet, SynthEhrModel, TrainConfig
from .ndnum import Matrix, RngStream, sample_uniform
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
_GZIP_MAGIC = b"\x1f\x8b"

MNIST_FILES = {
    'train': ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    'test': ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
EHR_CSV_NAME = "ehr.csv"
EHR_MODEL_NAME = "ehr_model.json"
DEFAULT_EHR_RECORDS = 2000


# ---------------------------------------------------------------------------
# IDX

def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"file not found: {path}")
    data = path.read_bytes()
    if data[:2] == _GZIP_MAGIC:
        data = gzip.decompress(data)
    return data


def parse_idx_images(data: bytes, source: str = "<bytes>") -> IdxImageSet:
    if len(data) < 16:
        raise DataLengthError(f"{source}: {len(data)} bytes is shorter than the 16-byte image header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(f"{source}: bad image magic 0x{magic:08x} (expected 0x{IDX_IMAGE_MAGIC:08x})")
    expected = count * rows * cols
    body = data[16:]
    if len(body) < expected:
        raise DataLengthError(f"{source}: header promises {expected} pixel bytes, file has {len(body)}")
    if len(body) > expected:
        raise DataFormatError(f"{source}: {len(body) - expected} trailing bytes after pixel data")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols).copy()
    return IdxImageSet(count, rows, cols, pixels)


def parse_idx_labels(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 8:
        raise DataLengthError(f"{source}: {len(data)} bytes is shorter than the 8-byte label header")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABEL_MAGIC:
        raise DataFormatError(f"{source}: bad label magic 0x{magic:08x} (expected 0x{IDX_LABEL_MAGIC:08x})")
    body = data[8:]
    if len(body) < count:
        raise DataLengthError(f"{source}: header promises {count} labels, file has {len(body)}")
    if len(body) > count:
        raise DataFormatError(f"{source}: {len(body) - count} trailing bytes after labels")
    return np.frombuffer(body, dtype=np.uint8).copy()


def encode_idx_images(images: IdxImageSet) -> bytes:
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, images.count, images.rows, images.cols)
    return header + np.ascontiguousarray(images.pixels, dtype=np.uint8).tobytes()


def encode_idx_labels(labels) -> bytes:
    labels = np.ascontiguousarray(labels, dtype=np.uint8).reshape(-1)
    return struct.pack(">II", IDX_LABEL_MAGIC, labels.size) + labels.tobytes()


def load_idx(images_path, labels_path=None) -> Tuple[IdxImageSet, Optional[np.ndarray]]:
    """
    Parse an IDX image file and (optionally) its label file. Gzipped files are
    detected by their magic bytes.

    Returns:
        (images, labels or None)

    Raises:
        DataFormatError: wrong magic, trailing bytes or mismatched counts
        DataLengthError: file shorter than its header promises
    """
    images = parse_idx_images(_read_bytes(images_path), str(images_path))
    labels = None
    if labels_path is not None:
        labels = parse_idx_labels(_read_bytes(labels_path), str(labels_path))
        if labels.size != images.count:
            raise DataFormatError(f"{images.count} images but {labels.size} labels")
    logger.info(f"Loaded {images.count} images of {images.rows}x{images.cols} from {images_path}")
    return images, labels


def write_idx(images: IdxImageSet, images_path, labels=None, labels_path=None):
    """Serialise images (and labels) back to uncompressed IDX files."""
    Path(images_path).write_bytes(encode_idx_images(images))
    if labels is not None:
        if labels_path is None:
            raise ParameterError("labels given without a labels_path")
        Path(labels_path).write_bytes(encode_idx_labels(labels))


# ---------------------------------------------------------------------------
# Images

def pool_images(images: np.ndarray, side: int) -> np.ndarray:
    """
    Average-pool (n, rows, cols) images to (n, side, side).

    When `side` does not divide an image side, the image is first centre-cropped
    to the largest multiple of `side` (28 -> 24 for side 8).
    """
    n, rows, cols = images.shape
    if side < 1 or side > rows or side > cols:
        raise ParameterError(f"downsample side {side} does not fit {rows}x{cols} images")
    crop_r, crop_c = (rows // side) * side, (cols // side) * side
    top, left = (rows - crop_r) // 2, (cols - crop_c) // 2
    cropped = images[:, top:top + crop_r, left:left + crop_c]
    blocks = cropped.reshape(n, side, crop_r // side, side, crop_c // side)
    return blocks.mean(axis=(2, 4))


def normalize_images(images: IdxImageSet, downsample: Optional[int] = None) -> Matrix:
    """
    Map pixels to [-1, 1] via x / 127.5 - 1 and flatten one image per row.

    Args:
        images: parsed IDX images
        downsample: optional output side for average pooling

    Returns:
        (count, side*side) float64 matrix
    """
    scaled = images.pixels.astype(np.float64) / 127.5 - 1.0
    if downsample:
        scaled = pool_images(scaled, downsample)
    return np.clip(scaled.reshape(images.count, -1), -1.0, 1.0)


def images_from_samples(samples: Matrix) -> IdxImageSet:
    """
    Generated rows in [-1, 1] back to square uint8 images (inverse of the
    x / 127.5 - 1 scaling, rounded and clamped to 0..255).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ShapeError(f"samples must be a 2-D matrix, got shape {samples.shape}")
    n, dim = samples.shape
    side = math.isqrt(dim)
    if side * side != dim:
        raise ShapeError(f"sample dimension {dim} is not a square image")
    pixels = np.clip(np.rint((samples + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return IdxImageSet(n, side, side, pixels.reshape(n, side, side))


def _subset(n: int, max_examples: Optional[int], rng: Optional[RngStream]) -> np.ndarray:
    """Sorted indices of a random subset of size max_examples (all rows when None)."""
    if not max_examples or max_examples >= n:
        return np.arange(n)
    rng = rng or RngStream(0, PPGANConfig.STREAM_DATA)
    order = np.argsort(sample_uniform(rng, n), kind="stable")
    return np.sort(order[:max_examples])


def load_digits_dataset(max_examples: Optional[int] = None, downsample: Optional[int] = None,
                        rng: Optional[RngStream] = None) -> Tuple[Matrix, np.ndarray]:
    """
    scikit-learn's bundled 8x8 digits (1797 images, intensities 0..16) scaled to [-1, 1].

    Returns:
        (images one per row, integer labels)
    """
    bunch = load_digits()
    images = bunch.images.astype(np.float64) / 8.0 - 1.0
    if downsample and downsample != images.shape[1]:
        images = pool_images(images, downsample)
    idx = _subset(images.shape[0], max_examples, rng)
    data = images.reshape(images.shape[0], -1)[idx]
    logger.info(f"Loaded {data.shape[0]} digits of dimension {data.shape[1]}")
    return data, bunch.target[idx].astype(np.int64)


def _find_idx_file(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        candidate = data_dir / name
        if candidate.exists():
            return candidate
    raise DataFormatError(f"{stem}[.gz] not found in {data_dir}")


def load_mnist_dataset(data_dir, downsample: Optional[int] = None,
                       max_examples: Optional[int] = None, split: str = 'train',
                       rng: Optional[RngStream] = None) -> Tuple[Matrix, np.ndarray]:
    data_dir = Path(data_dir)
    image_stem, label_stem = MNIST_FILES[split]
    images, labels = load_idx(_find_idx_file(data_dir, image_stem), _find_idx_file(data_dir, label_stem))
    idx = _subset(images.count, max_examples, rng)
    return normalize_images(images, downsample)[idx], labels[idx].astype(np.int64)


# ---------------------------------------------------------------------------
# EHR

def encode_admission(icd9_codes: Iterable[int]) -> EhrRecord:
    """
    Binary admission vector with a 1 at each listed (1-indexed) code position.

    Raises:
        ValidationError: a code outside [1, 1071]
    """
    codes = np.zeros(ICD9_VECTOR_LENGTH, dtype=np.uint8)
    for code in icd9_codes:
        if isinstance(code, bool) or int(code) != code or not 1 <= code <= ICD9_VECTOR_LENGTH:
            raise ValidationError(f"ICD9 code {code!r} outside [1, {ICD9_VECTOR_LENGTH}]")
        codes[int(code) - 1] = 1
    return EhrRecord(codes)


def truncate_icd9(code: str) -> int:
    """Keep the first three digits of an ICD9 code: '250.01' -> 250, '0389' -> 38."""
    digits = str(code).strip().replace(".", "")
    head = digits[:3]
    if len(head) < 3 or not head.isdigit():
        raise ValidationError(f"ICD9 code {code!r} has no three-digit numeric prefix")
    return int(head)


def merge_admissions(records: Sequence[EhrRecord]) -> EhrRecord:
    """One vector per patient: the union of the set bits of every admission."""
    merged = np.zeros(ICD9_VECTOR_LENGTH, dtype=np.uint8)
    for record in records:
        merged |= record.codes
    return EhrRecord(merged)


def synthesize_ehr(model: SynthEhrModel, n: int, rng: RngStream) -> List[EhrRecord]:
    """
    n independent records: Bernoulli(prevalence) per code, then one pass over
    the comorbidity pairs.

    For a pair (a, b, lift), records carrying a move bit b towards the
    conditional rate t = min(1, prevalence[b] * lift): unset b bits are set
    with probability (t - p_b) / (1 - p_b) when t > p_b, set b bits are cleared
    with probability 1 - t / p_b when t < p_b.
    """
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    if n == 0:
        return []

    draws = sample_uniform(rng, n * ICD9_VECTOR_LENGTH).reshape(n, ICD9_VECTOR_LENGTH)
    bits = draws < model.prevalence

    for a, b, lift in model.comorbidity_pairs:
        u = sample_uniform(rng, n)
        carrier = bits[:, a - 1]
        p_b = float(model.prevalence[b - 1])
        target = min(1.0, p_b * lift)
        if target > p_b:
            raise_b = carrier & ~bits[:, b - 1] & (u < (target - p_b) / (1.0 - p_b))
            bits[:, b - 1] |= raise_b
        elif target < p_b:
            drop_b = carrier & bits[:, b - 1] & (u < 1.0 - target / p_b)
            bits[:, b - 1] &= ~drop_b

    return [EhrRecord(row.astype(np.uint8)) for row in bits]


def write_ehr_csv(path, records: Sequence[EhrRecord]):
    """0/1 columns with a header row of code indices 1..1071."""
    header = [str(i) for i in range(1, ICD9_VECTOR_LENGTH + 1)]
    rows = []
    for record in records:
        if record.codes.shape != (ICD9_VECTOR_LENGTH,):
            raise ValidationError(f"record length {record.codes.size} != {ICD9_VECTOR_LENGTH}")
        rows.append([str(int(v)) for v in record.codes])
    write_csv(path, header, rows)


def read_ehr_csv(path) -> List[EhrRecord]:
    rows = read_csv(path)
    expected = [str(i) for i in range(1, ICD9_VECTOR_LENGTH + 1)]
    if not rows or rows[0] != expected:
        raise DataFormatError(f"{path}: header must list code indices 1..{ICD9_VECTOR_LENGTH}")
    records = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != ICD9_VECTOR_LENGTH or any(v not in ("0", "1") for v in row):
            raise DataFormatError(f"{path}: line {lineno} is not {ICD9_VECTOR_LENGTH} 0/1 values")
        records.append(EhrRecord(np.array(row, dtype=np.uint8)))
    return records


def load_synth_model(path) -> SynthEhrModel:
    """
    Read a JSON generator model:

        {"default_prevalence": 0.01,
         "prevalence": {"9": 0.3, "42": 0.1},
         "comorbidity_pairs": [[9, 42, 2.5]]}
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"EHR model file not found: {path}")
    try:
        spec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON ({e})") from e

    prevalence = np.full(ICD9_VECTOR_LENGTH, float(spec.get("default_prevalence", 0.0)))
    for code, rate in spec.get("prevalence", {}).items():
        position = int(code)
        if not 1 <= position <= ICD9_VECTOR_LENGTH:
            raise ValidationError(f"prevalence code {code} outside [1, {ICD9_VECTOR_LENGTH}]")
        prevalence[position - 1] = float(rate)
    pairs = [(int(a), int(b), float(lift)) for a, b, lift in spec.get("comorbidity_pairs", [])]
    return SynthEhrModel(prevalence, pairs)


def ehr_matrix(records: Sequence[EhrRecord]) -> Matrix:
    """0/1 codes as -1/+1 rows (the generator's tanh range)."""
    if not records:
        return np.zeros((0, ICD9_VECTOR_LENGTH))
    return np.stack([r.codes for r in records]).astype(np.float64) * 2.0 - 1.0


def records_from_samples(samples: Matrix) -> List[EhrRecord]:
    """Threshold generated rows at 0 back into binary records."""
    return [EhrRecord((row > 0).astype(np.uint8)) for row in np.asarray(samples)]


def load_ehr_dataset(data_dir, max_examples: Optional[int] = None,
                     rng: Optional[RngStream] = None) -> Matrix:
    """Real records from `ehr.csv`, else synthetic ones from `ehr_model.json`."""
    data_dir = Path(data_dir)
    rng = rng or RngStream(0, PPGANConfig.STREAM_DATA)
    csv_path = data_dir / EHR_CSV_NAME
    if csv_path.exists():
        records = read_ehr_csv(csv_path)
        records = [records[i] for i in _subset(len(records), max_examples, rng)]
    else:
        model = load_synth_model(data_dir / EHR_MODEL_NAME)
        records = synthesize_ehr(model, max_examples or DEFAULT_EHR_RECORDS, rng)
    if not records:
        raise DataFormatError(f"no EHR records under {data_dir}")
    return ehr_matrix(records)


def load_training_data(config: TrainConfig, data_dir=None) -> Tuple[Matrix, Optional[np.ndarray]]:
    """
    Dataset named by the config, subset drawn from the data stream.

    Returns:
        (rows in [-1, 1], labels or None)
    """
    rng = RngStream(config.seed, PPGANConfig.STREAM_DATA)
    if config.dataset == 'digits':
        return load_digits_dataset(config.max_examples, config.downsample, rng)
    if data_dir is None:
        raise DataFormatError(f"dataset '{config.dataset}' needs --data-dir")
    if config.dataset == 'mnist':
        return load_mnist_dataset(data_dir, config.downsample, config.max_examples, rng=rng)
    return load_ehr_dataset(data_dir, config.max_examples, rng), None
