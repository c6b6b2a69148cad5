"""
Deterministic seeded numerics: dense float64 matrices, vector algebra and
counter-based random streams.

Every random draw in the toolkit goes through an `RngStream`. A stream is the
triple (seed, stream_id, counter) over numpy's Philox4x64 bit generator:
the key is (seed, stream_id) and the counter counts consumed Philox blocks
(4 x uint64 each). A draw re-creates the generator at the stored counter, so
replaying a triple reproduces the draw exactly.

Counter advance per call (documented, fixed):
- sample_uniform(n):   ceil(n / 4) blocks
- sample_indices(m):   ceil(m / 4) blocks
- sample_gaussian(n):  ceil(2 * ceil(n / 2) / 4) blocks (Box-Muller pairs)
- sample_seed():       1 block
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.random import Philox

from .errors import ParameterError, ShapeError

Matrix = np.ndarray
Vector = np.ndarray

_MASK64 = (1 << 64) - 1
_BLOCK = 4  # uint64 words per Philox counter increment


@dataclass
class RngStream:
    """Single-owner counter-based random stream."""
    seed: int
    stream_id: int
    counter: int = 0

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64
        if self.counter < 0:
            raise ParameterError(f"counter must be >= 0, got {self.counter}")

    def derive(self, stream_id: int) -> "RngStream":
        """Child stream for a parallel caller: same seed, new id, counter 0."""
        return RngStream(self.seed, stream_id, 0)

    def copy(self) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.counter)

    def _raw(self, count: int) -> np.ndarray:
        blocks = -(-count // _BLOCK)
        if blocks == 0:
            return np.empty(0, dtype=np.uint64)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        bit_gen = Philox(counter=self.counter, key=key)
        raw = bit_gen.random_raw(blocks * _BLOCK)
        self.counter += blocks
        return raw[:count]

    def _uniform_open(self, count: int) -> np.ndarray:
        # 53-bit mantissa, shifted half a step: values in (0, 1), never 0
        raw = self._raw(count)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def as_matrix(data, rows: Optional[int] = None, cols: Optional[int] = None) -> Matrix:
    """Validate and convert to a 2-D float64 matrix with finite entries."""
    matrix = np.array(data, dtype=np.float64)
    if matrix.ndim == 1 and rows is None and cols is None:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got {matrix.ndim} dimensions")
    if rows is not None and matrix.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {matrix.shape[0]}")
    if cols is not None and matrix.shape[1] != cols:
        raise ShapeError(f"expected {cols} columns, got {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise ParameterError("matrix entries must be finite")
    return matrix


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """
    Matrix product with a fixed left-to-right summation order.

    out[i, j] = (...((a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...), i.e. exactly the
    naive triple loop, independent of the BLAS build.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out = out + a[:, k:k + 1] * b[k:k + 1, :]
    return out


def l2_norm(v) -> float:
    """Euclidean norm; empty or zero vector gives 0."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return 0.0
    return float(np.linalg.norm(v))


def sample_uniform(rng: RngStream, n: int, low: float = 0.0, high: float = 1.0) -> Vector:
    """n i.i.d. draws from U(low, high)."""
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    if not high >= low:
        raise ParameterError(f"need high >= low, got [{low}, {high}]")
    return low + (high - low) * rng._uniform_open(n)


def sample_gaussian(rng: RngStream, n: int, mean: float = 0.0, std: float = 1.0) -> Vector:
    """
    n i.i.d. draws from N(mean, std^2) by Box-Muller.

    The counter advances by the same amount for any std (std = 0 included).
    """
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    if not std >= 0:
        raise ParameterError(f"std must be >= 0, got {std}")

    pairs = -(-n // 2)
    u = rng._uniform_open(2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * math.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)

    if std == 0:
        return np.full(n, float(mean))
    return mean + std * z[:n]


def sample_gaussian_matrix(rng: RngStream, rows: int, cols: int,
                           mean: float = 0.0, std: float = 1.0) -> Matrix:
    return sample_gaussian(rng, rows * cols, mean, std).reshape(rows, cols)


def sample_indices(rng: RngStream, population: int, m: int) -> np.ndarray:
    """m indices drawn uniformly with replacement from range(population)."""
    if population < 1:
        raise ParameterError(f"population must be >= 1, got {population}")
    u = rng._uniform_open(m)
    return np.minimum((u * population).astype(np.int64), population - 1)


def sample_seed(rng: RngStream) -> int:
    """A 32-bit integer seed for libraries that take `random_state`."""
    return int(rng._raw(1)[0] >> np.uint64(32))
