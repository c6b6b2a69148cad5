import math

import numpy as np
import pytest

from ppgan.checkpoint import (CHECKPOINT_MAGIC, METRICS_HEADER, append_metrics, decode_checkpoint,
                              encode_checkpoint, load_checkpoint, read_metrics, save_checkpoint,
                              truncate_metrics)
from ppgan.errors import DataFormatError, DataLengthError
from ppgan.models import Checkpoint, StepMetrics, TrainConfig
from ppgan.utils import read_csv


@pytest.fixture
def checkpoint():
    config = TrainConfig(epsilon=5.0)
    return Checkpoint(
        theta=np.array([0.1, -2.5, 1e-300, 3.0]),
        omega=np.array([0.01, -0.01]),
        iteration=1500,
        ledger_snapshot="lambda_max=32\n1 0.5\n",
        rng_counters={1: 4096, 4: 77},
        config_hash=config.config_hash(),
        config_text=config.canonical_text(),
    )


def test_checkpoint_round_trip(checkpoint, tmp_path):
    path = save_checkpoint(checkpoint, tmp_path / "ckpt.bin")
    restored = load_checkpoint(path)
    assert np.array_equal(restored.theta, checkpoint.theta)
    assert np.array_equal(restored.omega, checkpoint.omega)
    assert restored.iteration == 1500
    assert restored.rng_counters == {1: 4096, 4: 77}
    assert restored.ledger_snapshot == checkpoint.ledger_snapshot
    assert restored.config_hash == checkpoint.config_hash
    assert restored.config_text == checkpoint.config_text


def test_checkpoint_starts_with_magic(checkpoint):
    assert encode_checkpoint(checkpoint)[:8] == CHECKPOINT_MAGIC


def test_bad_magic_rejected(checkpoint):
    data = b"NOTACKPT" + encode_checkpoint(checkpoint)[8:]
    with pytest.raises(DataFormatError):
        decode_checkpoint(data)


@pytest.mark.parametrize("cut", [4, 20, 60, -1])
def test_truncated_checkpoint_rejected(checkpoint, cut):
    data = encode_checkpoint(checkpoint)
    with pytest.raises(DataLengthError):
        decode_checkpoint(data[:cut])


def test_trailing_bytes_rejected(checkpoint):
    with pytest.raises(DataFormatError):
        decode_checkpoint(encode_checkpoint(checkpoint) + b"\x00")


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path / "nope.bin")


def test_metrics_append_and_read(tmp_path):
    path = tmp_path / "metrics.csv"
    append_metrics(path, [StepMetrics(1, -0.5, 0.25, 1.5, 0.75)])
    append_metrics(path, [StepMetrics(2, -0.4, 0.2, 1.25, math.inf)])
    rows = read_csv(path)
    assert rows[0] == METRICS_HEADER
    assert len(rows) == 3
    metrics = read_metrics(path)
    assert [m.iteration for m in metrics] == [1, 2]
    assert metrics[0].critic_loss == -0.5
    assert metrics[1].eps_spent == math.inf


def test_truncate_metrics_drops_later_rows(tmp_path):
    path = tmp_path / "metrics.csv"
    append_metrics(path, [StepMetrics(i, 0.1 * i) for i in range(1, 6)])
    truncate_metrics(path, 3)
    assert [m.iteration for m in read_metrics(path)] == [1, 2, 3]
    append_metrics(path, [StepMetrics(4)])
    assert [m.iteration for m in read_metrics(path)] == [1, 2, 3, 4]


def test_truncate_missing_file_is_noop(tmp_path):
    truncate_metrics(tmp_path / "metrics.csv", 3)
    assert not (tmp_path / "metrics.csv").exists()


def test_metrics_without_header_rejected(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("1,2,3,4,5\n")
    with pytest.raises(DataFormatError):
        read_metrics(path)
