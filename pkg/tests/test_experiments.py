import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ppgan.config import PPGANConfig, load_train_config
from ppgan.data_io import load_training_data
from ppgan.experiments import (ConvergenceReport, SweepResult, config_for_level, convergence_report,
                               privacy_sweep, variance_within)
from ppgan.mlp import MlpParams
from ppgan.models import ScoreReport, StepMetrics
from ppgan.ndnum import RngStream
from ppgan.scores import LabelModel, train_label_model
from ppgan.training import train

CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.fixture
def random_label_model():
    gen = np.random.default_rng(0)
    return LabelModel(MlpParams([(gen.normal(size=(4, 3)), gen.normal(size=3))], ['linear']),
                      np.arange(3))


def test_convergence_report_window():
    metrics = [StepMetrics(i, critic_loss=float(i)) for i in range(1, 11)]
    report = convergence_report(metrics, window=4)
    assert report.iterations == 10 and report.finite
    assert report.window == 4
    assert report.window_mean_abs == pytest.approx(8.5)
    assert report.window_variance == pytest.approx(1.25)


def test_convergence_report_flags_non_finite():
    metrics = [StepMetrics(1, critic_loss=0.1), StepMetrics(2, critic_loss=math.nan)]
    assert not convergence_report(metrics).finite


def test_convergence_report_empty():
    report = convergence_report([])
    assert report.iterations == 0 and math.isnan(report.window_variance)


def test_variance_within():
    base = ConvergenceReport(100, True, 50, 0.1, 0.01)
    assert variance_within(ConvergenceReport(100, True, 50, 0.2, 0.05), base)
    assert not variance_within(ConvergenceReport(100, True, 50, 0.2, 0.5), base)
    assert not variance_within(ConvergenceReport(100, False, 50, 0.2, 0.01), base)


def test_config_for_level(tiny_config):
    open_level = config_for_level(tiny_config, math.inf, 3)
    assert math.isinf(open_level.epsilon) and open_level.noise_scale == 0 and open_level.seed == 3
    fixed = config_for_level(tiny_config, 20.0, 2)
    assert fixed.epsilon == 20.0 and fixed.noise_scale == tiny_config.noise_scale
    calibrated = config_for_level(replace(tiny_config, noise_calibration='accountant'), 5.0, 1)
    assert calibrated.noise_scale == 0.0 and calibrated.noise_calibration == 'accountant'
    from_open = config_for_level(replace(tiny_config, epsilon=math.inf, noise_scale=0.0), 5.0, 1)
    assert from_open.noise_calibration == 'accountant'


def test_sweep_result_medians():
    reports = [ScoreReport([1, 2], gs, eps, seed)
               for eps, gs, seed in [(5.0, 0.1, 1), (math.inf, 0.9, 1), (5.0, 0.3, 2),
                                     (math.inf, 0.7, 2), (5.0, 0.2, 3), (math.inf, 0.8, 3)]]
    result = SweepResult(reports)
    assert list(result.median_gs().items()) == [(math.inf, 0.8), (5.0, 0.2)]
    assert result.weakly_decreasing()
    assert not SweepResult([ScoreReport([1, 2], 0.1, math.inf), ScoreReport([1, 2], 0.5, 5.0)]).weakly_decreasing()
    assert SweepResult([ScoreReport([1, 2], 0.1, math.inf),
                        ScoreReport([1, 2], 0.5, 5.0)]).weakly_decreasing(tolerance=0.45)


def test_privacy_sweep_grid_order(tiny_config, tiny_dataset, random_label_model):
    result = privacy_sweep(tiny_config, tiny_dataset, random_label_model,
                           epsilons=(math.inf, 50.0), seeds=(1, 2), n_samples=20, splits=2,
                           max_workers=2)
    assert [(r.epsilon_label, r.seed) for r in result.reports] == [
        (math.inf, 1), (math.inf, 2), (50.0, 1), (50.0, 2)]
    assert all(0.0 <= r.gs <= 1.0 for r in result.reports)


def test_sweep_scores_halted_runs(tiny_config, tiny_dataset, random_label_model):
    result = privacy_sweep(tiny_config, tiny_dataset, random_label_model,
                           epsilons=(0.5,), seeds=(1,), n_samples=20, splits=2)
    assert len(result.reports) == 1
    assert result.reports[0].epsilon_label == 0.5


@pytest.mark.slow
def test_desk_scale_private_run_converges_like_baseline():
    private = load_train_config(CONFIGS / "desk_digits.conf")
    baseline = load_train_config(CONFIGS / "desk_digits_nonprivate.conf")
    data, _ = load_training_data(private)

    private_report = convergence_report(train(private, data).metrics)
    baseline_report = convergence_report(train(baseline, data, private=False).metrics)
    private_report.print_summary()
    baseline_report.print_summary()
    assert private_report.finite and baseline_report.finite
    assert private_report.window == baseline_report.window == 500
    assert variance_within(private_report, baseline_report, 10.0)


@pytest.mark.slow
def test_desk_scale_sweep_gs_falls_with_privacy():
    base = load_train_config(CONFIGS / "desk_digits.conf", {"gen_iters": "300"})
    images, labels = load_training_data(base)
    model = train_label_model(images, labels, rng=RngStream(base.seed, PPGANConfig.STREAM_EVAL))

    result = privacy_sweep(base, images, model, n_samples=1000, splits=10, max_workers=4)
    result.print_summary()
    assert list(result.median_gs()) == [math.inf, 20.0, 10.0, 5.0]
    assert result.weakly_decreasing(PPGANConfig.SWEEP_GS_TOLERANCE)
