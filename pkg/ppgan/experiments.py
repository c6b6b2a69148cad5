"""
Desk-scale experiments: loss convergence under noise and the privacy sweep
of Generate Scores across epsilon levels and seeds.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import PPGANConfig
from .errors import BudgetExhaustedError
from .models import ScoreReport, StepMetrics, TrainConfig
from .ndnum import Matrix, RngStream
from .scores import LabelModel, score_run
from .training import train

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = (math.inf, 20.0, 10.0, 5.0)
DEFAULT_SEEDS = (1, 2, 3)


@dataclass
class ConvergenceReport:
    """Stability of the critic loss over the trailing window of a run."""
    iterations: int
    finite: bool
    window: int
    window_mean_abs: float
    window_variance: float

    def print_summary(self):
        print("\n" + "=" * 60)
        print("CONVERGENCE REPORT")
        print("=" * 60)
        print(f"Iterations:              {self.iterations}")
        print(f"All losses finite:       {self.finite}")
        print(f"Trailing window:         {self.window}")
        print(f"Mean |critic loss|:      {self.window_mean_abs:.6g}")
        print(f"Critic loss variance:    {self.window_variance:.6g}")
        print("=" * 60 + "\n")


def convergence_report(metrics: Sequence[StepMetrics], window: int = 500) -> ConvergenceReport:
    """Finiteness of every row plus mean |loss| and variance over the last `window` rows."""
    finite = all(m.is_finite() for m in metrics)
    tail = np.array([m.critic_loss for m in metrics[-window:]], dtype=np.float64)
    if tail.size == 0:
        return ConvergenceReport(0, finite, window, math.nan, math.nan)
    return ConvergenceReport(
        iterations=len(metrics),
        finite=finite,
        window=min(window, tail.size),
        window_mean_abs=float(np.mean(np.abs(tail))),
        window_variance=float(np.var(tail)),
    )


def variance_within(private: ConvergenceReport, baseline: ConvergenceReport,
                    factor: float = 10.0) -> bool:
    """True when the private run's trailing variance is at most `factor` times the baseline's."""
    if not (private.finite and baseline.finite):
        return False
    if baseline.window_variance == 0:
        return private.window_variance == 0
    return private.window_variance <= factor * baseline.window_variance


def config_for_level(base: TrainConfig, epsilon: float, seed: int) -> TrainConfig:
    """Base config retargeted to one (epsilon, seed) cell of the sweep."""
    if math.isinf(epsilon):
        return replace(base, epsilon=math.inf, seed=seed, noise_scale=0.0,
                       noise_calibration='fixed')
    calibration = base.noise_calibration
    if calibration == 'fixed' and base.noise_scale == 0:
        calibration = 'accountant'
    noise = base.noise_scale if calibration == 'fixed' else 0.0
    return replace(base, epsilon=epsilon, seed=seed, noise_scale=noise,
                   noise_calibration=calibration)


@dataclass
class SweepResult:
    """Score reports of every (epsilon, seed) run and the per-epsilon median GS."""
    reports: List[ScoreReport] = field(default_factory=list)

    def median_gs(self) -> Dict[float, float]:
        by_eps: Dict[float, List[float]] = {}
        for r in self.reports:
            by_eps.setdefault(r.epsilon_label, []).append(r.gs)
        return {eps: float(np.median(v)) for eps, v in sorted(by_eps.items(), reverse=True)}

    def weakly_decreasing(self, tolerance: float = 0.0) -> bool:
        """Median GS never rises by more than `tolerance` as epsilon shrinks (stronger privacy)."""
        medians = list(self.median_gs().values())
        return all(a + tolerance >= b for a, b in zip(medians, medians[1:]))

    def print_summary(self):
        print("\n" + "=" * 60)
        print("PRIVACY SWEEP")
        print("=" * 60)
        for eps, gs in self.median_gs().items():
            print(f"eps={eps:>6g}  median GS={gs:.4f}")
        print(f"Weakly decreasing with privacy: {self.weakly_decreasing()}")
        print(f"Within GS band {PPGANConfig.SWEEP_GS_TOLERANCE:g}:   "
              f"{self.weakly_decreasing(PPGANConfig.SWEEP_GS_TOLERANCE)}")
        print("=" * 60 + "\n")


def _run_cell(base: TrainConfig, epsilon: float, seed: int, dataset: Matrix,
              label_model: LabelModel, n_samples: int, splits: int) -> ScoreReport:
    config = config_for_level(base, epsilon, seed)
    try:
        result = train(config, dataset)
        checkpoint = result.checkpoint
    except BudgetExhaustedError as e:
        logger.warning(f"⚠️  eps={epsilon:g} seed={seed} halted on budget, scoring the partial generator")
        checkpoint = e.partial.checkpoint
    return score_run(checkpoint, label_model, n_samples, splits,
                     RngStream(seed, PPGANConfig.STREAM_EVAL))


def privacy_sweep(base: TrainConfig, dataset: Matrix, label_model: LabelModel,
                  epsilons: Sequence[float] = DEFAULT_EPSILONS,
                  seeds: Sequence[int] = DEFAULT_SEEDS,
                  n_samples: int = 1000, splits: int = 10,
                  max_workers: Optional[int] = None) -> SweepResult:
    """
    Train and score one run per (epsilon, seed).

    Runs are independent and execute on a thread pool; reports come back in
    (epsilon, seed) grid order regardless of completion order.
    """
    cells = [(eps, seed) for eps in epsilons for seed in seeds]
    logger.info("=" * 60)
    logger.info(f"PRIVACY SWEEP: {len(epsilons)} epsilon levels x {len(seeds)} seeds")
    logger.info("=" * 60)

    reports: Dict[tuple, ScoreReport] = {}
    with ThreadPoolExecutor(max_workers=max_workers or 1) as executor:
        futures = {
            executor.submit(_run_cell, base, eps, seed, dataset, label_model, n_samples, splits): (eps, seed)
            for eps, seed in cells
        }
        for future in as_completed(futures):
            cell = futures[future]
            reports[cell] = future.result()
            logger.info(f"✅ eps={cell[0]:g} seed={cell[1]}: GS={reports[cell].gs:.4f}")

    return SweepResult([reports[cell] for cell in cells])
