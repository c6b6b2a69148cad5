"""
Private WGAN training: the clip -> noise -> ascent -> weight-clip critic step,
the noise-free generator step and the outer loop with budget accounting.

Only the critic ever sees real data. The generator step takes the generator,
the critic, a random stream and the config, none of which carries a data
value, so the generator inherits the critic's guarantee by post-processing.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .accountant import (MechanismStep, MomentLedger, accumulate,
                         calibrate_sigma_for_budget, default_ledger, eps_for_delta)
from .config import PPGANConfig, parse_config_text
from .dp import (ClipSpec, GaussianMechanismSpec, PrivacyTarget, calibrate_sigma_eq17,
                 clip_l2, clipped_sum, gaussian_mechanism)
from .errors import BudgetExhaustedError, ConfigError, NumericAbortError, ShapeError
from .mlp import (MlpParams, backward, backward_per_example, critic_mlp, flatten,
                  forward, from_shapes, generator_mlp, unflatten)
from .models import Checkpoint, StepMetrics, TrainConfig, TrainResult
from .ndnum import (Matrix, RngStream, Vector, l2_norm, sample_gaussian_matrix,
                    sample_indices)

logger = logging.getLogger(__name__)

GENERATOR_ACTIVATIONS = ['relu', 'tanh']
CRITIC_ACTIVATIONS = ['relu', 'linear']


def wgan_critic_objective(d_real: Vector, d_fake: Vector) -> float:
    """mean(f(x)) - mean(f(G(z))); the critic ascends it."""
    d_real = np.asarray(d_real, dtype=np.float64).reshape(-1)
    d_fake = np.asarray(d_fake, dtype=np.float64).reshape(-1)
    if d_real.shape != d_fake.shape:
        raise ShapeError(f"critic outputs differ in length: {d_real.size} vs {d_fake.size}")
    return float(np.mean(d_real) - np.mean(d_fake))


def _critic_per_example(omega: MlpParams, theta: MlpParams, real_batch: Matrix,
                        rng: RngStream) -> Tuple[np.ndarray, float]:
    """Per-example gradients of f(x_i) - f(G(z_i)) and the batch objective."""
    real_batch = np.asarray(real_batch, dtype=np.float64)
    m = real_batch.shape[0]
    z = sample_gaussian_matrix(rng, m, theta.input_dim)
    fake = forward(theta, z)

    d_real = forward(omega, real_batch)
    d_fake = forward(omega, fake)
    ones = np.ones((m, 1))
    g_real = backward_per_example(omega, real_batch, ones).per_example
    g_fake = backward_per_example(omega, fake, ones).per_example
    return g_real - g_fake, wgan_critic_objective(d_real, d_fake)


def _ascend_and_clip(omega: MlpParams, gradient: Vector, config: TrainConfig) -> MlpParams:
    values = flatten(omega).values + config.alpha_d * gradient
    values = np.clip(values, -config.weight_clip, config.weight_clip)
    return unflatten(values, omega)


def critic_step(omega: MlpParams, theta: MlpParams, real_batch: Matrix, rng: RngStream,
                config: TrainConfig) -> Tuple[MlpParams, StepMetrics]:
    """Clip-only WGAN critic step (no noise, no accounting): the reference path."""
    per_example, loss = _critic_per_example(omega, theta, real_batch, rng)
    total, norms = clipped_sum(per_example, ClipSpec(config.grad_clip))
    gradient = total / per_example.shape[0]
    metrics = StepMetrics(iteration=0, critic_loss=loss,
                          grad_norm_pre_clip=float(np.mean(norms)), eps_spent=math.inf)
    return _ascend_and_clip(omega, gradient, config), metrics


def dp_critic_step(omega: MlpParams, theta: MlpParams, real_batch: Matrix, rng: RngStream,
                   config: TrainConfig, ledger: MomentLedger, *, noise_rng: RngStream,
                   q: float) -> Tuple[MlpParams, MomentLedger, StepMetrics]:
    """
    One private critic update.

    Order: per-example gradients -> clip each by C -> sum -> add N(0, sigma_n^2 C^2 I)
    -> divide by m -> ascent with alpha_d -> clamp every weight to [-c, c] ->
    ledger += one MechanismStep(q, sigma_n).

    The budget is checked before any data is touched: if the step would push
    epsilon past the target, BudgetExhaustedError is raised and nothing changes.

    Args:
        rng: stream for the latent batch
        noise_rng: dedicated stream for the Gaussian noise
        q: sampling probability m / N
    """
    sigma = config.noise_scale
    new_ledger = ledger
    spent = math.inf
    if sigma > 0:
        new_ledger = accumulate(ledger, MechanismStep(q, sigma))
        spent = eps_for_delta(new_ledger, config.delta)
        if spent > config.epsilon:
            raise BudgetExhaustedError(
                f"next critic step would spend epsilon={spent:.4f} > target {config.epsilon:g} "
                f"(after {ledger.steps} steps)"
            )

    per_example, loss = _critic_per_example(omega, theta, real_batch, rng)
    total, norms = clipped_sum(per_example, ClipSpec(config.grad_clip))
    noised = gaussian_mechanism(total, GaussianMechanismSpec(config.grad_clip, sigma), noise_rng)
    gradient = noised / per_example.shape[0]

    metrics = StepMetrics(iteration=0, critic_loss=loss,
                          grad_norm_pre_clip=float(np.mean(norms)), eps_spent=spent)
    return _ascend_and_clip(omega, gradient, config), new_ledger, metrics


def generator_step(theta: MlpParams, omega: MlpParams, rng: RngStream,
                   config: TrainConfig) -> Tuple[MlpParams, StepMetrics]:
    """
    Descend -mean(f(G(z))) w.r.t. the generator, gradient clipped by C, no noise.
    """
    m = config.batch_size
    z = sample_gaussian_matrix(rng, m, theta.input_dim)
    fake = forward(theta, z)
    scores = forward(omega, fake)
    gen_loss = -float(np.mean(scores))

    upstream = np.full((m, 1), -1.0 / m)
    _, d_fake = backward(omega, fake, upstream)
    gradient, _ = backward(theta, z, d_fake)
    norm = l2_norm(gradient)
    gradient = clip_l2(gradient, ClipSpec(config.grad_clip))

    values = flatten(theta).values - config.alpha_g * gradient
    metrics = StepMetrics(iteration=0, gen_loss=gen_loss, grad_norm_pre_clip=norm)
    return unflatten(values, theta), metrics


def sampling_probability(config: TrainConfig, n_examples: int) -> float:
    return min(1.0, config.batch_size / n_examples)


def parameter_cautions(config: TrainConfig, q: float) -> List[str]:
    """Warnings for settings that buy little privacy: large q or many critic steps at small epsilon."""
    cautions = []
    if config.is_private and config.epsilon <= PPGANConfig.WARN_EPSILON:
        if q > PPGANConfig.WARN_Q:
            cautions.append(f"sampling probability q={q:.4g} > {PPGANConfig.WARN_Q}: "
                            f"the critic sees more data per step, each record gets less privacy")
        if config.critic_iters > PPGANConfig.WARN_CRITIC_ITERS:
            cautions.append(f"critic_iters={config.critic_iters} > {PPGANConfig.WARN_CRITIC_ITERS}: "
                            f"more critic iterations spend more privacy budget")
    return cautions


def resolve_noise(config: TrainConfig, n_examples: int) -> Tuple[TrainConfig, float]:
    """
    Fix sigma_n for a run.

    Returns:
        (config with noise_scale set, the closed-form sigma_n for reference)
    """
    q = sampling_probability(config, n_examples)
    sigma_eq17 = calibrate_sigma_eq17(PrivacyTarget(config.epsilon, config.delta),
                                      q, config.critic_iters)
    if not config.is_private:
        return replace(config, noise_scale=0.0), 0.0

    if config.noise_calibration == 'eq17':
        sigma = sigma_eq17
    elif config.noise_calibration == 'accountant':
        if config.noise_scale > 0:
            # already resolved (e.g. reloaded from a checkpoint)
            return config, sigma_eq17
        sigma = calibrate_sigma_for_budget(config.epsilon, config.delta, q,
                                           config.gen_iters * config.critic_iters,
                                           config.lambda_max)
    else:
        sigma = config.noise_scale
    return replace(config, noise_scale=sigma), sigma_eq17


def network_shapes(config: TrainConfig, data_dim: int):
    generator = [(config.latent_dim, config.hidden_dim), (config.hidden_dim, data_dim)]
    critic = [(data_dim, config.hidden_dim), (config.hidden_dim, 1)]
    return generator, critic


def params_from_checkpoint(ckpt: Checkpoint) -> Tuple[MlpParams, MlpParams, TrainConfig]:
    """Generator, critic and config stored in a checkpoint."""
    config = parse_config_text(ckpt.config_text)
    h = config.hidden_dim
    data_dim = (ckpt.omega.size - 1) // h - 2
    gen_shapes, critic_shapes = network_shapes(config, data_dim)
    theta = from_shapes(gen_shapes, GENERATOR_ACTIVATIONS, ckpt.theta)
    omega = from_shapes(critic_shapes, CRITIC_ACTIVATIONS, ckpt.omega)
    return theta, omega, config


@dataclass
class _State:
    theta: MlpParams
    omega: MlpParams
    ledger: MomentLedger
    train_rng: RngStream
    noise_rng: RngStream
    iteration: int

    def checkpoint(self, config: TrainConfig) -> Checkpoint:
        return Checkpoint(
            theta=flatten(self.theta).values,
            omega=flatten(self.omega).values,
            iteration=self.iteration,
            ledger_snapshot=self.ledger.snapshot(),
            rng_counters={self.train_rng.stream_id: self.train_rng.counter,
                          self.noise_rng.stream_id: self.noise_rng.counter},
            config_hash=config.config_hash(),
            config_text=config.canonical_text(),
        )


def _initial_state(config: TrainConfig, data_dim: int) -> _State:
    init_rng = RngStream(config.seed, PPGANConfig.STREAM_INIT)
    theta = generator_mlp(config.latent_dim, config.hidden_dim, data_dim, init_rng)
    omega = critic_mlp(data_dim, config.hidden_dim, init_rng)
    return _State(theta=theta, omega=omega, ledger=default_ledger(config.lambda_max),
                  train_rng=RngStream(config.seed, PPGANConfig.STREAM_TRAIN),
                  noise_rng=RngStream(config.seed, PPGANConfig.STREAM_NOISE),
                  iteration=0)


def _resumed_state(config: TrainConfig, ckpt: Checkpoint) -> _State:
    if ckpt.config_hash != config.config_hash():
        raise ConfigError(f"checkpoint config hash {ckpt.config_hash[:12]}... does not match "
                          f"this run's config {config.config_hash()[:12]}...")
    theta, omega, _ = params_from_checkpoint(ckpt)
    train_rng = RngStream(config.seed, PPGANConfig.STREAM_TRAIN,
                          ckpt.rng_counters.get(PPGANConfig.STREAM_TRAIN, 0))
    noise_rng = RngStream(config.seed, PPGANConfig.STREAM_NOISE,
                          ckpt.rng_counters.get(PPGANConfig.STREAM_NOISE, 0))
    return _State(theta=theta, omega=omega, ledger=MomentLedger.from_snapshot(ckpt.ledger_snapshot),
                  train_rng=train_rng, noise_rng=noise_rng, iteration=ckpt.iteration)


def train(config: TrainConfig, dataset: Matrix, *, private: bool = True,
          resume: Optional[Checkpoint] = None,
          on_metrics: Optional[Callable[[StepMetrics], None]] = None,
          on_checkpoint: Optional[Callable[[Checkpoint], None]] = None) -> TrainResult:
    """
    Run n_g generator iterations, each preceded by n_d critic steps.

    Args:
        config: run configuration; sigma_n is resolved here if still open
        dataset: real data, one example per row, values in [-1, 1]
        private: False runs the clip-only reference critic (no noise, no ledger)
        resume: checkpoint to continue from (must carry this config's hash)
        on_metrics: called with every per-iteration StepMetrics
        on_checkpoint: called every checkpoint_interval iterations and at the end

    Returns:
        TrainResult with the final checkpoint, metrics and accountant epsilon

    Raises:
        BudgetExhaustedError: the privacy target would be exceeded (partial result attached,
            holding the state after the last completed generator iteration)
        NumericAbortError: a loss became non-finite (diagnostic checkpoint attached)
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 2 or dataset.shape[0] == 0:
        raise ShapeError(f"dataset must be a non-empty 2-D matrix, got shape {dataset.shape}")
    n_examples, data_dim = dataset.shape

    config, sigma_eq17 = resolve_noise(config, n_examples)
    q = sampling_probability(config, n_examples)
    for caution in parameter_cautions(config, q):
        logger.warning(f"⚠️  {caution}")

    state = _resumed_state(config, resume) if resume else _initial_state(config, data_dim)

    logger.info("=" * 60)
    logger.info("PPGAN TRAINING")
    logger.info(f"examples={n_examples} dim={data_dim} q={q:.5f} sigma_n={config.noise_scale:.6f} "
                f"(closed form {sigma_eq17:.6f}) private={private and config.is_private}")
    logger.info(f"generator iterations {state.iteration + 1}..{config.gen_iters}, "
                f"critic iterations {config.critic_iters}")
    logger.info("=" * 60)

    metrics: List[StepMetrics] = []

    def result(halted: bool = False) -> TrainResult:
        if private and config.noise_scale > 0:
            final_eps = eps_for_delta(state.ledger, config.delta)
        else:
            final_eps = math.inf
        return TrainResult(checkpoint=state.checkpoint(config), metrics=metrics,
                           final_epsilon=final_eps, sigma_used=config.noise_scale,
                           sigma_eq17=sigma_eq17, halted=halted)

    for iteration in range(state.iteration + 1, config.gen_iters + 1):
        completed = (state.omega, state.ledger, state.train_rng.counter, state.noise_rng.counter)
        critic_metrics = None
        for _ in range(config.critic_iters):
            idx = sample_indices(state.train_rng, n_examples, config.batch_size)
            real_batch = dataset[idx]
            if private:
                try:
                    state.omega, state.ledger, critic_metrics = dp_critic_step(
                        state.omega, state.theta, real_batch, state.train_rng, config,
                        state.ledger, noise_rng=state.noise_rng, q=q)
                except BudgetExhaustedError as e:
                    logger.warning(f"⚠️  Budget halt at generator iteration {iteration}: {e}")
                    # roll back to the last completed iteration
                    state.omega, state.ledger, state.train_rng.counter, state.noise_rng.counter = completed
                    raise BudgetExhaustedError(str(e), partial=result(halted=True)) from e
            else:
                state.omega, critic_metrics = critic_step(
                    state.omega, state.theta, real_batch, state.train_rng, config)

        state.theta, gen_metrics = generator_step(state.theta, state.omega, state.train_rng, config)
        state.iteration = iteration

        row = StepMetrics(iteration=iteration,
                          critic_loss=critic_metrics.critic_loss,
                          gen_loss=gen_metrics.gen_loss,
                          grad_norm_pre_clip=critic_metrics.grad_norm_pre_clip,
                          eps_spent=critic_metrics.eps_spent)
        if not row.is_finite():
            logger.error(f"❌ Non-finite loss at iteration {iteration}: {row}")
            raise NumericAbortError(f"non-finite loss at iteration {iteration}",
                                    checkpoint=state.checkpoint(config))
        metrics.append(row)
        if on_metrics:
            on_metrics(row)

        if iteration % config.log_interval == 0:
            logger.info(f"[{iteration}/{config.gen_iters}] critic={row.critic_loss:+.5f} "
                        f"gen={row.gen_loss:+.5f} grad_norm={row.grad_norm_pre_clip:.4f} "
                        f"eps={row.eps_spent:.4f}")
        if on_checkpoint and (iteration % config.checkpoint_interval == 0
                              or iteration == config.gen_iters):
            on_checkpoint(state.checkpoint(config))

    final = result()
    logger.info(f"✅ Training complete: {final.checkpoint.iteration} iterations, "
                f"epsilon={final.final_epsilon:.4f}")
    return final
