"""
Command-line surface of the PPGAN toolkit.

Subcommands:
    train             private WGAN training from a config file
    accountant        eps-for-delta / delta-for-eps queries
    calibrate         sigma_n from the closed form and the Gaussian-mechanism bound
    score             Inception-style score and GS of a checkpoint
    sample            generator samples as IDX images or an admissions CSV
    synth-ehr         synthetic admission vectors as CSV
    train-classifier  fit the evaluation label model
    sweep             epsilon x seed grid of train + score runs
    budget            (epsilon, delta) spent by a checkpoint's ledger

Exit codes: 0 success, 1 unexpected crash, 2 config/parameter error,
3 data error, 4 numeric abort, 5 budget halt.
"""
import argparse
import json
import logging
import math
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from .accountant import (MechanismStep, MomentLedger, accumulate, calibrate_sigma_for_budget,
                         default_ledger, delta_for_eps, eps_for_delta_with_order)
from .checkpoint import (append_metrics, load_checkpoint, save_checkpoint, truncate_metrics)
from .config import PPGANConfig, load_train_config, parse_config_text
from .data_io import (images_from_samples, load_synth_model, load_training_data, records_from_samples,
                      synthesize_ehr, write_ehr_csv, write_idx)
from .dp import (PrivacyTarget, calibrate_sigma_eq17, calibrate_sigma_lemma1, delta_eq17,
                 eps_eq17, strong_composition_baseline)
from .errors import (AccountantNumericError, BudgetExhaustedError, ConfigError, DataFormatError,
                     DataLengthError, LabelModelError, NumericAbortError, ParameterError,
                     ShapeError, ValidationError)
from .experiments import DEFAULT_EPSILONS, DEFAULT_SEEDS, privacy_sweep
from .models import ICD9_VECTOR_LENGTH, RunManifest, TrainResult
from .ndnum import RngStream
from .scores import (append_scores, load_label_model, sample_generator, save_label_model, score_run,
                     train_label_model)
from .training import train
from .utils import fingerprint_array, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_BUDGET = 5

HALTED_CHECKPOINT = "checkpoint-halted.bin"

EXIT_CODES = [
    (BudgetExhaustedError, EXIT_BUDGET),
    (NumericAbortError, EXIT_NUMERIC),
    (AccountantNumericError, EXIT_NUMERIC),
    (ConfigError, EXIT_CONFIG),
    (ParameterError, EXIT_CONFIG),
    (DataFormatError, EXIT_DATA),
    (DataLengthError, EXIT_DATA),
    (ValidationError, EXIT_DATA),
    (ShapeError, EXIT_DATA),
    (LabelModelError, EXIT_DATA),
]


def _overrides(args) -> dict:
    return {'seed': str(args.seed)} if getattr(args, 'seed', None) is not None else {}


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_files(out: Path, result: TrainResult, config_path: str, fingerprint: str,
                     started_at: datetime):
    config = parse_config_text(result.checkpoint.config_text)
    (out / PPGANConfig.SUMMARY_FILE).write_text(result.format_summary(config.delta),
                                                encoding='utf-8', newline='\n')
    manifest = RunManifest(config_path=config_path, config=config,
                           dataset_fingerprint=fingerprint, output_dir=str(out),
                           started_at=started_at, finished_at=datetime.now())
    with open(out / PPGANConfig.MANIFEST_FILE, 'w', encoding='utf-8') as f:
        json.dump(manifest.to_dict(), f, indent=2)


def cmd_train(args) -> int:
    """Train, checkpoint every interval, append metrics and write the summary."""
    started_at = datetime.now()
    config = load_train_config(args.config, _overrides(args))
    dataset, _ = load_training_data(config, args.data_dir)
    fingerprint = fingerprint_array(dataset)
    out = _out_dir(args)
    metrics_path = out / PPGANConfig.METRICS_FILE

    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        truncate_metrics(metrics_path, resume.iteration)
        logger.info(f"Resuming from {args.resume} at iteration {resume.iteration}")
    elif metrics_path.exists():
        metrics_path.unlink()

    def on_checkpoint(ckpt):
        save_checkpoint(ckpt, out / PPGANConfig.CHECKPOINT_PATTERN.format(ckpt.iteration))

    try:
        result = train(config, dataset, resume=resume,
                       on_metrics=lambda row: append_metrics(metrics_path, [row]),
                       on_checkpoint=on_checkpoint)
    except BudgetExhaustedError as e:
        if e.partial is not None:
            save_checkpoint(e.partial.checkpoint, out / HALTED_CHECKPOINT)
            _write_run_files(out, e.partial, str(args.config), fingerprint, started_at)
            e.partial.print_summary(config.delta)
        raise

    _write_run_files(out, result, str(args.config), fingerprint, started_at)
    result.print_summary(config.delta)
    return EXIT_OK


def cmd_accountant(args) -> int:
    """Accountant answer next to the closed form (and, for epsilon, the composition baseline)."""
    ledger = default_ledger(args.lambda_max)
    step = MechanismStep(args.q, args.sigma)
    if args.steps > 0:
        ledger = accumulate(ledger, step, args.steps)

    if args.query == 'eps-for-delta':
        eps, order = eps_for_delta_with_order(ledger, args.delta)
        print(f"accountant_epsilon = {eps:.6f} (order {order:g})")
        print(f"eq17_epsilon = {eps_eq17(args.sigma, args.q, args.steps, args.delta):.6f}")
        print(f"strong_composition_epsilon = "
              f"{strong_composition_baseline(args.sigma, args.q, args.steps, args.delta):.6f}")
    else:
        if args.epsilon is None:
            raise ParameterError("delta-for-eps needs --epsilon")
        print(f"accountant_delta = {delta_for_eps(ledger, args.epsilon):.6e}")
        print(f"eq17_delta = {delta_eq17(args.sigma, args.q, args.steps, args.epsilon):.6e}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    target = PrivacyTarget(args.epsilon, args.delta)
    print(f"sigma_n = {calibrate_sigma_eq17(target, args.q, args.n_d):.6f}")
    print(f"lemma1_sigma_bound = {calibrate_sigma_lemma1(target, args.sensitivity):.6f}")
    if args.gen_iters:
        sigma = calibrate_sigma_for_budget(args.epsilon, args.delta, args.q,
                                           args.gen_iters * args.n_d, args.lambda_max)
        print(f"accountant_sigma_n = {sigma:.6f}")
    return EXIT_OK


def cmd_score(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model = load_label_model(args.label_model)
    config = parse_config_text(checkpoint.config_text)
    seed = config.seed if args.seed is None else args.seed
    report = score_run(checkpoint, model, args.n, args.splits,
                       RngStream(seed, PPGANConfig.STREAM_EVAL))
    out = _out_dir(args)
    append_scores(out / PPGANConfig.SCORES_FILE, [report])
    print(",".join(report.csv_row()))
    return EXIT_OK


def cmd_sample(args) -> int:
    """Write generator samples: an IDX image file for image runs, an admissions CSV for EHR runs."""
    if args.n < 1:
        raise ParameterError(f"--n must be >= 1, got {args.n}")
    checkpoint = load_checkpoint(args.checkpoint)
    config = parse_config_text(checkpoint.config_text)
    seed = config.seed if args.seed is None else args.seed
    samples = sample_generator(checkpoint, args.n, RngStream(seed, PPGANConfig.STREAM_EVAL))

    if config.dataset == 'ehr':
        write_ehr_csv(args.out, records_from_samples(samples))
        logger.info(f"✅ Wrote {args.n} generated admissions to {args.out}")
    else:
        images = images_from_samples(samples)
        write_idx(images, args.out)
        logger.info(f"✅ Wrote {images.count} generated {images.rows}x{images.cols} images to {args.out}")
    print(f"samples = {args.n}")
    print(f"iteration = {checkpoint.iteration}")
    return EXIT_OK


def cmd_synth_ehr(args) -> int:
    model = load_synth_model(args.model_file)
    records = synthesize_ehr(model, args.n, RngStream(args.seed, PPGANConfig.STREAM_DATA))
    for record in records:
        if record.codes.size != ICD9_VECTOR_LENGTH:
            raise ValidationError(f"record length {record.codes.size} != {ICD9_VECTOR_LENGTH}")
    write_ehr_csv(args.out, records)
    logger.info(f"✅ Wrote {len(records)} synthetic admissions to {args.out}")
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    config = load_train_config(args.config, _overrides(args))
    images, labels = load_training_data(config, args.data_dir)
    if labels is None:
        raise DataFormatError(f"dataset '{config.dataset}' has no labels to train a classifier on")
    model = train_label_model(images, labels, epochs=args.epochs,
                              rng=RngStream(config.seed, PPGANConfig.STREAM_EVAL),
                              hidden_dim=args.hidden)
    save_label_model(model, args.out)
    print(f"held_out_accuracy = {model.accuracy:.4f}")
    return EXIT_OK


def _parse_list(text: str, cast) -> list:
    return [cast(part) for part in text.split(",") if part.strip()]


def cmd_sweep(args) -> int:
    base = load_train_config(args.config)
    images, labels = load_training_data(base, args.data_dir)
    if args.label_model:
        model = load_label_model(args.label_model)
    else:
        if labels is None:
            raise DataFormatError("sweep needs --label-model for an unlabelled dataset")
        model = train_label_model(images, labels, rng=RngStream(base.seed, PPGANConfig.STREAM_EVAL))

    epsilons = _parse_list(args.epsilons, float)
    seeds = _parse_list(args.seeds, int)
    result = privacy_sweep(base, images, model, epsilons, seeds, args.n, args.splits, args.workers)

    out = _out_dir(args)
    scores_path = out / PPGANConfig.SCORES_FILE
    if scores_path.exists():
        scores_path.unlink()
    append_scores(scores_path, result.reports)
    result.print_summary()
    return EXIT_OK


def cmd_budget(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = parse_config_text(checkpoint.config_text)
    delta = args.delta if args.delta is not None else config.delta
    ledger = MomentLedger.from_snapshot(checkpoint.ledger_snapshot)
    eps, order = eps_for_delta_with_order(ledger, delta)
    print(f"steps = {ledger.steps}")
    print(f"epsilon = {eps:.6f} at delta = {delta:g} (order {order:g})")
    if math.isfinite(config.epsilon):
        print(f"target_epsilon = {config.epsilon:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ppgan', description='Differentially private WGAN toolkit')
    parser.add_argument('--log-level', default=None, help='Override PPGAN_LOG_LEVEL')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='Train a private WGAN')
    p.add_argument('--config', required=True)
    p.add_argument('--data-dir', default=None)
    p.add_argument('--out-dir', default='runs/latest')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--resume', default=None, help='Checkpoint to continue from')
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('accountant', help='Moments-accountant queries')
    p.add_argument('query', choices=['eps-for-delta', 'delta-for-eps'])
    p.add_argument('--q', type=float, required=True)
    p.add_argument('--sigma', type=float, required=True)
    p.add_argument('--steps', type=int, required=True)
    p.add_argument('--delta', type=float, default=1e-5)
    p.add_argument('--epsilon', type=float, default=None)
    p.add_argument('--lambda-max', type=int, default=None)
    p.set_defaults(handler=cmd_accountant)

    p = sub.add_parser('calibrate', help='Noise scale for a privacy target')
    p.add_argument('--epsilon', type=float, required=True)
    p.add_argument('--delta', type=float, required=True)
    p.add_argument('--q', type=float, required=True)
    p.add_argument('--n-d', type=int, required=True)
    p.add_argument('--sensitivity', type=float, default=1.0)
    p.add_argument('--gen-iters', type=int, default=None,
                   help='Also calibrate with the accountant over gen_iters * n_d steps')
    p.add_argument('--lambda-max', type=int, default=None)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser('score', help='Score a checkpoint')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--label-model', required=True)
    p.add_argument('--n', type=int, default=1000)
    p.add_argument('--splits', type=int, default=10)
    p.add_argument('--out-dir', default='.')
    p.add_argument('--seed', type=int, default=None)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser('sample', help='Write generator samples from a checkpoint')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--n', type=int, default=100)
    p.add_argument('--out', required=True, help='IDX image file, or CSV for EHR runs')
    p.add_argument('--seed', type=int, default=None)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser('synth-ehr', help='Generate synthetic admission vectors')
    p.add_argument('--model-file', required=True)
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--seed', type=int, default=1)
    p.set_defaults(handler=cmd_synth_ehr)

    p = sub.add_parser('train-classifier', help='Fit the evaluation label model')
    p.add_argument('--config', required=True)
    p.add_argument('--data-dir', default=None)
    p.add_argument('--out', required=True)
    p.add_argument('--epochs', type=int, default=300)
    p.add_argument('--hidden', type=int, default=64)
    p.add_argument('--seed', type=int, default=None)
    p.set_defaults(handler=cmd_train_classifier)

    p = sub.add_parser('sweep', help='Train and score an epsilon x seed grid')
    p.add_argument('--config', required=True)
    p.add_argument('--data-dir', default=None)
    p.add_argument('--out-dir', default='runs/sweep')
    p.add_argument('--label-model', default=None)
    p.add_argument('--epsilons', default=",".join(f"{e:g}" for e in DEFAULT_EPSILONS))
    p.add_argument('--seeds', default=",".join(str(s) for s in DEFAULT_SEEDS))
    p.add_argument('--n', type=int, default=1000)
    p.add_argument('--splits', type=int, default=10)
    p.add_argument('--workers', type=int, default=1)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser('budget', help='Privacy spent by a checkpoint')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--delta', type=float, default=None)
    p.set_defaults(handler=cmd_budget)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level)

    try:
        PPGANConfig.validate()
    except ValueError as e:
        logger.error(f"❌ {e}")
        return EXIT_CONFIG

    try:
        return args.handler(args)
    except Exception as e:
        for error_type, code in EXIT_CODES:
            if isinstance(e, error_type):
                logger.error(f"❌ {type(e).__name__}: {e}")
                return code
        logger.error(f"Fatal error in ppgan {args.command}: {e}", exc_info=True)
        return EXIT_CRASH


if __name__ == "__main__":
    sys.exit(main())
