"""Command-line interface: ``diffsqa {train,score,verify-oracle,eval,dump-features}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, plotting
from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import NoiseSchedule
from .errors import InvalidArgument, NumericalFailure, UnsupportedFormat
from .features import featurize, read_wav, write_melf
from .likelihood import DEFAULT_PATCH_FRAMES, TraceMode, compute_log_likelihood_batch
from .numerics import SeededRng
from .oracles import GaussianMixture, oracle_log_density
from .pipeline import load_wav_dir, score_waveforms, train_on_waveforms
from .synthetic import DEFAULT_SAMPLES, harmonic_corpus
from .trainer import TrainConfig, final_smoothed_loss, write_train_log

log = logging.getLogger("diffsqa")

ORACLE_TOLERANCE = {"gaussian": 1e-3, "gmm": 5e-3}

# seed streams per subsystem, derived from --seed
STREAM_PROBES = 1
STREAM_CORRUPTION = 2
STREAM_ORACLE = 3
STREAM_SYNTH = 4


def default_threads() -> int:
    env = os.environ.get("DSQA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _mode(args, root: SeededRng) -> TraceMode:
    if args.trace == "exact":
        return TraceMode.exact()
    seed = args.probe_seed if args.probe_seed is not None else root.spawn(STREAM_PROBES).seed
    return TraceMode.hutchinson(seed=seed, probe_count=args.probes)


def _schedule(args, base: NoiseSchedule) -> NoiseSchedule:
    return base.with_steps(args.steps) if args.steps else base


def cmd_train(args) -> int:
    if args.synthetic:
        root = SeededRng(args.seed)
        waves = harmonic_corpus(args.num_utterances, root.spawn(STREAM_SYNTH).seed, args.utterance_samples)
    else:
        waves = [w for _, w in load_wav_dir(args.data)]
    config = TrainConfig(batch_size=args.batch_size, total_samples=args.steps * args.batch_size, lr=args.lr,
                         warmup_steps=args.warmup, ema_rate=args.ema_rate, seed=args.seed)
    history = []
    ckpt = train_on_waveforms(waves, config, hidden_dims=args.hidden, embed_dim=args.embed_dim,
                              patch_frames=args.patch_frames, history=history)
    save_checkpoint(args.out, ckpt)
    if args.log:
        write_train_log(history, args.log)
    print(f"final smoothed loss {final_smoothed_loss(history):.6f}")
    print(f"wrote {args.out} ({ckpt.params.num_parameters} parameters)")
    return 0


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.model)
    mode = _mode(args, SeededRng(args.seed))
    schedule = _schedule(args, ckpt.schedule)
    rows, failed = [], 0
    for path in args.wavs:
        try:
            wave = read_wav(path)
            score = score_waveforms(ckpt, [wave], schedule, mode)[0]
        except (InvalidArgument, UnsupportedFormat, NumericalFailure, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failed += 1
            continue
        rows.append((Path(path).stem, score))
        print(f"{Path(path).stem},{score!r}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write("utterance_id,log_p_per_dim\n")
            for utt, score in rows:
                fh.write(f"{utt},{score!r}\n")
    return 1 if failed else 0


def oracle_points(dist: str, dim: int, points: int, rng: SeededRng):
    """Mixture and test points drawn from it; gmm points come in (+x, -x) pairs."""
    if dist == "gaussian":
        return GaussianMixture.gaussian(dim, 1.0), rng.normal(points * dim).reshape(points, dim)
    gmm = GaussianMixture.symmetric_pair(np.ones(dim), 0.5)
    half = (points + 1) // 2
    signs = np.where(rng.uniform(half) < 0.5, 1.0, -1.0)[:, None]
    base = signs * gmm.means[0] + gmm.component_std * rng.normal(half * dim).reshape(half, dim)
    return gmm, np.concatenate([base, -base])[:points]


def verify_oracle(dist: str, dim: int, points: int, steps: int, seed: int = 0):
    """Per-point |ODE - analytic| / dim with exact trace."""
    gmm, x = oracle_points(dist, dim, points, SeededRng(seed).spawn(STREAM_ORACLE))
    results = compute_log_likelihood_batch(gmm, x, NoiseSchedule(num_steps=steps), TraceMode.exact())
    ode = np.array([r.log_p for r in results])
    return np.abs(ode - oracle_log_density(gmm, x)) / dim


def cmd_verify_oracle(args) -> int:
    if args.dim < 1 or args.points < 1 or args.steps < 2:
        raise InvalidArgument("--dim and --points must be >= 1 and --steps >= 2")
    err = verify_oracle(args.dist, args.dim, args.points, args.steps, args.seed)
    tol = ORACLE_TOLERANCE[args.dist]
    worst = float(err.max())
    verdict = "PASS" if worst <= tol else "FAIL"
    print(f"dist={args.dist} dim={args.dim} points={args.points} steps={args.steps}")
    print(f"max_abs_error_per_dim={worst:.6e} mean_abs_error_per_dim={float(err.mean()):.6e}")
    if args.dist == "gmm" and args.points >= 2:
        half = (args.points + 1) // 2
        k = args.points - half
        print(f"symmetry_max_diff={float(np.max(np.abs(err[:k] - err[half:half + k]))) if k else 0.0:.3e}")
    print(f"{verdict} (tolerance {tol:g} nats/dim)")
    return 1 if (args.strict and verdict == "FAIL") else 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.model)
    root = SeededRng(args.seed)
    mode = _mode(args, root)
    schedule = _schedule(args, ckpt.schedule)
    clean = load_wav_dir(args.clean)
    noise = "white" if args.noise == "white" else [w for _, w in load_wav_dir(args.noise)]
    records, failures = evaluation.run_corruption_sweep(
        ckpt.params, clean, noise, args.snrs, schedule, mode, root.spawn(STREAM_CORRUPTION).seed,
        ckpt.features, threads=args.threads)
    for utt, cond, msg in failures:
        print(f"error: {utt} [{cond}]: {msg}", file=sys.stderr)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_records_csv(records, out / "records.csv")
    corr = evaluation.write_correlations_csv(records, out / "correlations.csv")
    conditions = [evaluation.CLEAN] + [evaluation.condition_label(s) for s in args.snrs]
    rows = evaluation.emit_histogram_csv(records, args.bins, out / "histogram.csv", conditions)
    if not args.no_figures:
        plotting.plot_histogram(rows, out / "histogram.png")
        plotting.plot_score_vs_snr(evaluation.condition_means(records), out / "score_vs_snr.png")
    for cond, mean in evaluation.condition_means(records).items():
        print(f"{cond}: mean score {mean:.6f}")
    print(f"PCC {corr['pcc']:.4f} SRCC {corr['srcc']:.4f} over {corr['n']} corrupted records")
    return 1 if failures else 0


def cmd_dump_features(args) -> int:
    ckpt = load_checkpoint(args.model)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = (ckpt.params.feature_mean, ckpt.params.feature_std)
    for path in args.wavs:
        spec = featurize(read_wav(path), stats, ckpt.features)
        write_melf(out / (Path(path).stem + ".melf"), spec)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffsqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=default_threads())

    def scoring(p):
        p.add_argument("--steps", type=int, default=None, help="grid points (default: checkpoint schedule)")
        p.add_argument("--trace", choices=("hutchinson", "exact"), default="hutchinson")
        p.add_argument("--probe-seed", type=int, default=None)
        p.add_argument("--probes", type=int, default=1)

    p = sub.add_parser("train", help="train a denoiser and write a checkpoint")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of 16 kHz mono WAV files")
    src.add_argument("--synthetic", action="store_true", help="generate a harmonic clean corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=6250)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--ema-rate", type=float, default=0.999)
    p.add_argument("--hidden", type=_int_list, default=(512, 512, 512))
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--patch-frames", type=int, default=DEFAULT_PATCH_FRAMES)
    p.add_argument("--num-utterances", type=int, default=200)
    p.add_argument("--utterance-samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--log", help="training log CSV (step, loss, lr, ema_rate)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score WAV files by per-element log-likelihood")
    p.add_argument("--model", required=True)
    p.add_argument("wavs", nargs="+")
    p.add_argument("--csv")
    scoring(p)
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("verify-oracle", help="compare ODE likelihoods with closed-form densities")
    p.add_argument("--dist", choices=("gaussian", "gmm"), default="gaussian")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--strict", action="store_true", help="exit 1 when the tolerance check fails")
    common(p)
    p.set_defaults(func=cmd_verify_oracle)

    p = sub.add_parser("eval", help="corruption sweep with correlations and histograms")
    p.add_argument("--model", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--noise", default="white", help="'white' or a directory of noise WAVs")
    p.add_argument("--snrs", type=_float_list, default=evaluation.DEFAULT_SNR_GRID)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--no-figures", action="store_true")
    scoring(p)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-features", help="write normalized log-mel features as MELF0001 files")
    p.add_argument("--model", required=True)
    p.add_argument("wavs", nargs="+")
    p.add_argument("--out-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_dump_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidArgument, UnsupportedFormat, NumericalFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
