"""Glue between audio features, training and scoring."""

from __future__ import annotations

from pathlib import Path

from .checkpoint import Checkpoint
from .diffusion import NoiseSchedule
from .errors import InvalidArgument
from .features import FeatureConfig, compute_dataset_stats, featurize, read_wav
from .likelihood import DEFAULT_PATCH_FRAMES, TraceMode, score_corpus
from .network import NetworkArch
from .trainer import SpectrogramPatches, TrainConfig, train


def load_wav_dir(directory) -> list:
    """``(utterance_id, Waveform)`` for every ``*.wav`` in ``directory``, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidArgument(f"{directory} is not a directory")
    files = sorted(directory.glob("*.wav"))
    if not files:
        raise InvalidArgument(f"no .wav files in {directory}")
    return [(f.stem, read_wav(f)) for f in files]


def train_on_waveforms(waves, config: TrainConfig, hidden_dims=(512, 512, 512), embed_dim: int = 64,
                       patch_frames: int = DEFAULT_PATCH_FRAMES, feature_cfg: FeatureConfig = FeatureConfig(),
                       schedule: NoiseSchedule = NoiseSchedule(), history: list | None = None) -> Checkpoint:
    """Compute feature statistics, train on random patches and package the EMA model."""
    waves = list(waves)
    if not waves:
        raise InvalidArgument("training corpus is empty")
    stats = compute_dataset_stats(waves, feature_cfg)
    specs = [featurize(w, stats, feature_cfg) for w in waves]
    dataset = SpectrogramPatches(specs, patch_frames)
    arch = NetworkArch(dataset.dim, tuple(hidden_dims), embed_dim)
    params = train(dataset, config, arch, history=history)
    params.feature_mean, params.feature_std = stats
    return Checkpoint(params, schedule, feature_cfg, patch_frames)


def score_waveforms(ckpt: Checkpoint, waves, schedule: NoiseSchedule | None = None,
                    mode: TraceMode = TraceMode(), threads: int = 1) -> list[float]:
    stats = (ckpt.params.feature_mean, ckpt.params.feature_std)
    specs = [featurize(w, stats, ckpt.features) for w in waves]
    return score_corpus(ckpt.params, specs, schedule or ckpt.schedule, mode, threads=threads)
