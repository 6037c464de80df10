"""Corruption sweeps, correlation measures and histogram tables.

The reference metric is the injected SNR: clean utterances are mixed with noise on
an SNR grid, every version is scored, and scores are correlated against SNR.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .diffusion import NoiseSchedule
from .errors import InvalidArgument, NumericalFailure, UndefinedCorrelation
from .features import FeatureConfig, Waveform, featurize
from .likelihood import TraceMode, score_corpus
from .numerics import SeededRng
from .synthetic import white_noise

log = logging.getLogger(__name__)

DEFAULT_SNR_GRID = (-10.0, -5.0, 0.0, 5.0, 10.0, 20.0)
CLEAN = "clean"


@dataclass(frozen=True)
class EvalRecord:
    utterance_id: str
    condition: str
    score: float
    reference: float


def condition_label(snr_db: float) -> str:
    return f"snr_{snr_db:g}dB"


def _power(x: np.ndarray) -> float:
    return float(np.mean(x**2))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, rng: SeededRng) -> tuple[Waveform, int]:
    """Mixture at ``snr_db`` and the number of samples clipped to [-1, 1].

    Longer noise is randomly cropped, shorter noise is tiled.
    """
    c = clean.samples
    p_clean = _power(c)
    if p_clean == 0:
        raise InvalidArgument("clean signal is silent; SNR is undefined")
    n = noise.samples
    if len(n) < len(c):
        n = np.tile(n, -(-len(c) // len(n)))[: len(c)]
    elif len(n) > len(c):
        start = int(rng.integers(1, len(n) - len(c) + 1)[0])
        n = n[start:start + len(c)]
    p_noise = _power(n)
    if p_noise == 0:
        raise InvalidArgument("noise signal is silent")
    gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = c + gain * n
    clipped = int(np.count_nonzero(np.abs(mixed) > 1.0))
    return Waveform(np.clip(mixed, -1.0, 1.0), clean.sample_rate), clipped


def add_noise_at_snr(clean: Waveform, noise: Waveform, snr_db: float, rng: SeededRng) -> Waveform:
    mixed, clipped = mix_at_snr(clean, noise, snr_db, rng)
    if clipped:
        log.warning("clipped %d samples mixing at %g dB", clipped, snr_db)
    return mixed


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise InvalidArgument("correlation needs two equal-length sequences of at least 2 values")
    return x, y


def pearson(x, y) -> float:
    x, y = _check_pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.max(np.abs(dx)), np.max(np.abs(dy))
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("correlation undefined: a sequence has zero variance")
    # rescale first so tiny spreads do not underflow when squared
    dx, dy = dx / sx, dy / sy
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    return float(np.clip(np.dot(dx, dy) / denom, -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    x, y = _check_pair(x, y)
    return pearson(rankdata(x, method="average"), rankdata(y, method="average"))


def _condition_key(label: str):
    if label == CLEAN:
        return (1, 0.0, label)
    if label.startswith("snr_") and label.endswith("dB"):
        try:
            return (0, float(label[4:-2]), label)
        except ValueError:
            pass
    return (2, 0.0, label)


def sort_records(records):
    return sorted(records, key=lambda r: (_condition_key(r.condition), r.utterance_id))


def run_corruption_sweep(model, clean_corpus, noise="white", snr_grid=DEFAULT_SNR_GRID,
                         schedule: NoiseSchedule = NoiseSchedule(), mode: TraceMode = TraceMode(),
                         seed: int = 0, feature_cfg: FeatureConfig = FeatureConfig(),
                         threads: int = 1, chunk_size: int = 64):
    """Score every utterance clean and at every SNR in ``snr_grid``.

    ``clean_corpus`` is a list of ``(utterance_id, Waveform)``; ``noise`` is ``"white"``
    or a list of noise Waveforms (one is picked per mixture).  Returns
    ``(records, failures)`` where failures are ``(utterance_id, condition, message)``.
    """
    if not clean_corpus:
        raise InvalidArgument("clean corpus is empty")
    if noise != "white" and not noise:
        raise InvalidArgument("noise corpus is empty")
    stats = (model.feature_mean, model.feature_std)
    root = SeededRng(seed)
    jobs, failures = [], []
    for u, (utt_id, wave) in enumerate(clean_corpus):
        versions = [(CLEAN, math.inf, wave)]
        for j, snr in enumerate(snr_grid):
            rng = root.spawn(u * (len(snr_grid) + 1) + j + 1)
            if noise == "white":
                noise_wave = white_noise(rng, len(wave.samples), wave.sample_rate)
            else:
                noise_wave = noise[int(rng.integers(1, len(noise))[0])]
            try:
                versions.append((condition_label(snr), float(snr), add_noise_at_snr(wave, noise_wave, snr, rng)))
            except InvalidArgument as exc:
                failures.append((utt_id, condition_label(snr), str(exc)))
        for label, ref, w in versions:
            try:
                jobs.append((utt_id, label, ref, featurize(w, stats, feature_cfg)))
            except (InvalidArgument, ValueError) as exc:
                failures.append((utt_id, label, str(exc)))

    specs = [j[3] for j in jobs]
    try:
        scores = score_corpus(model, specs, schedule, mode, chunk_size=chunk_size, threads=threads)
    except (NumericalFailure, InvalidArgument):
        scores = []
        for spec in specs:
            try:
                scores.append(score_corpus(model, [spec], schedule, mode)[0])
            except (NumericalFailure, InvalidArgument) as exc:
                scores.append(exc)

    records = []
    for (utt_id, label, ref, _), score in zip(jobs, scores):
        if isinstance(score, Exception):
            failures.append((utt_id, label, str(score)))
        else:
            records.append(EvalRecord(utt_id, label, float(score), ref))
    return sort_records(records), failures


def correlations(records) -> dict:
    """PCC and SRCC of score against reference over the corrupted (finite-reference) records."""
    noisy = [r for r in records if math.isfinite(r.reference)]
    scores = [r.score for r in noisy]
    refs = [r.reference for r in noisy]
    return {"pcc": pearson(scores, refs), "srcc": spearman(scores, refs), "n": len(noisy)}


def condition_means(records) -> dict:
    groups: dict[str, list[float]] = {}
    for r in records:
        groups.setdefault(r.condition, []).append(r.score)
    return {c: float(np.mean(groups[c])) for c in sorted(groups, key=_condition_key)}


def histogram_rows(records, bins: int = 20, conditions=None):
    """``(condition, bin_left, bin_right, count)`` rows on bin edges shared by all conditions."""
    if bins < 2:
        raise InvalidArgument(f"need at least 2 bins, got {bins}")
    scores = np.array([r.score for r in records], dtype=np.float64)
    lo, hi = (float(scores.min()), float(scores.max())) if scores.size else (0.0, 1.0)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    labels = conditions if conditions is not None else {r.condition for r in records}
    rows = []
    for label in sorted(labels, key=_condition_key):
        vals = np.array([r.score for r in records if r.condition == label])
        counts, _ = np.histogram(vals, bins=edges)
        rows.extend((label, float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(bins))
    return rows


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["utterance_id", "condition", "score", "reference"])
        for r in sort_records(records):
            w.writerow([r.utterance_id, r.condition, repr(r.score), repr(r.reference)])


def write_correlations_csv(records, path, reference: str = "snr_db") -> dict:
    """One PCC and one SRCC row; values are ``nan`` when the correlation is undefined."""
    try:
        corr = correlations(records)
    except (UndefinedCorrelation, InvalidArgument) as exc:
        log.warning("correlations not computed: %s", exc)
        n = sum(1 for r in records if math.isfinite(r.reference))
        corr = {"pcc": math.nan, "srcc": math.nan, "n": n}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["measure", "reference", "value", "n"])
        w.writerow(["PCC", reference, repr(corr["pcc"]), corr["n"]])
        w.writerow(["SRCC", reference, repr(corr["srcc"]), corr["n"]])
    return corr


def emit_histogram_csv(records, bins: int, path, conditions=None) -> list:
    rows = histogram_rows(records, bins, conditions)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _writer(fh)
        w.writerow(["condition", "bin_left", "bin_right", "count"])
        for label, left, right, count in rows:
            w.writerow([label, repr(left), repr(right), count])
    return rows
