"""Unsupervised signal quality scoring with a diffusion-model log-likelihood.

A denoiser trained on clean speech features defines a probability-flow ODE; the
per-element log-likelihood of a test utterance under that flow is its quality score.
"""

from .diffusion import NoiseSchedule
from .likelihood import TraceMode, compute_log_likelihood, score_corpus, score_utterance
from .numerics import SeededRng

__version__ = "0.1.0"

__all__ = ["NoiseSchedule", "SeededRng", "TraceMode", "compute_log_likelihood", "score_corpus", "score_utterance",
           "__version__"]
