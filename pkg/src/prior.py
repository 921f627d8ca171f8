"""Denoiser priors p_theta(z0; z_t).

Two implementations share the Denoiser protocol: an exact empirical-Bayes
denoiser over a finite clean dataset, and a table of external logits read from
a DLPS file (one L x K matrix per outer step).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Literal, Optional, Protocol

import numpy as np
import structlog
from scipy.special import logsumexp

from corruption import CorruptionProcess
from errors import ConfigurationError, DegenerateWeightsError, ShapeError, UnsupportedModeError
from logits_io import read_logits
from streams import sample_categorical
from tokenspace import TokenSequence, VocabSpec, check_tokens

logger = structlog.get_logger()

PriorMode = Literal["factorized", "exact"]
# distinct (z_t, t) pairs whose item weights are kept per denoiser
WEIGHT_CACHE_SIZE = 256
SampleMode = Literal["ancestral", "argmax"]


@dataclass(frozen=True, eq=False)
class DenoiserOutput:
    logits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.logits, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"denoiser logits must be L x K, got shape {arr.shape}")
        if np.any(np.isnan(arr)) or np.any(arr == np.inf):
            raise ValueError("denoiser logits contain NaN or +inf")
        object.__setattr__(self, "logits", arr)

    @property
    def log_probs(self) -> np.ndarray:
        return self.logits - logsumexp(self.logits, axis=1, keepdims=True)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def entropy(self) -> np.ndarray:
        p = self.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        return -terms.sum(axis=1)

    def factorized_log_prob(self, z0: TokenSequence) -> float:
        z0 = np.asarray(z0, dtype=np.int64)
        return float(self.log_probs[np.arange(z0.size), z0].sum())


class Denoiser(Protocol):
    vocab: VocabSpec

    def denoise(self, zt: TokenSequence, t: float) -> DenoiserOutput: ...

    def joint_log_prob(self, z0: TokenSequence, zt: TokenSequence, t: float, mode: PriorMode = "factorized") -> float: ...


def sample_clean(output: DenoiserOutput, rng: np.random.Generator, mode: SampleMode = "argmax") -> TokenSequence:
    if mode == "argmax":
        return np.argmax(output.logits, axis=1).astype(np.int64)
    if mode == "ancestral":
        return sample_categorical(output.probs, rng)
    raise ValueError(f"unknown sampling mode: {mode}")


@dataclass(eq=False)
class EmpiricalBayesDenoiser:
    """Exact p(z0 | z_t) when the data prior is a weighted finite set of sequences.

    Smoothing mixes the posterior with the uniform law over all K^L sequences,
    which keeps MH ratios finite off the dataset support.
    """

    dataset: np.ndarray
    process: CorruptionProcess
    prior_weights: Optional[np.ndarray] = None
    smoothing: float = 1e-6
    _weights: Callable[[bytes, float], np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        data = np.asarray(self.dataset)
        if data.size == 0:
            raise ConfigurationError("empirical-Bayes prior needs a non-empty dataset")
        if data.ndim != 2:
            raise ShapeError(f"dataset must be an N x L token matrix, got shape {data.shape}")
        vocab = self.process.vocab
        self.dataset = np.stack([check_tokens(row, vocab) for row in data])
        n = self.dataset.shape[0]
        w = np.full(n, 1.0 / n) if self.prior_weights is None else np.asarray(self.prior_weights, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("prior weights must be N nonnegative values summing to 1")
        self.prior_weights = w
        if not 0.0 <= self.smoothing <= 1.0:
            raise ConfigurationError(f"smoothing must lie in [0, 1], got {self.smoothing}")
        self._onehot = np.eye(vocab.K)[self.dataset]
        self._weights = lru_cache(maxsize=WEIGHT_CACHE_SIZE)(self._compute_weights)

    @property
    def vocab(self) -> VocabSpec:
        return self.process.vocab

    @property
    def length(self) -> int:
        return self.dataset.shape[1]

    def item_weights(self, zt: TokenSequence, t: float) -> np.ndarray:
        """Posterior weights w_i proportional to prior_i * prod_l q(z_t[l] | x_i[l], t)."""
        zt = check_tokens(zt, self.vocab, allow_mask=True)
        if zt.size != self.length:
            raise ShapeError(f"z_t has length {zt.size}, dataset sequences have {self.length}")
        return self._weights(zt.tobytes(), float(t))

    def _compute_weights(self, zt_bytes: bytes, t: float) -> np.ndarray:
        zt = np.frombuffer(zt_bytes, dtype=np.int64)
        qbar = self.process.cumulative_matrix(t)
        with np.errstate(divide="ignore"):
            log_q = np.log(qbar[self.dataset, zt[None, :]]).sum(axis=1) + np.log(self.prior_weights)
        if not np.any(np.isfinite(log_q)):
            raise DegenerateWeightsError("every dataset item has zero likelihood under z_t")
        w = np.exp(log_q - logsumexp(log_q))
        w.flags.writeable = False
        return w

    def marginals(self, zt: TokenSequence, t: float) -> np.ndarray:
        w = self.item_weights(zt, t)
        p = np.einsum("i,ilk->lk", w, self._onehot)
        eps = self.smoothing
        return (1.0 - eps) * p + eps / self.vocab.K

    def denoise(self, zt: TokenSequence, t: float) -> DenoiserOutput:
        with np.errstate(divide="ignore"):
            return DenoiserOutput(np.log(self.marginals(zt, t)))

    def joint_log_prob(self, z0: TokenSequence, zt: TokenSequence, t: float, mode: PriorMode = "factorized") -> float:
        z0 = check_tokens(z0, self.vocab)
        if mode == "factorized":
            return self.denoise(zt, t).factorized_log_prob(z0)
        if mode != "exact":
            raise ValueError(f"unknown prior mode: {mode}")
        w = self.item_weights(zt, t)
        mass = float(w[np.all(self.dataset == z0[None, :], axis=1)].sum())
        eps = self.smoothing
        total = (1.0 - eps) * mass + eps * float(self.vocab.K) ** (-z0.size)
        with np.errstate(divide="ignore"):
            return float(np.log(total))


@dataclass(eq=False)
class ExternalLogitsDenoiser:
    """Per-step logits produced by an external model; row i serves t = (i+1)/T."""

    table: np.ndarray
    vocab: VocabSpec

    def __post_init__(self) -> None:
        table = np.asarray(self.table, dtype=np.float64)
        if table.ndim != 3 or table.shape[2] != self.vocab.K:
            raise ShapeError(f"logits table must be steps x L x {self.vocab.K}, got shape {table.shape}")
        if not np.all(np.isfinite(table)):
            raise ValueError("external logits must be finite")
        self.table = table

    @classmethod
    def from_file(cls, path: str | Path, vocab: VocabSpec) -> "ExternalLogitsDenoiser":
        table = read_logits(path)
        logger.info("Loaded external logits", path=str(path), steps=table.shape[0], length=table.shape[1])
        return cls(table=table, vocab=vocab)

    @property
    def steps(self) -> int:
        return self.table.shape[0]

    def step_index(self, t: float) -> int:
        return int(min(max(round(float(t) * self.steps) - 1, 0), self.steps - 1))

    def denoise(self, zt: TokenSequence, t: float) -> DenoiserOutput:
        zt = check_tokens(zt, self.vocab, allow_mask=True)
        row = self.table[self.step_index(t)]
        if row.shape[0] != zt.size:
            raise ShapeError(f"logits table has L={row.shape[0]}, z_t has length {zt.size}")
        return DenoiserOutput(row)

    def joint_log_prob(self, z0: TokenSequence, zt: TokenSequence, t: float, mode: PriorMode = "factorized") -> float:
        if mode != "factorized":
            raise UnsupportedModeError("external logits only expose a factorized joint")
        return self.denoise(zt, t).factorized_log_prob(check_tokens(z0, self.vocab))
