"""Brute-force enumeration over all K^L token sequences.

State ids use a mixed-radix encoding with position 0 least significant:
id = sum_l z[l] * K^l. All weights are accumulated in the log domain and
normalized with max-subtraction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import numpy.typing as npt
import structlog

from errors import CapacityError, ShapeError
from operators import Measurement, data_fit_value
from potential import BilinearSurrogate, PotentialConfig
from prior import Denoiser
from tokenspace import Codebook, TokenSequence, check_tokens

logger = structlog.get_logger()

MAX_STATES = 2**22
PROB_TOL = 1e-12

Geometry = Literal["index", "onehot", "embedding"]


def check_capacity(K: int, L: int) -> int:
    n = K**L
    if n > MAX_STATES:
        raise CapacityError(f"K^L = {K}^{L} = {n} exceeds the enumeration limit of {MAX_STATES} states")
    return n


def all_states(K: int, L: int) -> np.ndarray:
    """Every sequence as rows of an (K^L, L) matrix, row i holding state id i."""
    n = check_capacity(K, L)
    return (np.arange(n, dtype=np.int64)[:, None] // (K ** np.arange(L, dtype=np.int64))[None, :]) % K


def encode(z: npt.ArrayLike, K: int) -> np.ndarray | int:
    arr = np.asarray(z, dtype=np.int64)
    ids = arr @ (K ** np.arange(arr.shape[-1], dtype=np.int64))
    return int(ids) if arr.ndim == 1 else ids


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    logw = np.asarray(logw, dtype=np.float64)
    top = np.max(logw)
    if not np.isfinite(top):
        raise ValueError("every state has zero weight")
    w = np.exp(logw - top)
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    probs: np.ndarray
    K: int
    L: int
    prior_mode: str = ""

    def __post_init__(self) -> None:
        n = check_capacity(self.K, self.L)
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (n,):
            raise ShapeError(f"expected {n} probabilities for K={self.K}, L={self.L}, got shape {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities must be nonnegative and sum to 1, sum is {p.sum()!r}")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_log_weights(cls, logw: np.ndarray, K: int, L: int, prior_mode: str = "") -> "ExactDistribution":
        return cls(_normalize_log(logw), K, L, prior_mode)

    @classmethod
    def from_factors(cls, rows: np.ndarray) -> "ExactDistribution":
        """Product distribution of independent per-position categoricals (an L x K matrix)."""
        rows = np.asarray(rows, dtype=np.float64)
        L, K = rows.shape
        states = all_states(K, L)
        with np.errstate(divide="ignore"):
            logw = np.log(rows)[np.arange(L)[None, :], states].sum(axis=1)
        return cls.from_log_weights(logw, K, L)

    def prob(self, z: TokenSequence) -> float:
        return float(self.probs[encode(z, self.K)])

    def marginals(self) -> np.ndarray:
        states = all_states(self.K, self.L)
        return np.stack([np.bincount(states[:, l], weights=self.probs, minlength=self.K) for l in range(self.L)])

    def map_state(self) -> TokenSequence:
        return all_states(self.K, self.L)[int(np.argmax(self.probs))]


@dataclass(frozen=True, eq=False)
class SupportDistribution:
    """Posterior restricted to an explicit candidate set.

    Exact when the prior puts no mass outside the set; smoothing records the
    prior's uniform mixing weight, whose off-support share is dropped.
    """

    states: np.ndarray
    probs: np.ndarray
    smoothing: float = 0.0

    def map_estimate(self) -> TokenSequence:
        return self.states[int(np.argmax(self.probs))]


def _log_weights(
    states: np.ndarray,
    zt: TokenSequence,
    t: float,
    y: Measurement,
    prior: Denoiser,
    cfg: PotentialConfig,
    surrogate: Optional[BilinearSurrogate],
) -> np.ndarray:
    vocab = prior.vocab
    op = y.operator
    x = vocab.intensity[states]
    if cfg.beta == 0:
        loglik = np.zeros(states.shape[0])
    elif cfg.likelihood_mode == "surrogate":
        if surrogate is None:
            raise ValueError("surrogate likelihood mode needs a surrogate")
        gy = surrogate.G @ y.values
        loglik = cfg.beta * (x @ surrogate.F.T) @ gy / surrogate.tau
    else:
        loglik = np.array([-cfg.beta * data_fit_value(op, xi, y, cfg.data_fit) for xi in x])

    if cfg.prior_mode == "exact":
        logprior = np.array([prior.joint_log_prob(s, zt, t, mode="exact") for s in states])
    else:
        lp = prior.denoise(zt, t).log_probs
        logprior = lp[np.arange(states.shape[1])[None, :], states].sum(axis=1)
    return loglik + logprior


def enumerate_posterior(
    zt: TokenSequence,
    t: float,
    y: Measurement,
    prior: Denoiser,
    cfg: PotentialConfig,
    surrogate: Optional[BilinearSurrogate] = None,
) -> ExactDistribution:
    """p(z0 | zt, y) proportional to p(y | z0) p_theta(z0 | zt), by summing over every state."""
    K, L = prior.vocab.K, y.operator.grid.size
    states = all_states(K, L)
    logw = _log_weights(states, zt, t, y, prior, cfg, surrogate)
    logger.debug("Enumerated posterior", states=states.shape[0], prior_mode=cfg.prior_mode)
    return ExactDistribution.from_log_weights(logw, K, L, prior_mode=cfg.prior_mode)


def enumerate_support(
    states: np.ndarray,
    zt: TokenSequence,
    t: float,
    y: Measurement,
    prior: Denoiser,
    cfg: PotentialConfig,
    surrogate: Optional[BilinearSurrogate] = None,
) -> SupportDistribution:
    """Posterior restricted to the given candidate sequences (no enumeration limit)."""
    states = np.unique(np.stack([check_tokens(s, prior.vocab) for s in states]), axis=0)
    logw = _log_weights(states, zt, t, y, prior, cfg, surrogate)
    smoothing = float(getattr(prior, "smoothing", 0.0))
    return SupportDistribution(states=states, probs=_normalize_log(logw), smoothing=smoothing)


def exact_langevin_kernel(
    z0: TokenSequence,
    g: np.ndarray,
    eta: float,
    geometry: Geometry,
    K: int,
    codebook: Optional[Codebook] = None,
    bias: Optional[np.ndarray] = None,
) -> ExactDistribution:
    """Normalize exp(-||z' - z0 - eta g||^2 / (4 eta)) over every state in the chosen geometry.

    bias adds a per-(position, token) log-weight, as the prior term of the
    embedding proposal does.
    """
    if eta <= 0:
        raise ValueError(f"step size must be positive, got {eta}")
    z0 = np.asarray(z0, dtype=np.int64)
    L = z0.size
    states = all_states(K, L)
    g = np.asarray(g, dtype=np.float64)
    if geometry == "index":
        diff = states - z0[None, :] - eta * g[None, :]
        logw = -np.sum(diff * diff, axis=1) / (4.0 * eta)
    elif geometry == "onehot":
        eye = np.eye(K)
        diff = eye[states] - eye[z0][None] - eta * g[None]
        logw = -np.sum(diff * diff, axis=(1, 2)) / (4.0 * eta)
    elif geometry == "embedding":
        if codebook is None:
            raise ValueError("embedding geometry needs a codebook")
        diff = codebook.entries[states] - codebook.entries[z0][None] - eta * g[None]
        logw = -np.sum(diff * diff, axis=(1, 2)) / (4.0 * eta)
    else:
        raise ValueError(f"unknown geometry: {geometry}")
    if bias is not None:
        logw = logw + np.asarray(bias, dtype=np.float64)[np.arange(L)[None, :], states].sum(axis=1)
    return ExactDistribution.from_log_weights(logw, K, L)


def tv_distance(p: ExactDistribution, q: ExactDistribution) -> float:
    if (p.K, p.L) != (q.K, q.L):
        raise ShapeError(f"distributions differ in shape: K={p.K}, L={p.L} vs K={q.K}, L={q.L}")
    return float(0.5 * np.abs(p.probs - q.probs).sum())


def empirical_distribution(samples: npt.ArrayLike, K: int, L: int) -> ExactDistribution:
    n = check_capacity(K, L)
    arr = np.asarray(samples, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != L or arr.shape[0] == 0:
        raise ShapeError(f"samples must be a non-empty N x {L} matrix, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() >= K:
        raise ValueError(f"sample tokens must lie in [0, {K})")
    counts = np.bincount(encode(arr, K), minlength=n)
    return ExactDistribution(counts / counts.sum(), K, L)
