"""Log-posterior potential U(z0; zt, y) = beta * log-likelihood + log p_theta(z0; zt).

The likelihood is either the explicit data-fit energy -beta * D(A(x) - y) or a
bilinear contrastive surrogate whose score stands in for log p(y | x).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.special import logsumexp, softmax

from errors import ConfigurationError, ShapeError, UnsupportedModeError
from logits_io import read_records, write_records
from operators import DataFit, ForwardOperator, Measurement, data_fit_value, residual_gradient
from prior import Denoiser, DenoiserOutput, PriorMode
from tokenspace import TokenSequence, VocabSpec, check_simplex, check_tokens, decode

logger = structlog.get_logger()

LikelihoodMode = Literal["explicit", "surrogate"]


@dataclass(frozen=True)
class PotentialConfig:
    data_fit: DataFit = DataFit()
    beta: float = 1.0
    prior_mode: PriorMode = "factorized"
    likelihood_mode: LikelihoodMode = "explicit"

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ConfigurationError(f"beta must be nonnegative, got {self.beta}")
        if self.likelihood_mode == "explicit" and self.data_fit.l1 == 0 and self.data_fit.l2 == 0:
            raise ConfigurationError("explicit likelihood needs l1 or l2 to be positive")
        if self.prior_mode not in ("factorized", "exact"):
            raise ConfigurationError(f"unknown prior mode: {self.prior_mode}")
        if self.likelihood_mode not in ("explicit", "surrogate"):
            raise ConfigurationError(f"unknown likelihood mode: {self.likelihood_mode}")


@dataclass(frozen=True, eq=False)
class BilinearSurrogate:
    """Linear encoders F (d_e x L) and G (d_e x m) scored as <F x, G y> / tau."""

    F: np.ndarray
    G: np.ndarray
    tau: float = 1.0

    def __post_init__(self) -> None:
        F = np.asarray(self.F, dtype=np.float64)
        G = np.asarray(self.G, dtype=np.float64)
        if F.ndim != 2 or G.ndim != 2 or F.shape[0] != G.shape[0]:
            raise ShapeError(f"encoders must share the embedding dimension, got {F.shape} and {G.shape}")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(G))):
            raise ValueError("surrogate encoders must be finite")
        if not self.tau > 0:
            raise ConfigurationError(f"temperature must be positive, got {self.tau}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)

    def score(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.dot(self.F @ x, self.G @ y) / self.tau)

    def gradient_x(self, y: np.ndarray) -> np.ndarray:
        return self.F.T @ (self.G @ np.asarray(y, dtype=np.float64)) / self.tau

    def save(self, path: str | Path) -> Path:
        return write_records(path, [self.F[None], self.G[None], np.array([[[self.tau]]])])

    @classmethod
    def load(cls, path: str | Path) -> "BilinearSurrogate":
        records = read_records(path)
        if len(records) != 3:
            raise ConfigurationError(f"{path}: a surrogate file holds 3 records, found {len(records)}")
        F, G, tau = records
        return cls(F=F[0], G=G[0], tau=float(tau.ravel()[0]))


def surrogate_gradient(w: np.ndarray, y: Measurement, sur: BilinearSurrogate, vocab: VocabSpec) -> np.ndarray:
    """Gradient of the surrogate score in one-hot coordinates; constant in w."""
    w = check_simplex(w)
    if w.shape[1] != vocab.K or w.shape[0] != sur.F.shape[1]:
        raise ShapeError(f"one-hot matrix {w.shape} does not match L={sur.F.shape[1]}, K={vocab.K}")
    return sur.gradient_x(y.values)[:, None] * vocab.intensity[None, :]


@dataclass
class InfoNCEFit:
    surrogate: BilinearSurrogate
    losses: List[float] = field(default_factory=list)
    correct_mass: float = 0.0


def infonce_loss(F: np.ndarray, G: np.ndarray, X: np.ndarray, Y: np.ndarray, tau: float) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """InfoNCE cross-entropy with in-batch negatives and its gradients in F and G.

    Returns (loss, dF, dG, P) where P[i, j] = q(I = j | x_i, Y).
    """
    A = X @ F.T
    B = Y @ G.T
    S = A @ B.T / tau
    n = S.shape[0]
    loss = float(np.mean(logsumexp(S, axis=1) - np.diag(S)))
    P = softmax(S, axis=1)
    dS = (P - np.eye(n)) / n
    dF = (dS @ B / tau).T @ X
    dG = (dS.T @ A / tau).T @ Y
    return loss, dF, dG, P


def infonce_fit(
    pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
    d_e: int,
    tau: float = 1.0,
    steps: int = 500,
    lr: float = 0.1,
    rng: Optional[np.random.Generator] = None,
) -> InfoNCEFit:
    if len(pairs) < 2:
        raise ValueError(f"InfoNCE needs at least 2 pairs for in-batch negatives, got {len(pairs)}")
    if d_e < 1 or tau <= 0 or steps < 0 or lr <= 0:
        raise ConfigurationError(f"invalid fit settings d_e={d_e}, tau={tau}, steps={steps}, lr={lr}")
    try:
        X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in pairs])
        Y = np.stack([np.asarray(y, dtype=np.float64) for _, y in pairs])
    except ValueError as e:
        raise ShapeError(f"all x and all y must share a dimension ({e})") from e
    rng = rng if rng is not None else np.random.default_rng(0)
    F = 0.5 * rng.standard_normal((d_e, X.shape[1]))
    G = 0.5 * rng.standard_normal((d_e, Y.shape[1]))

    losses: List[float] = []
    for _ in range(steps):
        loss, dF, dG, _ = infonce_loss(F, G, X, Y, tau)
        losses.append(loss)
        F -= lr * dF
        G -= lr * dG
    loss, _, _, P = infonce_loss(F, G, X, Y, tau)
    losses.append(loss)
    correct = float(np.mean(np.diag(P)))
    logger.info("Fitted contrastive surrogate", pairs=len(pairs), d_e=d_e, initial_loss=losses[0], final_loss=loss, correct_mass=correct)
    return InfoNCEFit(surrogate=BilinearSurrogate(F=F, G=G, tau=tau), losses=losses, correct_mass=correct)


class Potential:
    """U for one outer step: a fixed measurement, denoiser output and likelihood weight."""

    def __init__(
        self,
        y: Measurement,
        prior: DenoiserOutput,
        vocab: VocabSpec,
        cfg: PotentialConfig,
        *,
        exact_log_prior: Optional[Callable[[TokenSequence], float]] = None,
        surrogate: Optional[BilinearSurrogate] = None,
    ) -> None:
        if prior.logits.shape[1] != vocab.K:
            raise ShapeError(f"denoiser emits {prior.logits.shape[1]} classes, vocabulary has {vocab.K}")
        if cfg.prior_mode == "exact" and exact_log_prior is None:
            raise UnsupportedModeError("exact prior mode needs a prior exposing an exact joint")
        if cfg.likelihood_mode == "surrogate" and surrogate is None:
            raise ConfigurationError("surrogate likelihood mode needs a fitted surrogate")
        self.y = y
        self.operator: ForwardOperator = y.operator
        self.vocab = vocab
        self.cfg = cfg
        self.log_probs = prior.log_probs
        self.exact_log_prior = exact_log_prior
        self.surrogate = surrogate

    @classmethod
    def build(
        cls,
        denoiser: Denoiser,
        zt: TokenSequence,
        t: float,
        y: Measurement,
        cfg: PotentialConfig,
        surrogate: Optional[BilinearSurrogate] = None,
    ) -> "Potential":
        exact = partial(denoiser.joint_log_prob, zt=zt, t=t, mode="exact") if cfg.prior_mode == "exact" else None
        return cls(y, denoiser.denoise(zt, t), denoiser.vocab, cfg, exact_log_prior=exact, surrogate=surrogate)

    @property
    def length(self) -> int:
        return self.log_probs.shape[0]

    def likelihood_value(self, x: np.ndarray) -> float:
        if self.cfg.likelihood_mode == "surrogate":
            return self.cfg.beta * self.surrogate.score(x, self.y.values)
        return -self.cfg.beta * data_fit_value(self.operator, x, self.y, self.cfg.data_fit)

    def likelihood_grad_x(self, x: np.ndarray) -> np.ndarray:
        if self.cfg.likelihood_mode == "surrogate":
            return self.cfg.beta * self.surrogate.gradient_x(self.y.values)
        return self.cfg.beta * residual_gradient(self.operator, x, self.y, self.cfg.data_fit)

    def prior_value(self, z0: TokenSequence) -> float:
        if self.cfg.prior_mode == "exact":
            return self.exact_log_prior(z0)
        return float(self.log_probs[np.arange(z0.size), z0].sum())

    def value(self, z0: TokenSequence) -> float:
        z0 = check_tokens(z0, self.vocab)
        prior = self.prior_value(z0)
        if prior == -np.inf:
            return prior
        return self.likelihood_value(decode(z0, self.vocab)) + prior

    def relaxed_value(self, w: np.ndarray) -> float:
        """Continuous extension over one-hot weights; w is not required to lie on the simplex."""
        w = np.asarray(w, dtype=np.float64)
        return self.likelihood_value(w @ self.vocab.intensity) + float(np.sum(w * self.log_probs))

    def relaxed_gradient(self, w: np.ndarray) -> np.ndarray:
        if self.cfg.prior_mode == "exact":
            raise UnsupportedModeError("the exact joint prior has no continuous one-hot extension")
        w = np.asarray(w, dtype=np.float64)
        gx = self.likelihood_grad_x(w @ self.vocab.intensity)
        return gx[:, None] * self.vocab.intensity[None, :] + self.log_probs

    def gradient_one_hot(self, z0: TokenSequence) -> np.ndarray:
        z0 = check_tokens(z0, self.vocab)
        w = np.zeros((z0.size, self.vocab.K))
        w[np.arange(z0.size), z0] = 1.0
        return self.relaxed_gradient(w)

    def prior_deltas(self, z0: TokenSequence) -> np.ndarray:
        """Factorized single-site prior differences U_theta(z0 with l->k) - U_theta(z0)."""
        z0 = check_tokens(z0, self.vocab)
        lp = self.log_probs
        current = lp[np.arange(z0.size), z0][:, None]
        with np.errstate(invalid="ignore"):
            deltas = lp - current
        deltas[np.arange(z0.size), z0] = 0.0
        return deltas
