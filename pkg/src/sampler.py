"""Discrete Langevin posterior sampling.

The outer loop walks the diffusion trajectory from the terminal state: denoise
z_t, draw a clean estimate, refine it with M discrete Langevin steps against
the posterior potential, then renoise to the next (lower) time. Each inner step
builds per-position proposal logits from an Adam-preconditioned likelihood
gradient plus the denoiser prior, samples every position in parallel and, when
enabled, applies a Metropolis-Hastings correction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import List, Literal, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import log_softmax, softmax

from corruption import CorruptionProcess
from errors import ShapeError
from operators import DataFit, Measurement
from potential import BilinearSurrogate, Potential, PotentialConfig
from prior import Denoiser, DenoiserOutput, PriorMode, sample_clean
from streams import ACCEPT, DENOISE, INIT, PROPOSAL, RENOISE, sample_categorical, substream
from tokenspace import Codebook, TokenSequence, VocabSpec, check_tokens, decode

logger = structlog.get_logger()

ProposalForm = Literal["index", "onehot", "embedding"]

# floor for prior log-probabilities entering proposal logits
LOG_FLOOR = -30.0
ENTROPY_ATOL = 1e-12


class SamplerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    T: int = Field(20, ge=1)
    M: int = Field(10, ge=0)
    eta: float = Field(1.0, gt=0)
    proposal_form: ProposalForm = "onehot"
    tau_start: float = Field(1.0, gt=0)
    tau_end: float = Field(1.0, gt=0)
    alpha_base: float = Field(1.0, gt=0)
    alpha_min: float = Field(1.0, gt=0)
    alpha_scales_penalty: bool = False
    beta_0: float = Field(1.0, ge=0)
    beta_max: float = Field(1.0, ge=0)
    grad_scale_init: float = Field(1.0, ge=0)
    grad_scale_final: float = Field(1.0, ge=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-3, gt=0)
    precondition: bool = True
    mh: bool = False
    init_mode: Literal["ancestral", "argmax"] = "argmax"
    prior_mode: PriorMode = "factorized"
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SamplerConfig":
        if self.alpha_min > self.alpha_base:
            raise ValueError(f"alpha_min ({self.alpha_min}) must not exceed alpha_base ({self.alpha_base})")
        if self.beta_0 > self.beta_max:
            raise ValueError(f"beta_0 ({self.beta_0}) must not exceed beta_max ({self.beta_max})")
        return self


@dataclass
class AdamState:
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    step: int = 0

    def _moments(self, g: np.ndarray, cfg: SamplerConfig) -> Tuple[np.ndarray, np.ndarray, int]:
        if self.m is None or self.m.shape != g.shape:
            if self.step:
                raise ShapeError(f"gradient shape {g.shape} differs from the accumulated {self.m.shape}")
            m, v = np.zeros_like(g), np.zeros_like(g)
        else:
            m, v = self.m, self.v
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g
        return m, v, self.step + 1

    @staticmethod
    def _direction(m: np.ndarray, v: np.ndarray, step: int, cfg: SamplerConfig) -> np.ndarray:
        m_hat = m / (1.0 - cfg.adam_beta1**step)
        v_hat = v / (1.0 - cfg.adam_beta2**step)
        return m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

    def peek(self, g: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
        """Direction the next update would return, without changing the state."""
        m, v, step = self._moments(np.asarray(g, dtype=np.float64), cfg)
        return self._direction(m, v, step, cfg)

    def update(self, g: np.ndarray, cfg: SamplerConfig) -> np.ndarray:
        self.m, self.v, self.step = self._moments(np.asarray(g, dtype=np.float64), cfg)
        return self._direction(self.m, self.v, self.step, cfg)


def adam_precondition(g: np.ndarray, state: AdamState, cfg: SamplerConfig) -> np.ndarray:
    return state.update(g, cfg)


def _penalty_scale(eta: float | np.ndarray, length: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(eta, dtype=np.float64), (length,))[:, None]


def proposal_logits_index(g: np.ndarray, z0: TokenSequence, eta: float | np.ndarray, K: int) -> np.ndarray:
    """r[l, k] = g[l] (k - z0[l]) / 2 - (k - z0[l])^2 / (4 eta)."""
    g = np.asarray(g, dtype=np.float64)
    d = np.arange(K)[None, :] - np.asarray(z0)[:, None]
    return 0.5 * g[:, None] * d - d * d / (4.0 * _penalty_scale(eta, d.shape[0]))


def proposal_logits_onehot(g: np.ndarray, z0: TokenSequence, eta: float | np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    rows = np.arange(g.shape[0])
    r = 0.5 * (g - g[rows, z0][:, None]) - 1.0 / (2.0 * _penalty_scale(eta, g.shape[0]))
    r[rows, z0] = 0.0
    return r


def proposal_logits_embedding(
    g_emb: np.ndarray, deltas: np.ndarray, codebook: Codebook, z0: TokenSequence, eta: float | np.ndarray
) -> np.ndarray:
    g_emb = np.asarray(g_emb, dtype=np.float64)
    if g_emb.shape[1] != codebook.dim:
        raise ShapeError(f"gradient has {g_emb.shape[1]} embedding coordinates, codebook has {codebook.dim}")
    diff = codebook.entries[None, :, :] - codebook.entries[np.asarray(z0)][:, None, :]
    r = 0.5 * np.einsum("ld,lkd->lk", g_emb, diff) + 0.5 * np.asarray(deltas, dtype=np.float64)
    r -= np.einsum("lkd,lkd->lk", diff, diff) / (4.0 * _penalty_scale(eta, g_emb.shape[0]))
    r[np.arange(r.shape[0]), z0] = 0.0
    return r


def proposal_probs(logits: np.ndarray, tau: float) -> np.ndarray:
    return softmax(np.asarray(logits) / tau, axis=1)


def sample_proposal(logits: np.ndarray, tau: float, rng: np.random.Generator) -> TokenSequence:
    if not tau > 0:
        raise ValueError(f"proposal temperature must be positive, got {tau}")
    return sample_categorical(proposal_probs(logits, tau), rng)


def proposal_log_prob(logits: np.ndarray, tau: float, z: TokenSequence) -> float:
    lp = log_softmax(np.asarray(logits) / tau, axis=1)
    return float(lp[np.arange(lp.shape[0]), z].sum())


def mh_accept(
    z_cur: TokenSequence,
    z_prop: TokenSequence,
    U_cur: float,
    U_prop: float,
    fwd_logits: np.ndarray,
    rev_logits: np.ndarray,
    tau: float,
    rng: np.random.Generator,
) -> Tuple[bool, TokenSequence]:
    if np.array_equal(z_cur, z_prop):
        return True, z_cur
    if U_prop == -np.inf:
        return False, z_cur
    if U_cur == -np.inf:
        return True, z_prop
    log_ratio = (U_prop - U_cur) + proposal_log_prob(rev_logits, tau, z_cur) - proposal_log_prob(fwd_logits, tau, z_prop)
    if log_ratio >= 0.0 or rng.random() < math.exp(log_ratio):
        return True, z_prop
    return False, z_cur


@dataclass(frozen=True)
class StepSchedule:
    beta: float
    tau: float
    scale: float
    alpha: np.ndarray


def _linear(start: float, end: float, r: int, n: int) -> float:
    if n <= 1 or r >= n - 1:
        return end
    return start + (end - start) * r / (n - 1)


def inner_temperature(cfg: SamplerConfig, m: int) -> float:
    """Geometric interpolation from tau_start to tau_end over the M inner steps."""
    if cfg.M <= 1 or m <= 0:
        return cfg.tau_start
    if m >= cfg.M - 1:
        return cfg.tau_end
    return cfg.tau_start * (cfg.tau_end / cfg.tau_start) ** (m / (cfg.M - 1))


def schedules(cfg: SamplerConfig, r: int, m: int, entropy: np.ndarray, K: int) -> StepSchedule:
    """Likelihood weight, proposal temperature, gradient scale and entropy-weighted alpha."""
    if not 0 <= r < cfg.T:
        raise ValueError(f"outer index {r} outside [0, {cfg.T})")
    log_k = math.log(K)
    h = np.asarray(entropy, dtype=np.float64)
    h = np.where(np.isclose(h, log_k, rtol=0.0, atol=ENTROPY_ATOL), log_k, h)
    alpha = cfg.alpha_min + (cfg.alpha_base - cfg.alpha_min) * (1.0 - h / log_k)
    return StepSchedule(
        beta=_linear(cfg.beta_0, cfg.beta_max, r, cfg.T),
        tau=inner_temperature(cfg, m),
        scale=_linear(cfg.grad_scale_init, cfg.grad_scale_final, r, cfg.T),
        alpha=alpha,
    )


def index_prior_gradient(log_probs: np.ndarray, z0: TokenSequence) -> np.ndarray:
    """Central difference of each log-probability row at z0 (one-sided at the ends)."""
    K = log_probs.shape[1]
    lp = np.maximum(log_probs, LOG_FLOOR)
    hi = np.minimum(z0 + 1, K - 1)
    lo = np.maximum(z0 - 1, 0)
    rows = np.arange(z0.size)
    return (lp[rows, hi] - lp[rows, lo]) / (hi - lo)


@dataclass
class InnerTrace:
    energies: List[float] = field(default_factory=list)
    accepted: List[bool] = field(default_factory=list)
    states: List[TokenSequence] = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted else 1.0


@dataclass
class OuterRecord:
    t: float
    zt: TokenSequence
    z0_init: TokenSequence
    z0: TokenSequence
    inner: InnerTrace


@dataclass
class SampleTrace:
    records: List[OuterRecord] = field(default_factory=list)

    @property
    def final(self) -> TokenSequence:
        return self.records[-1].z0

    @property
    def acceptance_rate(self) -> float:
        flags = [a for rec in self.records for a in rec.inner.accepted]
        return float(np.mean(flags)) if flags else 1.0


class ProposalBuilder:
    """Assembles proposal logits at a state for one outer step's potential."""

    def __init__(self, potential: Potential, cfg: SamplerConfig, sched: StepSchedule, codebook: Optional[Codebook] = None) -> None:
        self.potential = potential
        self.cfg = cfg
        self.sched = sched
        self.vocab: VocabSpec = potential.vocab
        if cfg.proposal_form == "embedding":
            codebook = codebook if codebook is not None else Codebook.from_vocab(self.vocab)
            if codebook.K != self.vocab.K:
                raise ShapeError(f"codebook has {codebook.K} entries, vocabulary has {self.vocab.K}")
        self.codebook = codebook
        self.log_probs = np.maximum(potential.log_probs, LOG_FLOOR)
        self.eta = cfg.eta / sched.alpha if cfg.alpha_scales_penalty else np.full(potential.length, cfg.eta)

    def likelihood_gradient(self, z0: TokenSequence) -> np.ndarray:
        """Raw likelihood gradient in the coordinates of the configured proposal form."""
        gx = self.potential.likelihood_grad_x(decode(z0, self.vocab))
        if self.cfg.proposal_form == "index":
            return (gx * self.vocab.intensity_step(z0))[:, None]
        if self.cfg.proposal_form == "onehot":
            return gx[:, None] * self.vocab.intensity[None, :]
        return gx[:, None] * self.codebook.readout[None, :]

    def logits(self, z0: TokenSequence, direction: np.ndarray) -> np.ndarray:
        damp = self.sched.scale * self.sched.alpha[:, None]
        guided = damp * direction
        form = self.cfg.proposal_form
        if form == "index":
            g = guided[:, 0] + index_prior_gradient(self.log_probs, z0)
            return proposal_logits_index(g, z0, self.eta, self.vocab.K)
        if form == "onehot":
            return proposal_logits_onehot(guided + self.log_probs, z0, self.eta)
        rows = np.arange(z0.size)
        deltas = self.log_probs - self.log_probs[rows, z0][:, None]
        return proposal_logits_embedding(guided, deltas, self.codebook, z0, self.eta)


def inner_refine(
    z0_init: TokenSequence,
    potential: Potential,
    cfg: SamplerConfig,
    sched: StepSchedule,
    *,
    outer_index: int = 0,
    chain: int = 0,
    codebook: Optional[Codebook] = None,
    keep_states: bool = False,
) -> Tuple[TokenSequence, InnerTrace]:
    z = check_tokens(z0_init, potential.vocab).copy()
    trace = InnerTrace()
    if cfg.M == 0:
        return z, trace
    builder = ProposalBuilder(potential, cfg, sched, codebook)
    adam = AdamState()
    U_cur = potential.value(z) if cfg.mh else None
    for m in range(cfg.M):
        tau = inner_temperature(cfg, m)
        g_cur = builder.likelihood_gradient(z)
        direction = adam.peek(g_cur, cfg) if cfg.precondition else g_cur
        fwd = builder.logits(z, direction)
        z_prop = sample_proposal(fwd, tau, substream(cfg.seed, chain, outer_index, m, PROPOSAL))
        if cfg.mh:
            U_prop = potential.value(z_prop)
            g_prop = builder.likelihood_gradient(z_prop)
            rev = builder.logits(z_prop, adam.peek(g_prop, cfg) if cfg.precondition else g_prop)
            ok, z_next = mh_accept(z, z_prop, U_cur, U_prop, fwd, rev, tau, substream(cfg.seed, chain, outer_index, m, ACCEPT))
            trace.accepted.append(ok)
            if ok:
                U_cur = U_prop
        else:
            z_next = z_prop
        if cfg.precondition:
            adam.update(g_cur, cfg)
        z = z_next
        trace.energies.append(U_cur if cfg.mh else potential.value(z))
        if keep_states:
            trace.states.append(z.copy())
    return z, trace


def run(
    y: Measurement,
    prior: Denoiser,
    process: CorruptionProcess,
    cfg: SamplerConfig,
    *,
    data_fit: Optional[DataFit] = None,
    surrogate: Optional[BilinearSurrogate] = None,
    codebook: Optional[Codebook] = None,
    chain: int = 0,
) -> Tuple[TokenSequence, SampleTrace]:
    vocab = prior.vocab
    if process.vocab.K != vocab.K:
        raise ShapeError(f"process vocabulary K={process.vocab.K} differs from prior K={vocab.K}")
    length = y.operator.grid.size
    fit = data_fit if data_fit is not None else DataFit.gaussian(max(y.sigma, 1e-2))
    mode = "surrogate" if surrogate is not None else "explicit"

    zt = process.terminal_sample(length, substream(cfg.seed, chain, INIT))
    trace = SampleTrace()
    for i in range(cfg.T):
        t = (cfg.T - i) / cfg.T
        s = (cfg.T - i - 1) / cfg.T
        out: DenoiserOutput = prior.denoise(zt, t)
        z0_init = sample_clean(out, substream(cfg.seed, chain, i, DENOISE), cfg.init_mode)
        sched = schedules(cfg, i, 0, out.entropy(), vocab.K)
        pcfg = PotentialConfig(data_fit=fit, beta=sched.beta, prior_mode=cfg.prior_mode, likelihood_mode=mode)
        exact = partial(prior.joint_log_prob, zt=zt, t=t, mode="exact") if cfg.prior_mode == "exact" else None
        potential = Potential(y, out, vocab, pcfg, exact_log_prior=exact, surrogate=surrogate)
        z0, inner = inner_refine(z0_init, potential, cfg, sched, outer_index=i, chain=chain, codebook=codebook)
        trace.records.append(OuterRecord(t=t, zt=zt, z0_init=z0_init, z0=z0, inner=inner))
        logger.debug(
            "Outer step finished",
            chain=chain,
            step=i,
            t=t,
            beta=sched.beta,
            energy=inner.energies[-1] if inner.energies else None,
            acceptance=inner.acceptance_rate,
        )
        zt = process.renoise(z0, s, substream(cfg.seed, chain, i, RENOISE))
    return trace.final, trace
