"""Forward corruption kernels, noise schedules and the Bayes posterior kernel.

Masked and uniform processes use closed forms built from alpha(t); the
generic process takes explicit per-step transition matrices on the uniform
grid t_r = r / n_steps. All kernels are returned as (L, K') row-stochastic
matrices, K' being the model vocabulary size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from errors import ConfigurationError, ShapeError, SingularityError
from streams import sample_categorical
from tokenspace import TokenSequence, VocabSpec, check_tokens

ScheduleKind = Literal["linear", "cosine", "loglinear"]
ProcessKind = Literal["masked", "uniform", "generic"]

STOCHASTIC_TOL = 1e-12
GRID_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    kind: ScheduleKind = "linear"
    floor: float = 1e-3

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "cosine", "loglinear"):
            raise ConfigurationError(f"unknown schedule kind: {self.kind}")
        if not 0.0 <= self.floor < 0.5:
            raise ConfigurationError(f"schedule floor must lie in [0, 0.5), got {self.floor}")
        if self.kind == "loglinear" and self.floor == 0.0:
            raise ConfigurationError("a loglinear schedule needs a positive floor")

    def alpha(self, t: float) -> float:
        t = _check_time(t)
        if t == 0.0:
            return 1.0
        if self.kind == "linear":
            raw = 1.0 - t
        elif self.kind == "cosine":
            raw = math.cos(0.5 * math.pi * t) ** 2
        else:
            raw = math.exp(t * math.log(self.floor))
        return min(max(raw, self.floor), 1.0 - self.floor)


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {t}")
    return t


def masked_matrix(alpha: float, K: int) -> np.ndarray:
    """(K+1) x (K+1) kernel keeping a token w.p. alpha, masking it otherwise."""
    q = np.zeros((K + 1, K + 1))
    q[np.arange(K), np.arange(K)] = alpha
    q[:K, K] = 1.0 - alpha
    q[K, K] = 1.0
    return q


def uniform_matrix(alpha: float, K: int) -> np.ndarray:
    return alpha * np.eye(K) + (1.0 - alpha) / K


@dataclass(frozen=True, eq=False)
class CorruptionProcess:
    kind: ProcessKind
    vocab: VocabSpec
    schedule: NoiseSchedule = NoiseSchedule()
    transition_matrices: Optional[Sequence[np.ndarray]] = None

    def __post_init__(self) -> None:
        if self.kind == "masked" and not self.vocab.masked:
            raise ConfigurationError("a masked process needs a vocabulary with a mask token")
        if self.kind == "uniform" and self.vocab.masked:
            raise ConfigurationError("a uniform process forbids the mask token")
        if self.kind == "generic":
            if not self.transition_matrices:
                raise ConfigurationError("a generic process needs per-step transition matrices")
            size = self.vocab.model_size
            mats = []
            for i, q in enumerate(self.transition_matrices):
                q = np.asarray(q, dtype=np.float64)
                if q.shape != (size, size):
                    raise ShapeError(f"transition matrix {i} must be {size}x{size}, got {q.shape}")
                if np.any(q < 0) or np.any(np.abs(q.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
                    raise ConfigurationError(f"transition matrix {i} is not row-stochastic")
                mats.append(q)
            object.__setattr__(self, "transition_matrices", tuple(mats))
        elif self.kind not in ("masked", "uniform"):
            raise ConfigurationError(f"unknown process kind: {self.kind}")

    @property
    def size(self) -> int:
        return self.vocab.model_size

    @property
    def n_steps(self) -> int:
        return len(self.transition_matrices) if self.transition_matrices else 0

    def alpha(self, t: float) -> float:
        return self.schedule.alpha(t)

    def closed_form(self, alpha: float) -> np.ndarray:
        if self.kind == "masked":
            return masked_matrix(alpha, self.vocab.K)
        return uniform_matrix(alpha, self.vocab.K)

    def _grid_index(self, t: float) -> int:
        r = t * self.n_steps
        idx = int(round(r))
        if abs(r - idx) > GRID_TOL:
            raise ValueError(f"time {t} is not on the {self.n_steps}-step transition grid")
        return idx

    def cumulative_matrix(self, t: float) -> np.ndarray:
        """Q-bar_t: the marginal transition matrix from clean tokens to time t."""
        t = _check_time(t)
        if self.kind != "generic":
            return self.closed_form(self.alpha(t))
        out = np.eye(self.size)
        for q in self.transition_matrices[: self._grid_index(t)]:
            out = out @ q
        return out

    def conditional_matrix(self, s: float, t: float) -> np.ndarray:
        """Q_{t|s}: transition matrix from time s to a later time t."""
        s, t = _check_time(s), _check_time(t)
        if s > t:
            raise ValueError(f"conditional kernel needs s <= t, got s={s}, t={t}")
        if self.kind == "generic":
            out = np.eye(self.size)
            for q in self.transition_matrices[self._grid_index(s): self._grid_index(t)]:
                out = out @ q
            return out
        a_s = self.alpha(s)
        if a_s == 0.0:
            raise SingularityError(f"alpha({s}) = 0 makes alpha_t / alpha_s undefined")
        return self.closed_form(self.alpha(t) / a_s)

    def step_matrices(self, n_steps: int) -> list[np.ndarray]:
        """Per-step matrices on the grid r / n_steps whose product reproduces Q-bar."""
        if self.kind == "generic":
            return list(self.transition_matrices)
        grid = np.linspace(0.0, 1.0, n_steps + 1)
        return [self.conditional_matrix(a, b) for a, b in zip(grid[:-1], grid[1:])]

    def marginal_rows(self, z0: TokenSequence, alpha: float) -> np.ndarray:
        """q(z_t | z0) rows for an explicit retention probability."""
        z0 = check_tokens(z0, self.vocab)
        return self.closed_form(alpha)[z0]

    def marginal_kernel(self, z0: TokenSequence, t: float) -> np.ndarray:
        z0 = check_tokens(z0, self.vocab)
        return self.cumulative_matrix(t)[z0]

    def sample_forward(self, z0: TokenSequence, t: float, rng: np.random.Generator) -> TokenSequence:
        return sample_categorical(self.marginal_kernel(z0, t), rng)

    def posterior_kernel(self, zt: TokenSequence, z0: TokenSequence, s: float, t: float) -> np.ndarray:
        """q(z_s | z_t, z0) per position, proportional to q(z_t | z_s) q(z_s | z0)."""
        if not s < t:
            raise ValueError(f"posterior kernel needs s < t, got s={s}, t={t}")
        zt = check_tokens(zt, self.vocab, allow_mask=True)
        z0 = check_tokens(z0, self.vocab)
        if zt.shape != z0.shape:
            raise ShapeError(f"z_t and z0 lengths differ: {zt.size} vs {z0.size}")
        prior_rows = self.cumulative_matrix(s)[z0]
        like_rows = self.conditional_matrix(s, t)[:, zt].T
        joint = prior_rows * like_rows
        norm = joint.sum(axis=1, keepdims=True)
        bad = np.flatnonzero(norm[:, 0] <= 0.0)
        if bad.size:
            raise ValueError(f"z_t[{bad[0]}]={zt[bad[0]]} is unreachable from z0[{bad[0]}]={z0[bad[0]]}")
        return joint / norm

    def renoise(self, z0: TokenSequence, s: float, rng: np.random.Generator) -> TokenSequence:
        z0 = check_tokens(z0, self.vocab)
        if _check_time(s) == 0.0:
            return z0.copy()
        return self.sample_forward(z0, s, rng)

    def terminal_sample(self, length: int, rng: np.random.Generator) -> TokenSequence:
        """Draw z_T: all-mask for masked processes, i.i.d. uniform otherwise."""
        if self.kind == "masked":
            return np.full(length, self.vocab.mask_index, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(0, self.vocab.K, size=length, dtype=np.int64)
        rows = np.tile(self.cumulative_matrix(1.0).mean(axis=0), (length, 1))
        return sample_categorical(rows, rng)
