"""Token sequences, one-hot relaxations, codebooks and the intensity decoder.

Sequences are plain int64 numpy vectors of length L; one-hot sequences are
(L, K) float matrices. Clean tokens live in [0, K); under a masked process the
absorbing mask token is appended at index K.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import numpy.typing as npt

from errors import DecodeError, NormalizationError, ShapeError, TokenRangeError

TokenSequence = npt.NDArray[np.int64]
OneHotSequence = npt.NDArray[np.float64]

ROW_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class VocabSpec:
    K: int
    mask_index: Optional[int] = None
    intensity: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError(f"vocabulary needs K >= 2, got {self.K}")
        if self.mask_index is not None and self.mask_index != self.K:
            raise ValueError(f"mask token must sit at index K={self.K}, got {self.mask_index}")
        if self.intensity is None:
            object.__setattr__(self, "intensity", np.arange(self.K, dtype=np.float64) / (self.K - 1))
        inten = np.asarray(self.intensity, dtype=np.float64)
        if inten.shape != (self.K,):
            raise ShapeError(f"intensity map must have {self.K} entries, got shape {inten.shape}")
        if np.any(np.diff(inten) <= 0):
            raise ValueError("intensity map must be strictly increasing")
        if inten.min() < 0.0 or inten.max() > 1.0:
            raise ValueError("intensity map must lie in [0, 1]")
        inten.setflags(write=False)
        object.__setattr__(self, "intensity", inten)

    @classmethod
    def ordinal(cls, K: int, *, masked: bool = False) -> "VocabSpec":
        return cls(K=K, mask_index=K if masked else None)

    @property
    def masked(self) -> bool:
        return self.mask_index is not None

    @property
    def model_size(self) -> int:
        """Vocabulary size seen by the model: K, plus one for the mask token."""
        return self.K + 1 if self.masked else self.K

    def intensity_step(self, z: TokenSequence) -> np.ndarray:
        """Local intensity increment at each token (forward difference, backward at the top)."""
        z = np.asarray(z, dtype=np.int64)
        upper = np.minimum(z + 1, self.K - 1)
        lower = np.where(z + 1 > self.K - 1, z - 1, z)
        return self.intensity[upper] - self.intensity[lower]


@dataclass(frozen=True, eq=False)
class Codebook:
    """K embedding vectors plus a linear readout mapping an embedding to an intensity."""

    entries: np.ndarray
    readout: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] < 1:
            raise ShapeError(f"codebook must be a K x d matrix, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("codebook entries must be finite")
        r = np.ones(1) if self.readout is None and e.shape[1] == 1 else self.readout
        if r is None:
            raise ValueError("a readout vector is required for codebooks with d > 1")
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (e.shape[1],):
            raise ShapeError(f"readout must have {e.shape[1]} entries, got shape {r.shape}")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "readout", r)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def from_vocab(cls, vocab: VocabSpec) -> "Codebook":
        """Scalar codebook whose single coordinate is the token intensity."""
        return cls(entries=vocab.intensity[:, None].copy())

    @classmethod
    def one_hot(cls, vocab: VocabSpec) -> "Codebook":
        """Standard basis embedding; the readout reproduces decode_relaxed."""
        return cls(entries=np.eye(vocab.K), readout=vocab.intensity.copy())

    def embed(self, z: TokenSequence) -> np.ndarray:
        return self.entries[np.asarray(z, dtype=np.int64)]

    def decode_embeddings(self, emb: np.ndarray) -> np.ndarray:
        return np.asarray(emb, dtype=np.float64) @ self.readout


def check_tokens(z: npt.ArrayLike, vocab: VocabSpec, *, allow_mask: bool = False) -> TokenSequence:
    arr = np.asarray(z)
    if arr.ndim != 1 or arr.size < 1:
        raise ShapeError(f"token sequence must be a non-empty vector, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise TokenRangeError("token sequence holds non-integer values")
    arr = arr.astype(np.int64)
    hi = vocab.model_size if allow_mask else vocab.K
    if arr.min() < 0 or arr.max() >= hi:
        raise TokenRangeError(f"tokens must lie in [0, {hi}), got range [{arr.min()}, {arr.max()}]")
    return arr


def check_simplex(w: npt.ArrayLike) -> OneHotSequence:
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"one-hot sequence must be L x K, got shape {arr.shape}")
    if np.any(arr < 0):
        raise NormalizationError("one-hot weights must be nonnegative")
    sums = arr.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
    if bad.size:
        raise NormalizationError(f"row {bad[0]} sums to {sums[bad[0]]!r}, expected 1")
    return arr


def to_one_hot(z: npt.ArrayLike, vocab: VocabSpec) -> OneHotSequence:
    z = check_tokens(z, vocab)
    w = np.zeros((z.size, vocab.K), dtype=np.float64)
    w[np.arange(z.size), z] = 1.0
    return w


def from_one_hot(w: npt.ArrayLike) -> TokenSequence:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return np.argmax(check_simplex(w), axis=1).astype(np.int64)


def decode(z: npt.ArrayLike, vocab: VocabSpec) -> np.ndarray:
    arr = check_tokens(z, vocab, allow_mask=vocab.masked)
    if vocab.masked and np.any(arr == vocab.mask_index):
        raise DecodeError("cannot decode a sequence that still contains mask tokens")
    return vocab.intensity[arr]


def decode_relaxed(w: npt.ArrayLike, vocab: VocabSpec) -> np.ndarray:
    arr = check_simplex(w)
    if arr.shape[1] != vocab.K:
        raise ShapeError(f"expected {vocab.K} columns, got {arr.shape[1]}")
    return arr @ vocab.intensity
