"""Forward measurement operators, their relaxed extensions and residual gradients.

Images are flattened channel-major then row-major, so a vector of length
L = C*H*W reshapes to (C, H, W). Every operator exposes apply (hard inputs),
apply_relaxed (differentiable extension) and vjp (pullback of an output-space
vector through apply_relaxed); for linear operators vjp is the exact adjoint.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Dict, Optional, Tuple

import numpy as np
from scipy import signal

from errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class ImageGrid:
    height: int
    width: int
    channels: int = 1

    def __post_init__(self) -> None:
        if min(self.height, self.width, self.channels) < 1:
            raise ShapeError(f"grid dimensions must be positive, got {self}")

    @property
    def size(self) -> int:
        return self.height * self.width * self.channels

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    def to_image(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.size,):
            raise ShapeError(f"expected a vector of length {self.size}, got shape {x.shape}")
        return x.reshape(self.shape)


class ForwardOperator(ABC):
    kind: ClassVar[str]
    linear: ClassVar[bool] = True

    def __init__(self, grid: ImageGrid) -> None:
        self.grid = grid

    @property
    @abstractmethod
    def output_dim(self) -> int: ...

    @abstractmethod
    def apply(self, x: np.ndarray) -> np.ndarray: ...

    def apply_relaxed(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    @abstractmethod
    def vjp(self, x: Optional[np.ndarray], u: np.ndarray) -> np.ndarray:
        """Pull u (length m) back to input space at x; x is ignored by linear operators."""

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        if not self.linear:
            raise TypeError(f"{self.kind} is nonlinear and has no adjoint")
        return self.vjp(None, u)

    def _check_output(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.output_dim,):
            raise ShapeError(f"{self.kind}: expected output vector of length {self.output_dim}, got {u.shape}")
        return u


class Identity(ForwardOperator):
    kind = "identity"

    @property
    def output_dim(self) -> int:
        return self.grid.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.grid.to_image(x).ravel()

    def vjp(self, x: Optional[np.ndarray], u: np.ndarray) -> np.ndarray:
        return self._check_output(u).copy()


class Inpaint(ForwardOperator):
    """Keeps the observed spatial locations; the mask is shared across channels."""

    kind = "inpaint"

    def __init__(self, grid: ImageGrid, observed: np.ndarray) -> None:
        super().__init__(grid)
        observed = np.asarray(observed, dtype=bool)
        if observed.shape != (grid.height, grid.width):
            raise ShapeError(f"mask must be {grid.height}x{grid.width}, got {observed.shape}")
        self.observed = observed

    @property
    def output_dim(self) -> int:
        return self.grid.channels * int(self.observed.sum())

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.grid.to_image(x)[:, self.observed].ravel()

    def vjp(self, x: Optional[np.ndarray], u: np.ndarray) -> np.ndarray:
        u = self._check_output(u)
        out = np.zeros(self.grid.shape)
        out[:, self.observed] = u.reshape(self.grid.channels, -1)
        return out.ravel()

    def visualize(self, y: np.ndarray, fill: float = 0.5) -> np.ndarray:
        """Measurement laid back on the grid with hidden locations in neutral grey."""
        img = np.full(self.grid.shape, fill)
        img[:, self.observed] = self._check_output(y).reshape(self.grid.channels, -1)
        return img


class BoxInpaint(Inpaint):
    kind = "box"

    def __init__(self, grid: ImageGrid, rect: Tuple[int, int, int, int]) -> None:
        x0, y0, w, h = rect
        if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > grid.width or y0 + h > grid.height:
            raise ShapeError(f"box {rect} does not fit a {grid.height}x{grid.width} grid")
        observed = np.ones((grid.height, grid.width), dtype=bool)
        observed[y0: y0 + h, x0: x0 + w] = False
        super().__init__(grid, observed)
        self.rect = (x0, y0, w, h)


class _PairOperator(ForwardOperator):
    linear = False

    def __init__(self, grid: ImageGrid, pairs: np.ndarray) -> None:
        super().__init__(grid)
        pairs = np.asarray(pairs, dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 1:
            raise ShapeError(f"pairs must be a nu x 2 index matrix, got shape {pairs.shape}")
        if pairs.min() < 0 or pairs.max() >= grid.size:
            raise ShapeError(f"pair indices must lie in [0, {grid.size})")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ConfigurationError("each pair must join two distinct positions")
        self.pairs = pairs

    @property
    def output_dim(self) -> int:
        return self.pairs.shape[0]

    def _operands(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = self.grid.to_image(x).ravel()
        return x[self.pairs[:, 0]], x[self.pairs[:, 1]]

    def _scatter(self, dp: np.ndarray, dq: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.size)
        np.add.at(out, self.pairs[:, 0], dp)
        np.add.at(out, self.pairs[:, 1], dq)
        return out


class XorPairs(_PairOperator):
    kind = "xor_pairs"

    def apply(self, x: np.ndarray) -> np.ndarray:
        p, q = self._operands(x)
        return np.logical_xor(p > 0.5, q > 0.5).astype(np.float64)

    def apply_relaxed(self, x: np.ndarray) -> np.ndarray:
        p, q = self._operands(x)
        return p + q - 2.0 * p * q

    def vjp(self, x: Optional[np.ndarray], u: np.ndarray) -> np.ndarray:
        u = self._check_output(u)
        p, q = self._operands(x)
        return self._scatter(u * (1.0 - 2.0 * q), u * (1.0 - 2.0 * p))


class AndPairs(_PairOperator):
    kind = "and_pairs"

    def apply(self, x: np.ndarray) -> np.ndarray:
        p, q = self._operands(x)
        return np.logical_and(p > 0.5, q > 0.5).astype(np.float64)

    def apply_relaxed(self, x: np.ndarray) -> np.ndarray:
        p, q = self._operands(x)
        return p * q

    def vjp(self, x: Optional[np.ndarray], u: np.ndarray) -> np.ndarray:
        u = self._check_output(u)
        p, q = self._operands(x)
        return self._scatter(u * q, u * p)


def _fold_symmetric(g: np.ndarray, n: int, before: int, after: int, axis: int) -> np.ndarray:
    """Adjoint of np.pad(mode="symmetric") along one axis."""
    idx = np.pad(np.arange(n), (before, after), mode="symmetric")
    shape = list(g.shape)
    shape[axis] = n
    out = np.zeros(shape)
    index = [slice(None)] * g.ndim
    index[axis] = idx
    np.add.at(out, tuple(index), g)
    return out


class _Convolution(ForwardOperator):
    """Per-channel 2-D convolution with half-sample symmetric (reflect) boundaries."""

    def __init__(self, grid: ImageGrid, kernel: np.ndarray) -> None:
        super().__init__(grid)
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2 or min(kernel.shape) < 1:
            raise ShapeError(f"blur kernel must be a 2-D matrix, got shape {kernel.shape}")
        total = kernel.sum()
        if not np.isfinite(total) or total <= 0:
            raise ConfigurationError("blur kernel must have a positive finite sum")
        self.kernel = kernel / total
        kh, kw = self.kernel.shape
        self._pad = ((kh - 1) // 2, kh - 1 - (kh - 1) // 2), ((kw - 1) // 2, kw - 1 - (kw - 1) // 2)

    @property
    def output_dim(self) -> int:
        return self.grid.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        img = self.grid.to_image(x)
        padded = np.pad(img, ((0, 0), *self._pad), mode="symmetric")
        return signal.convolve(padded, self.kernel[None], mode="valid", method="direct").ravel()

    def vjp(self, x: Optional[np.ndarray], u: np.ndarray) -> np.ndarray:
        u = self._check_output(u).reshape(self.grid.shape)
        g = signal.correlate(u, self.kernel[None], mode="full", method="direct")
        (top, bottom), (left, right) = self._pad
        g = _fold_symmetric(g, self.grid.height, top, bottom, axis=1)
        g = _fold_symmetric(g, self.grid.width, left, right, axis=2)
        return g.ravel()


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Separable continuous Gaussian sampled on a size x size window, normalized."""
    if size < 1 or sigma <= 0:
        raise ConfigurationError(f"gaussian kernel needs size >= 1 and sigma > 0, got {size}, {sigma}")
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


class GaussianBlur(_Convolution):
    kind = "gaussian_blur"

    def __init__(self, grid: ImageGrid, size: int = 61, sigma: float = 3.0) -> None:
        super().__init__(grid, gaussian_kernel(size, sigma))
        self.size, self.sigma = size, sigma


class MotionBlur(_Convolution):
    kind = "motion_blur"

    @classmethod
    def from_file(cls, grid: ImageGrid, path: str | Path) -> "MotionBlur":
        return cls(grid, load_kernel(path))


class Downsample(ForwardOperator):
    """Antialiased area average over factor x factor blocks."""

    kind = "downsample"

    def __init__(self, grid: ImageGrid, factor: int = 4) -> None:
        super().__init__(grid)
        if factor < 1 or grid.height % factor or grid.width % factor:
            raise ShapeError(f"factor {factor} must divide the {grid.height}x{grid.width} grid")
        self.factor = factor

    @property
    def output_shape(self) -> Tuple[int, int, int]:
        return (self.grid.channels, self.grid.height // self.factor, self.grid.width // self.factor)

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.output_shape))

    def apply(self, x: np.ndarray) -> np.ndarray:
        c, h, w = self.output_shape
        f = self.factor
        return self.grid.to_image(x).reshape(c, h, f, w, f).mean(axis=(2, 4)).ravel()

    def vjp(self, x: Optional[np.ndarray], u: np.ndarray) -> np.ndarray:
        f = self.factor
        u = self._check_output(u).reshape(self.output_shape)
        return (np.repeat(np.repeat(u, f, axis=1), f, axis=2) / (f * f)).ravel()


class Hdr(ForwardOperator):
    """Pointwise tone map clip(2x - 0.5, 0, 1); saturated pixels get zero subgradient."""

    kind = "hdr"
    linear = False

    @property
    def output_dim(self) -> int:
        return self.grid.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.clip(2.0 * self.grid.to_image(x).ravel() - 0.5, 0.0, 1.0)

    def vjp(self, x: Optional[np.ndarray], u: np.ndarray) -> np.ndarray:
        u = self._check_output(u)
        pre = 2.0 * self.grid.to_image(x).ravel() - 0.5
        return np.where((pre > 0.0) & (pre < 1.0), 2.0 * u, 0.0)


@dataclass(frozen=True)
class DataFit:
    """D(x) = l1 * ||r||_1 + l2 * ||r||_2^2 on the residual r = A(x) - y."""

    l1: float = 0.0
    l2: float = 0.5

    def __post_init__(self) -> None:
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigurationError(f"data-fit weights must be nonnegative, got l1={self.l1}, l2={self.l2}")

    @classmethod
    def gaussian(cls, sigma: float) -> "DataFit":
        if sigma <= 0:
            raise ConfigurationError(f"a Gaussian data-fit needs sigma > 0, got {sigma}")
        return cls(l1=0.0, l2=1.0 / (2.0 * sigma**2))


@dataclass(frozen=True, eq=False)
class Measurement:
    values: np.ndarray
    sigma: float
    operator: ForwardOperator

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.operator.output_dim,):
            raise ShapeError(f"measurement has shape {values.shape}, operator emits {self.operator.output_dim}")
        if self.sigma < 0:
            raise ValueError(f"noise level must be nonnegative, got {self.sigma}")
        object.__setattr__(self, "values", values)


def data_fit_value(op: ForwardOperator, x: np.ndarray, y: Measurement, fit: DataFit) -> float:
    r = op.apply_relaxed(x) - y.values
    return float(fit.l1 * np.abs(r).sum() + fit.l2 * np.dot(r, r))


def residual_gradient(op: ForwardOperator, x: np.ndarray, y: Measurement, fit: DataFit) -> np.ndarray:
    """Gradient of -D(x) with respect to x; sign(0) is taken as 0."""
    r = op.apply_relaxed(x) - y.values
    return op.vjp(x, -(fit.l1 * np.sign(r) + 2.0 * fit.l2 * r))


def simulate_measurement(op: ForwardOperator, x_clean: np.ndarray, sigma: float, rng: np.random.Generator) -> Measurement:
    clean = op.apply(x_clean)
    noise = rng.standard_normal(clean.size) if sigma > 0 else np.zeros(clean.size)
    return Measurement(values=clean + sigma * noise, sigma=sigma, operator=op)


@dataclass(frozen=True)
class DifficultyTier:
    mask_fraction: float
    sigma: float
    box_side: int


# box sides refer to a 32x32 grid and are rescaled to the actual height
TIERS: Dict[str, DifficultyTier] = {
    "easy": DifficultyTier(mask_fraction=0.5, sigma=0.0, box_side=8),
    "medium": DifficultyTier(mask_fraction=0.7, sigma=0.05, box_side=12),
    "hard": DifficultyTier(mask_fraction=0.85, sigma=0.1, box_side=16),
}


def random_inpaint_mask(grid: ImageGrid, hidden_fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= hidden_fraction < 1.0:
        raise ConfigurationError(f"hidden fraction must lie in [0, 1), got {hidden_fraction}")
    n = grid.height * grid.width
    hidden = rng.permutation(n)[: int(round(hidden_fraction * n))]
    observed = np.ones(n, dtype=bool)
    observed[hidden] = False
    return observed.reshape(grid.height, grid.width)


def centered_box(grid: ImageGrid, side: int) -> Tuple[int, int, int, int]:
    side = max(1, min(int(round(side * grid.height / 32)), grid.height, grid.width))
    return ((grid.width - side) // 2, (grid.height - side) // 2, side, side)


def random_pairs(grid: ImageGrid, n_pairs: int, rng: np.random.Generator) -> np.ndarray:
    if n_pairs < 1:
        raise ConfigurationError(f"need at least one pair, got {n_pairs}")
    return np.stack([rng.choice(grid.size, size=2, replace=False) for _ in range(n_pairs)]).astype(np.int64)


def load_kernel(path: str | Path) -> np.ndarray:
    """Kernel text file: first line "h w", then h*w whitespace-separated reals."""
    path = Path(path)
    lines = path.read_text().split("\n", 1)
    try:
        h, w = (int(v) for v in lines[0].split())
        values = np.array(lines[1].split() if len(lines) > 1 else [], dtype=np.float64)
    except ValueError as e:
        raise ConfigurationError(f"{path}: malformed kernel file ({e})") from e
    if values.size != h * w:
        raise ConfigurationError(f"{path}: header says {h}x{w} but file holds {values.size} values")
    kernel = values.reshape(h, w)
    total = kernel.sum()
    if total <= 0:
        raise ConfigurationError(f"{path}: kernel must have a positive sum")
    return kernel / total


def load_mask(path: str | Path, grid: ImageGrid) -> np.ndarray:
    """0/1 text grid (1 = observed) matching the image height and width."""
    path = Path(path)
    try:
        rows = [[int(v) for v in line.split()] for line in path.read_text().splitlines() if line.strip()]
        mask = np.array(rows, dtype=np.int64)
    except ValueError as e:
        raise ConfigurationError(f"{path}: malformed mask file ({e})") from e
    if mask.shape != (grid.height, grid.width):
        raise ShapeError(f"{path}: mask is {mask.shape}, grid is {grid.height}x{grid.width}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ConfigurationError(f"{path}: mask entries must be 0 or 1")
    return mask.astype(bool)
