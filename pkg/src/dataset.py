"""Deterministic synthetic image datasets, netpbm image IO and the sha256 manifest."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal

import numpy as np
import structlog
from PIL import Image

from errors import ConfigurationError, ShapeError
from operators import ImageGrid
from tokenspace import TokenSequence, VocabSpec, check_tokens

logger = structlog.get_logger()

DatasetKind = Literal["stripes", "boxes", "digits", "smooth"]

# 3x5 bitmap font, one string per row
DIGIT_FONT = {
    0: ["111", "101", "101", "101", "111"],
    1: ["010", "110", "010", "010", "111"],
    2: ["111", "001", "111", "100", "111"],
    3: ["111", "001", "111", "001", "111"],
    4: ["101", "101", "111", "001", "001"],
    5: ["111", "100", "111", "001", "111"],
    6: ["111", "100", "111", "101", "111"],
    7: ["111", "001", "010", "010", "010"],
    8: ["111", "101", "111", "101", "111"],
    9: ["111", "101", "111", "001", "111"],
}


@dataclass(frozen=True)
class SyntheticSpec:
    kind: DatasetKind
    n: int
    grid: ImageGrid
    K: int = 2

    def __post_init__(self) -> None:
        if self.kind not in ("stripes", "boxes", "digits", "smooth"):
            raise ConfigurationError(f"unknown synthetic dataset kind: {self.kind}")
        if self.n < 0:
            raise ConfigurationError(f"dataset size must be nonnegative, got {self.n}")
        if self.K < 2 or self.K > 256:
            raise ConfigurationError(f"8-bit images hold between 2 and 256 levels, got K={self.K}")
        if self.grid.channels not in (1, 3):
            raise ConfigurationError(f"images have 1 or 3 channels, got {self.grid.channels}")


@dataclass(frozen=True, eq=False)
class Dataset:
    ids: List[str]
    sequences: np.ndarray
    grid: ImageGrid
    vocab: VocabSpec

    def __len__(self) -> int:
        return len(self.ids)


def _replicate(plane: np.ndarray, channels: int) -> np.ndarray:
    return np.repeat(plane[None], channels, axis=0).ravel().astype(np.int64)


def stripe_patterns(grid: ImageGrid, K: int) -> List[TokenSequence]:
    """Every distinct horizontal or vertical square-wave pattern, in a fixed order."""
    h, w = grid.height, grid.width
    seen: set[bytes] = set()
    out: List[TokenSequence] = []
    for axis, size in ((0, h), (1, w)):
        coord = np.arange(size)
        for period in range(2, size + 1):
            for phase in range(period):
                line = ((coord + phase) % period) < period // 2
                plane = np.broadcast_to(line[:, None] if axis == 0 else line[None, :], (h, w))
                z = _replicate(np.where(plane, K - 1, 0), grid.channels)
                key = z.tobytes()
                if key not in seen:
                    seen.add(key)
                    out.append(z)
    return out


def _box(grid: ImageGrid, K: int, rng: np.random.Generator) -> TokenSequence:
    h, w = grid.height, grid.width
    bh, bw = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
    y0, x0 = int(rng.integers(0, h - bh + 1)), int(rng.integers(0, w - bw + 1))
    plane = np.zeros((h, w), dtype=np.int64)
    plane[y0: y0 + bh, x0: x0 + bw] = K - 1
    return _replicate(plane, grid.channels)


def _digit(grid: ImageGrid, K: int, rng: np.random.Generator) -> TokenSequence:
    scale = min(grid.height // 5, grid.width // 3)
    if scale < 1:
        raise ConfigurationError(f"a {grid.height}x{grid.width} grid cannot hold a 3x5 digit")
    glyph = np.array([[c == "1" for c in row] for row in DIGIT_FONT[int(rng.integers(10))]])
    glyph = np.kron(glyph, np.ones((scale, scale), dtype=bool))
    gh, gw = glyph.shape
    y0 = int(rng.integers(0, grid.height - gh + 1))
    x0 = int(rng.integers(0, grid.width - gw + 1))
    plane = np.zeros((grid.height, grid.width), dtype=np.int64)
    plane[y0: y0 + gh, x0: x0 + gw] = np.where(glyph, K - 1, 0)
    return _replicate(plane, grid.channels)


def _smooth(grid: ImageGrid, K: int, rng: np.random.Generator) -> TokenSequence:
    yy, xx = np.mgrid[0: grid.height, 0: grid.width] / max(grid.height, grid.width)
    planes = []
    for _ in range(grid.channels):
        field = np.zeros((grid.height, grid.width))
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 2.0, size=2)
            field += np.cos(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
        lo, hi = field.min(), field.max()
        field = (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)
        planes.append(np.minimum((field * K).astype(np.int64), K - 1))
    return np.stack(planes).ravel()


def make_synthetic_dataset(spec: SyntheticSpec, rng: np.random.Generator) -> List[TokenSequence]:
    if spec.n == 0:
        return []
    if spec.kind == "stripes":
        patterns = stripe_patterns(spec.grid, spec.K)
        if spec.n > len(patterns):
            raise ConfigurationError(f"only {len(patterns)} distinct stripe patterns fit a {spec.grid.height}x{spec.grid.width} grid, asked for {spec.n}")
        order = rng.permutation(len(patterns))[: spec.n]
        return [patterns[i] for i in order]
    make = {"boxes": _box, "digits": _digit, "smooth": _smooth}[spec.kind]
    return [make(spec.grid, spec.K, rng) for _ in range(spec.n)]


def tokens_to_pixels(z: TokenSequence, grid: ImageGrid, vocab: VocabSpec) -> np.ndarray:
    levels = np.round(vocab.intensity * 255.0).astype(np.uint8)
    img = levels[check_tokens(z, vocab)].reshape(grid.shape)
    return img[0] if grid.channels == 1 else np.transpose(img, (1, 2, 0))


def pixels_to_tokens(pixels: np.ndarray, vocab: VocabSpec) -> TokenSequence:
    levels = np.round(vocab.intensity * 255.0)
    arr = np.asarray(pixels, dtype=np.float64)
    planes = arr[None] if arr.ndim == 2 else np.transpose(arr, (2, 0, 1))
    return np.argmin(np.abs(planes.ravel()[:, None] - levels[None, :]), axis=1).astype(np.int64)


def write_image(path: str | Path, z: TokenSequence, grid: ImageGrid, vocab: VocabSpec) -> Path:
    """Binary PGM (P5) for one channel, PPM (P6) for three."""
    return write_pixels(path, tokens_to_pixels(z, grid, vocab))


def write_pixels(path: str | Path, pixels: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path, format="PPM")
    return path


def write_intensities(path: str | Path, x: np.ndarray, grid: ImageGrid) -> Path:
    img = np.round(np.clip(grid.to_image(x), 0.0, 1.0) * 255.0).astype(np.uint8)
    return write_pixels(path, img[0] if grid.channels == 1 else np.transpose(img, (1, 2, 0)))


def read_image(path: str | Path, grid: ImageGrid, vocab: VocabSpec) -> TokenSequence:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found at {path}")
    with Image.open(path) as im:
        pixels = np.asarray(im)
    expected = (grid.height, grid.width) if grid.channels == 1 else (grid.height, grid.width, grid.channels)
    if pixels.shape != expected:
        raise ShapeError(f"{path}: image has shape {pixels.shape}, grid expects {expected}")
    return pixels_to_tokens(pixels, vocab)


def calculate_sha256(filepath: Path, chunk_size: int = 8192) -> str:
    """Calculate SHA-256 hash of a file."""
    sha256_hash = hashlib.sha256()
    with open(filepath, "rb") as f:
        while chunk := f.read(chunk_size):
            sha256_hash.update(chunk)
    return sha256_hash.hexdigest()


def write_dataset(out_dir: str | Path, sequences: List[TokenSequence], grid: ImageGrid, vocab: VocabSpec, *, seed: int, kind: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if grid.channels == 1 else "ppm"
    manifest: Dict[str, Any] = {
        "seed": seed,
        "kind": kind,
        "height": grid.height,
        "width": grid.width,
        "channels": grid.channels,
        "K": vocab.K,
        "files": [],
    }
    for i, z in enumerate(sequences):
        rel = Path("images") / f"img_{i:04d}.{ext}"
        path = write_image(out_dir / rel, z, grid, vocab)
        manifest["files"].append({"id": f"img_{i:04d}", "path": rel.as_posix(), "size": path.stat().st_size, "checksum": calculate_sha256(path)})
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    logger.info("Dataset generation complete", total_files=len(sequences), kind=kind, manifest_path=str(manifest_path))
    return manifest_path


def verify_manifest(manifest_path: Path, data_path: Path) -> bool:
    """Verify existing dataset against manifest."""
    try:
        manifest = json.loads(Path(manifest_path).read_text())
        for file_info in manifest["files"]:
            filepath = Path(data_path) / file_info["path"]
            if not filepath.exists():
                logger.warning("Missing file", path=file_info["path"])
                return False
            actual = calculate_sha256(filepath)
            if actual != file_info["checksum"]:
                logger.warning("Checksum mismatch", path=file_info["path"], expected=file_info["checksum"], actual=actual)
                return False
        logger.info("Dataset verification successful", file_count=len(manifest["files"]))
        return True
    except (OSError, KeyError, json.JSONDecodeError) as e:
        logger.error("Failed to verify manifest", error=str(e))
        return False


def load_dataset(data_path: str | Path, *, verify: bool = True) -> Dataset:
    data_path = Path(data_path)
    manifest_path = data_path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest.json not found at {manifest_path}")
    if verify and not verify_manifest(manifest_path, data_path):
        raise RuntimeError(f"dataset at {data_path} does not match its manifest")
    manifest = json.loads(manifest_path.read_text())
    grid = ImageGrid(manifest["height"], manifest["width"], manifest.get("channels", 1))
    vocab = VocabSpec.ordinal(manifest["K"])
    ids = [f["id"] for f in manifest["files"]]
    seqs = [read_image(data_path / f["path"], grid, vocab) for f in manifest["files"]]
    sequences = np.stack(seqs) if seqs else np.zeros((0, grid.size), dtype=np.int64)
    logger.info("Loaded dataset", path=str(data_path), images=len(ids), K=vocab.K)
    return Dataset(ids=ids, sequences=sequences, grid=grid, vocab=vocab)
