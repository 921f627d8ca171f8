"""Reconstruction metrics and the CSV aggregation of an experiment's results.

metrics.csv has one row per (image, chain); MetricsProcessor reduces it to
per-seed and pooled mean / std summaries.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from errors import ShapeError
from operators import ImageGrid

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5, i.e. an 11 x 11 window
SSIM_MIN_SIZE = 11

METRIC_COLUMNS = ["psnr", "accuracy", "ssim", "iou", "f1"]
CSV_COLUMNS = ["image_id", "chain", "seed", *METRIC_COLUMNS, "error"]


def _pair(x: np.ndarray, x_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(x_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(x: np.ndarray, x_hat: np.ndarray, max_val: float = 1.0) -> float:
    if max_val <= 0:
        raise ValueError(f"max_val must be positive, got {max_val}")
    a, b = _pair(x, x_hat)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(max_val**2 / mse), PSNR_CAP)


def token_accuracy(z: np.ndarray, z_hat: np.ndarray) -> float:
    a, b = _pair(z, z_hat)
    return 100.0 * float(np.mean(a == b))


def ssim(x: np.ndarray, x_hat: np.ndarray, grid: ImageGrid, max_val: float = 1.0) -> float:
    """Gaussian-window SSIM averaged over pixels, then over channels."""
    if grid.height < SSIM_MIN_SIZE or grid.width < SSIM_MIN_SIZE:
        raise ValueError(f"SSIM needs images of at least {SSIM_MIN_SIZE}x{SSIM_MIN_SIZE}, got {grid.height}x{grid.width}")
    a = grid.to_image(x)
    b = grid.to_image(x_hat)
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2

    def blur(img: np.ndarray) -> np.ndarray:
        return gaussian_filter(img, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    scores = []
    for ch_a, ch_b in zip(a, b):
        mu_a, mu_b = blur(ch_a), blur(ch_b)
        var_a = blur(ch_a * ch_a) - mu_a**2
        var_b = blur(ch_b * ch_b) - mu_b**2
        cov = blur(ch_a * ch_b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def iou_f1(b: np.ndarray, b_hat: np.ndarray) -> Tuple[float, float]:
    """IoU and F1 of the positive class; an empty union scores IoU 1."""
    x, y = _pair(b, b_hat)
    x, y = x.astype(bool), y.astype(bool)
    inter = int(np.sum(x & y))
    union = int(np.sum(x | y))
    iou = 1.0 if union == 0 else inter / union
    precision = inter / y.sum() if y.sum() else 0.0
    recall = inter / x.sum() if x.sum() else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return float(iou), float(f1)


class MetricsProcessor:
    REQUIRED = set(CSV_COLUMNS)

    def __init__(self, output_dir: str | Path):
        self.output_dir = Path(output_dir)
        self.metrics_path = self.output_dir / "metrics.csv"
        if not self.metrics_path.exists():
            raise FileNotFoundError(f"metrics.csv not found at {self.metrics_path}")

    def _read(self) -> pd.DataFrame:
        df = pd.read_csv(self.metrics_path, keep_default_na=False, na_values=[""])
        missing = self.REQUIRED - set(df.columns)
        if missing:
            raise RuntimeError(f"{self.metrics_path} lacks columns: {sorted(missing)}")
        for col in METRIC_COLUMNS:
            df[col] = pd.to_numeric(df[col], errors="coerce")
        return df

    @staticmethod
    def _describe(df: pd.DataFrame) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for col in METRIC_COLUMNS:
            out[f"{col}_mean"] = float(df[col].mean())
            out[f"{col}_std"] = float(df[col].std(ddof=0)) if df[col].notna().any() else float("nan")
        return out

    def process_all(self) -> Dict[str, Any]:
        df = self._read()
        failed = df["error"].notna() & (df["error"].astype(str) != "")
        ok = df[~failed]
        if ok.empty:
            raise RuntimeError(f"{self.metrics_path} holds no successful reconstructions")

        rows: List[Dict[str, Any]] = [{"group": "pooled", "samples": len(ok), **self._describe(ok)}]
        per_seed = ok.groupby("seed")
        for seed, part in per_seed:
            rows.append({"group": f"seed={seed}", "samples": len(part), **self._describe(part)})
        # std across seeds of the per-seed means
        means = per_seed[METRIC_COLUMNS].mean()
        across = {f"{c}_mean": float(means[c].mean()) for c in METRIC_COLUMNS}
        across.update({f"{c}_std": float(means[c].std(ddof=0)) for c in METRIC_COLUMNS})
        rows.append({"group": "across_seeds", "samples": len(means), **across})

        summary = pd.DataFrame(rows)
        summary_csv = self.output_dir / "summary.csv"
        summary.to_csv(summary_csv, index=False, float_format="%.6f")
        summary_txt = self.output_dir / "summary.txt"
        summary_txt.write_text(self._render(summary, failed=int(failed.sum())))
        return {
            "metrics_csv": str(self.metrics_path),
            "summary_csv": str(summary_csv),
            "summary_txt": str(summary_txt),
            "images": int(ok["image_id"].nunique()),
            "failed": int(failed.sum()),
            "pooled": rows[0],
        }

    @staticmethod
    def _render(summary: pd.DataFrame, failed: int) -> str:
        lines = [f"{'group':<16}{'n':>6}" + "".join(f"{c:>20}" for c in METRIC_COLUMNS)]
        for _, r in summary.iterrows():
            cells = "".join(f"{r[c + '_mean']:>11.4f} ± {r[c + '_std']:<6.3f}" for c in METRIC_COLUMNS)
            lines.append(f"{r['group']:<16}{int(r['samples']):>6}{cells}")
        lines.append(f"failed reconstructions: {failed}")
        return "\n".join(lines) + "\n"


def score(z: np.ndarray, z_hat: np.ndarray, x: np.ndarray, x_hat: np.ndarray, grid: ImageGrid, binary: bool) -> Dict[str, float]:
    """All metrics for one reconstruction; SSIM is NaN on grids below the window size and IoU/F1 on non-binary data."""
    out = {"psnr": psnr(x, x_hat), "accuracy": token_accuracy(z, z_hat)}
    small = grid.height < SSIM_MIN_SIZE or grid.width < SSIM_MIN_SIZE
    out["ssim"] = float("nan") if small else ssim(x, x_hat, grid)
    if binary:
        out["iou"], out["f1"] = iou_f1(z, z_hat)
    else:
        out["iou"] = out["f1"] = float("nan")
    return out


def dump_json(result: Dict[str, Any]) -> str:
    return json.dumps(result, indent=2, default=float)
