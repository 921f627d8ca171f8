#!/usr/bin/env python3
"""Experiment harness: dataset -> measurements -> reconstructions -> metrics.

Output layout under run.output_dir:
  config.json                       validated configuration echo
  dataset/                          materialized synthetic dataset (when generated)
  measurements/{id}.npy             measurement vectors, plus {id}.pgm/.ppm previews
  reconstructions/{id}_chain{c}.pgm decoded samples; errors.json lists failed chains
  metrics.csv, timings.csv          one row per (image, chain)
  summary.csv, summary.txt          pooled and per-seed aggregates
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog

from config import ExperimentConfig, OperatorConfig
from corruption import CorruptionProcess, NoiseSchedule
from dataset import (
    Dataset,
    SyntheticSpec,
    load_dataset,
    make_synthetic_dataset,
    read_image,
    verify_manifest,
    write_dataset,
    write_image,
    write_intensities,
)
from errors import DLPSError
from metrics import CSV_COLUMNS, MetricsProcessor, score
from operators import (
    BoxInpaint,
    DataFit,
    Downsample,
    ForwardOperator,
    GaussianBlur,
    Hdr,
    Identity,
    ImageGrid,
    Inpaint,
    Measurement,
    MotionBlur,
    AndPairs,
    XorPairs,
    centered_box,
    load_mask,
    random_inpaint_mask,
    random_pairs,
    simulate_measurement,
)
from potential import BilinearSurrogate
from prior import Denoiser, EmpiricalBayesDenoiser, ExternalLogitsDenoiser
from sampler import run as run_sampler
from streams import NOISE, OPERATOR, derive_seed, substream
from tokenspace import VocabSpec, decode

logger = structlog.get_logger()


def build_operator(cfg: OperatorConfig, grid: ImageGrid, rng: np.random.Generator) -> ForwardOperator:
    kind = cfg.kind
    if kind == "identity":
        return Identity(grid)
    if kind == "inpaint":
        observed = load_mask(cfg.mask_path, grid) if cfg.mask_path else random_inpaint_mask(grid, cfg.hidden, rng)
        return Inpaint(grid, observed)
    if kind == "box":
        return BoxInpaint(grid, centered_box(grid, cfg.side))
    if kind == "xor_pairs":
        return XorPairs(grid, random_pairs(grid, cfg.n_pairs, rng))
    if kind == "and_pairs":
        return AndPairs(grid, random_pairs(grid, cfg.n_pairs, rng))
    if kind == "gaussian_blur":
        return GaussianBlur(grid, cfg.kernel_size, cfg.kernel_sigma)
    if kind == "motion_blur":
        return MotionBlur.from_file(grid, cfg.kernel_path)
    if kind == "downsample":
        return Downsample(grid, cfg.factor)
    if kind == "hdr":
        return Hdr(grid)
    raise ValueError(f"unknown operator kind: {kind}")


def measurement_preview(op: ForwardOperator, y: np.ndarray) -> Optional[Tuple[np.ndarray, ImageGrid]]:
    """Image-shaped view of a measurement, or None when it has no spatial layout."""
    if isinstance(op, Inpaint):
        img = op.visualize(y)
        return img.ravel(), op.grid
    if isinstance(op, Downsample):
        c, h, w = op.output_shape
        return y, ImageGrid(h, w, c)
    if isinstance(op, (Identity, GaussianBlur, MotionBlur, Hdr)):
        return y, op.grid
    return None


@dataclass(frozen=True)
class ChainResult:
    image_index: int
    chain: int
    tokens: Optional[np.ndarray]
    seconds: float
    acceptance: float
    error: str = ""


class ExperimentHarness:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.output_dir = Path(cfg.run.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.measurement_dir = self.output_dir / "measurements"
        self.reconstruction_dir = self.output_dir / "reconstructions"
        self.dataset = self._materialize_dataset()
        self.grid = self.dataset.grid
        self.vocab = VocabSpec.ordinal(self.dataset.vocab.K, masked=cfg.process.kind == "masked")
        self.process = CorruptionProcess(cfg.process.kind, self.vocab, NoiseSchedule(cfg.process.schedule, cfg.process.floor))
        self.operator = build_operator(cfg.operator, self.grid, substream(cfg.run.seed, OPERATOR))
        self.surrogate = BilinearSurrogate.load(cfg.likelihood.surrogate_path) if cfg.likelihood.mode == "surrogate" else None

    # ----- helpers -----
    def _materialize_dataset(self) -> Dataset:
        d = self.cfg.dataset
        if d.path is not None:
            return load_dataset(d.path)
        target = self.output_dir / "dataset"
        manifest = target / "manifest.json"
        if manifest.exists() and json.loads(manifest.read_text()).get("seed") == d.seed and verify_manifest(manifest, target):
            logger.info("Using existing dataset", path=str(target))
            return load_dataset(target, verify=False)
        grid = ImageGrid(d.height, d.width, d.channels)
        spec = SyntheticSpec(kind=d.kind, n=d.n, grid=grid, K=d.K)
        sequences = make_synthetic_dataset(spec, substream(d.seed))
        write_dataset(target, sequences, grid, VocabSpec.ordinal(d.K), seed=d.seed, kind=d.kind)
        return load_dataset(target, verify=False)

    def _data_fit(self) -> DataFit:
        lik = self.cfg.likelihood
        if lik.l1 is None and lik.l2 is None:
            return DataFit.gaussian(max(self.cfg.operator.noise_sigma, 1e-2))
        return DataFit(l1=lik.l1 or 0.0, l2=lik.l2 or 0.0)

    def _prior(self) -> Denoiser:
        p = self.cfg.prior
        if p.kind == "external":
            return ExternalLogitsDenoiser.from_file(p.logits_path, self.vocab)
        return EmpiricalBayesDenoiser(self.dataset.sequences, self.process, smoothing=p.smoothing)

    def _measurement_path(self, image_id: str) -> Path:
        return self.measurement_dir / f"{image_id}.npy"

    def _reconstruction_path(self, image_id: str, chain: int) -> Path:
        ext = "pgm" if self.grid.channels == 1 else "ppm"
        return self.reconstruction_dir / f"{image_id}_chain{chain}.{ext}"

    def _seed(self, image_index: int) -> int:
        return derive_seed(self.cfg.run.seed, image_index)

    def write_config_echo(self) -> Path:
        path = self.output_dir / "config.json"
        path.write_text(self.cfg.model_dump_json(indent=2))
        return path

    # ----- stages -----
    def simulate(self) -> List[Measurement]:
        self.measurement_dir.mkdir(parents=True, exist_ok=True)
        sigma = self.cfg.operator.noise_sigma
        out: List[Measurement] = []
        for i, (image_id, z) in enumerate(zip(self.dataset.ids, self.dataset.sequences)):
            x = decode(z, self.vocab)
            y = simulate_measurement(self.operator, x, sigma, substream(self.cfg.run.seed, i, NOISE))
            np.save(self._measurement_path(image_id), y.values)
            preview = measurement_preview(self.operator, y.values)
            if preview is not None:
                values, grid = preview
                ext = "pgm" if grid.channels == 1 else "ppm"
                write_intensities(self.measurement_dir / f"{image_id}.{ext}", values, grid)
            out.append(y)
        logger.info("Simulated measurements", images=len(out), operator=self.operator.kind, sigma=sigma, path=str(self.measurement_dir))
        return out

    def _load_measurement(self, image_id: str) -> Measurement:
        path = self._measurement_path(image_id)
        if not path.exists():
            raise FileNotFoundError(f"measurement not found at {path}; run `dlps simulate` first")
        return Measurement(values=np.load(path), sigma=self.cfg.operator.noise_sigma, operator=self.operator)

    def _sample_one(self, image_index: int, chain: int, y: Measurement, prior: Denoiser) -> ChainResult:
        cfg = self.cfg.sampler.model_copy(update={"seed": self._seed(image_index)})
        start = time.perf_counter()
        try:
            z0, trace = run_sampler(y, prior, self.process, cfg, data_fit=self._data_fit(), surrogate=self.surrogate, chain=chain)
        except (DLPSError, ValueError, RuntimeError, ArithmeticError, NotImplementedError) as e:
            logger.error("Sampler failed", image=self.dataset.ids[image_index], chain=chain, error=str(e))
            return ChainResult(image_index, chain, None, time.perf_counter() - start, float("nan"), error=f"{type(e).__name__}: {e}")
        return ChainResult(image_index, chain, z0, time.perf_counter() - start, trace.acceptance_rate)

    def sample(self) -> List[ChainResult]:
        self.reconstruction_dir.mkdir(parents=True, exist_ok=True)
        ys = [self._load_measurement(image_id) for image_id in self.dataset.ids]
        prior = self._prior()
        jobs = [(i, c) for i in range(len(ys)) for c in range(self.cfg.run.n_chains)]
        with ThreadPoolExecutor(max_workers=self.cfg.run.workers) as pool:
            results = list(pool.map(lambda job: self._sample_one(job[0], job[1], ys[job[0]], prior), jobs))
        results.sort(key=lambda r: (r.image_index, r.chain))

        errors: Dict[str, str] = {}
        timings: List[Dict[str, Any]] = []
        for r in results:
            image_id = self.dataset.ids[r.image_index]
            path = self._reconstruction_path(image_id, r.chain)
            if r.tokens is None:
                errors[path.stem] = r.error
                path.unlink(missing_ok=True)
            else:
                write_image(path, r.tokens, self.grid, self.vocab)
            timings.append({"image_id": image_id, "chain": r.chain, "seconds": r.seconds, "acceptance": r.acceptance})
        (self.reconstruction_dir / "errors.json").write_text(json.dumps(errors, indent=2, sort_keys=True))
        pd.DataFrame(timings).to_csv(self.output_dir / "timings.csv", index=False)
        logger.info("Sampling complete", chains=len(results), failed=len(errors), path=str(self.reconstruction_dir))
        return results

    def evaluate(self) -> Dict[str, Any]:
        errors_path = self.reconstruction_dir / "errors.json"
        errors: Dict[str, str] = json.loads(errors_path.read_text()) if errors_path.exists() else {}
        binary = self.vocab.K == 2
        rows: List[Dict[str, Any]] = []
        for i, (image_id, z) in enumerate(zip(self.dataset.ids, self.dataset.sequences)):
            x = decode(z, self.vocab)
            for c in range(self.cfg.run.n_chains):
                path = self._reconstruction_path(image_id, c)
                row: Dict[str, Any] = {"image_id": image_id, "chain": c, "seed": self._seed(i)}
                if path.stem in errors or not path.exists():
                    row.update({m: float("nan") for m in ("psnr", "accuracy", "ssim", "iou", "f1")})
                    row["error"] = errors.get(path.stem, f"missing reconstruction {path.name}")
                else:
                    z_hat = read_image(path, self.grid, self.vocab)
                    row.update(score(z, z_hat, x, decode(z_hat, self.vocab), self.grid, binary))
                    row["error"] = ""
                rows.append(row)
        df = pd.DataFrame(rows, columns=CSV_COLUMNS)
        df.to_csv(self.output_dir / "metrics.csv", index=False, float_format="%.6f")
        result = MetricsProcessor(self.output_dir).process_all()
        logger.info("Evaluation complete", images=result["images"], failed=result["failed"], summary=result["summary_txt"])
        return result

    def run(self) -> int:
        self.write_config_echo()
        self.simulate()
        self.sample()
        result = self.evaluate()
        return 0 if result["failed"] == 0 else 1
