"""Experiment configuration: TOML sections validated by pydantic models.

Unknown keys are rejected in every section. Command-line overrides are dotted
keys ("sampler.T") merged into the raw TOML mapping before validation, and a
task preset fills sampler and data-fit values the file leaves unset.
"""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field, model_validator

from operators import TIERS
from sampler import SamplerConfig

PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "gaussian_deblur": {
        "operator": {"kind": "gaussian_blur"},
        "sampler": {"T": 30, "M": 30, "alpha_base": 0.15, "alpha_min": 0.01, "tau_start": 1.0, "tau_end": 1.0,
                    "beta_0": 20.0, "beta_max": 80.0, "grad_scale_init": 50.0, "grad_scale_final": 20.0},
        "likelihood": {"l1": 3.0, "l2": 0.5},
    },
    "hdr": {
        "operator": {"kind": "hdr"},
        "sampler": {"T": 30, "M": 30, "alpha_base": 0.2, "alpha_min": 0.2, "tau_start": 2.0, "tau_end": 0.5,
                    "beta_0": 1.0, "beta_max": 25.0, "grad_scale_init": 23.0, "grad_scale_final": 1.0},
        "likelihood": {"l1": 2.2, "l2": 0.5},
    },
    "inpaint": {
        "operator": {"kind": "inpaint"},
        "sampler": {"T": 20, "M": 20, "alpha_base": 0.15, "alpha_min": 0.01, "tau_start": 1.0, "tau_end": 1.0,
                    "beta_0": 1.0, "beta_max": 25.0, "grad_scale_init": 23.0, "grad_scale_final": 23.0},
        "likelihood": {"l1": 1.0, "l2": 0.2},
    },
    "super_resolution": {
        "operator": {"kind": "downsample"},
        "sampler": {"T": 30, "M": 20, "alpha_base": 0.15, "alpha_min": 0.15, "tau_start": 1.0, "tau_end": 1.0,
                    "beta_0": 20.0, "beta_max": 40.0, "grad_scale_init": 30.0, "grad_scale_final": 5.0},
        "likelihood": {"l1": 2.0, "l2": 0.5},
    },
    "motion_deblur": {
        "operator": {"kind": "motion_blur"},
        "sampler": {"T": 70, "M": 30, "alpha_base": 1.5, "alpha_min": 1.5, "tau_start": 1.0, "tau_end": 1.0,
                    "beta_0": 20.0, "beta_max": 50.1, "grad_scale_init": 25.0, "grad_scale_final": 5.0},
        "likelihood": {"l1": 2.0, "l2": 0.1},
    },
}

OperatorKind = Literal["identity", "inpaint", "box", "xor_pairs", "and_pairs", "gaussian_blur", "motion_blur", "downsample", "hdr"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DatasetConfig(_Section):
    path: Optional[Path] = None
    kind: Optional[Literal["stripes", "boxes", "digits", "smooth"]] = None
    n: int = Field(16, ge=0)
    height: int = Field(8, ge=1)
    width: int = Field(8, ge=1)
    channels: Literal[1, 3] = 1
    K: int = Field(2, ge=2, le=256)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _source(self) -> "DatasetConfig":
        if (self.path is None) == (self.kind is None):
            raise ValueError("dataset needs exactly one of 'path' (existing dataset) or 'kind' (synthetic)")
        if self.path is not None and not (self.path / "manifest.json").exists():
            raise ValueError(f"manifest.json not found under dataset path {self.path}")
        return self


class ProcessConfig(_Section):
    kind: Literal["masked", "uniform"] = "uniform"
    schedule: Literal["linear", "cosine", "loglinear"] = "linear"
    floor: float = Field(1e-3, ge=0, lt=0.5)


class PriorConfig(_Section):
    kind: Literal["empirical", "external"] = "empirical"
    logits_path: Optional[Path] = None
    smoothing: float = Field(1e-6, ge=0, le=1)

    @model_validator(mode="after")
    def _logits(self) -> "PriorConfig":
        if self.kind == "external":
            if self.logits_path is None:
                raise ValueError("an external prior needs 'logits_path'")
            if not self.logits_path.exists():
                raise ValueError(f"logits file not found at {self.logits_path}")
        return self


class OperatorConfig(_Section):
    kind: OperatorKind = "inpaint"
    preset: Optional[str] = None
    tier: Literal["easy", "medium", "hard"] = "medium"
    sigma: Optional[float] = Field(None, ge=0)
    hidden_fraction: Optional[float] = Field(None, ge=0, lt=1)
    box_side: Optional[int] = Field(None, ge=1)
    mask_path: Optional[Path] = None
    kernel_path: Optional[Path] = None
    kernel_size: int = Field(61, ge=1)
    kernel_sigma: float = Field(3.0, gt=0)
    factor: int = Field(4, ge=1)
    n_pairs: int = Field(16, ge=1)

    @model_validator(mode="after")
    def _files(self) -> "OperatorConfig":
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.kind == "motion_blur" and self.kernel_path is None:
            raise ValueError("motion_blur needs 'kernel_path'")
        for p in (self.mask_path, self.kernel_path):
            if p is not None and not p.exists():
                raise ValueError(f"operator file not found at {p}")
        return self

    @property
    def noise_sigma(self) -> float:
        return self.sigma if self.sigma is not None else TIERS[self.tier].sigma

    @property
    def hidden(self) -> float:
        return self.hidden_fraction if self.hidden_fraction is not None else TIERS[self.tier].mask_fraction

    @property
    def side(self) -> int:
        return self.box_side if self.box_side is not None else TIERS[self.tier].box_side


class LikelihoodConfig(_Section):
    mode: Literal["explicit", "surrogate"] = "explicit"
    l1: Optional[float] = Field(None, ge=0)
    l2: Optional[float] = Field(None, ge=0)
    surrogate_path: Optional[Path] = None

    @model_validator(mode="after")
    def _surrogate(self) -> "LikelihoodConfig":
        if self.mode == "surrogate" and (self.surrogate_path is None or not self.surrogate_path.exists()):
            raise ValueError("surrogate likelihood needs an existing 'surrogate_path'")
        return self


class RunConfig(_Section):
    n_chains: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    output_dir: Path = Path("results")
    seed: int = Field(0, ge=0)


class ExperimentConfig(_Section):
    dataset: DatasetConfig
    process: ProcessConfig = ProcessConfig()
    prior: PriorConfig = PriorConfig()
    operator: OperatorConfig = OperatorConfig()
    likelihood: LikelihoodConfig = LikelihoodConfig()
    sampler: SamplerConfig = SamplerConfig()
    run: RunConfig = RunConfig()

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        op = self.operator
        if op.kind in ("xor_pairs", "and_pairs") and self.dataset.K != 2:
            raise ValueError(f"{op.kind} needs a binary vocabulary, dataset has K={self.dataset.K}")
        if op.kind == "downsample" and (self.dataset.height % op.factor or self.dataset.width % op.factor):
            raise ValueError(f"downsample factor {op.factor} must divide the {self.dataset.height}x{self.dataset.width} grid")
        return self


def _set_dotted(raw: Dict[str, Any], dotted: str, value: Any) -> None:
    section, _, key = dotted.partition(".")
    if not key:
        raise ValueError(f"override {dotted!r} must look like 'section.key'")
    raw.setdefault(section, {})[key] = value


def apply_preset(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Fill sampler, data-fit and operator keys from [operator].preset where unset."""
    name = raw.get("operator", {}).get("preset")
    if name is None or name not in PRESETS:
        return raw
    out = copy.deepcopy(raw)
    for section, values in PRESETS[name].items():
        target = out.setdefault(section, {})
        for key, value in values.items():
            target.setdefault(key, value)
    return out


def build_config(raw: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    merged: Dict[str, Any] = copy.deepcopy(dict(raw))
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(merged, dotted, value)
    return ExperimentConfig.model_validate(apply_preset(merged))


def load_config(path: str | Path, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found at {path}")
    with open(path, "rb") as f:
        raw = tomli.load(f)
    return build_config(raw, overrides)
