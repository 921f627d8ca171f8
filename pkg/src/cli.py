#!/usr/bin/env python3
"""CLI entrypoint: `dlps simulate | sample | evaluate | oracle | make-data | fit-surrogate`."""
from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict

import click
import numpy as np
import structlog
from pydantic import ValidationError

from config import ExperimentConfig, load_config
from dataset import SyntheticSpec, make_synthetic_dataset, write_dataset
from errors import DLPSError
from harness import ExperimentHarness
from metrics import dump_json
from operators import ImageGrid
from potential import infonce_fit
from streams import NOISE, substream
from tokenspace import VocabSpec, decode
from verify import run_checks

logger = structlog.get_logger()


def configure_logging(level: str) -> None:
    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(logging.getLevelName(level.upper())),
        # resolve stderr per logger so captured streams (CliRunner) are honoured
        logger_factory=lambda *args: structlog.PrintLogger(sys.stderr),
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
    )


# flag name -> dotted config key
OVERRIDES: Dict[str, str] = {
    "seed": "run.seed",
    "output_dir": "run.output_dir",
    "n_chains": "run.n_chains",
    "workers": "run.workers",
    "operator": "operator.kind",
    "preset": "operator.preset",
    "tier": "operator.tier",
    "sigma": "operator.sigma",
    "steps": "sampler.T",
    "inner_steps": "sampler.M",
    "eta": "sampler.eta",
    "proposal_form": "sampler.proposal_form",
    "mh": "sampler.mh",
}


def experiment_options(fn: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=Path("config.toml")),
        click.option("--seed", type=int, default=None, help="Master seed (run.seed)"),
        click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), default=None),
        click.option("--n-chains", type=int, default=None),
        click.option("--workers", type=int, default=None, help="Thread pool size for chains"),
        click.option("--operator", type=str, default=None, help="Operator kind, e.g. inpaint, gaussian_blur, hdr"),
        click.option("--preset", type=str, default=None, help="Task preset filling sampler and data-fit defaults"),
        click.option("--tier", type=click.Choice(["easy", "medium", "hard"]), default=None),
        click.option("--sigma", type=float, default=None, help="Measurement noise level"),
        click.option("--steps", type=int, default=None, help="Outer steps T"),
        click.option("--inner-steps", type=int, default=None, help="Inner refinement steps M"),
        click.option("--eta", type=float, default=None, help="Langevin step size"),
        click.option("--proposal-form", type=click.Choice(["index", "onehot", "embedding"]), default=None),
        click.option("--mh/--no-mh", default=None, help="Metropolis-Hastings correction"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _load(config_file: Path, flags: Dict[str, Any]) -> ExperimentConfig:
    overrides = {OVERRIDES[k]: (str(v) if isinstance(v, Path) else v) for k, v in flags.items() if k in OVERRIDES}
    try:
        return load_config(config_file, overrides)
    except ValidationError as e:
        raise click.ClickException(f"invalid configuration in {config_file}:\n{e}") from e


def _harness(config_file: Path, flags: Dict[str, Any]) -> ExperimentHarness:
    cfg = _load(config_file, flags)
    try:
        h = ExperimentHarness(cfg)
    except (DLPSError, FileNotFoundError, RuntimeError) as e:
        raise click.ClickException(str(e)) from e
    h.write_config_echo()
    return h


@click.group()
@click.option("--log-level", type=click.Choice(["debug", "info", "warning", "error"]), default="info", show_default=True)
def main(log_level: str) -> None:
    """Discrete Langevin posterior sampling with discrete diffusion priors."""
    configure_logging(log_level)


@main.command()
@experiment_options
def simulate(config_file: Path, **flags: Any) -> None:
    """Apply the forward operator to the dataset and write measurements."""
    _harness(config_file, flags).simulate()


@main.command()
@experiment_options
def sample(config_file: Path, **flags: Any) -> None:
    """Run the sampler on every measurement and write reconstructions."""
    h = _harness(config_file, flags)
    try:
        results = h.sample()
    except (FileNotFoundError, DLPSError) as e:
        raise click.ClickException(str(e)) from e
    failed = sum(r.tokens is None for r in results)
    click.echo(f"{len(results) - failed}/{len(results)} chains reconstructed into {h.reconstruction_dir}")


@main.command()
@experiment_options
def evaluate(config_file: Path, **flags: Any) -> None:
    """Score reconstructions against ground truth and write metrics.csv and the summary."""
    result = _harness(config_file, flags).evaluate()
    click.echo(Path(result["summary_txt"]).read_text())
    sys.exit(0 if result["failed"] == 0 else 1)


@main.command()
@experiment_options
def run(config_file: Path, **flags: Any) -> None:
    """simulate, sample and evaluate in one go."""
    h = _harness(config_file, flags)
    sys.exit(h.run())


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--quick", is_flag=True, default=False, help="Fewer trials and a shorter MH chain")
def oracle(seed: int, quick: bool) -> None:
    """Run the verification suite against brute-force enumeration."""
    results = run_checks(seed=seed, quick=quick)
    click.echo(f"{'check':<56}{'result':>8}{'value':>14}{'threshold':>12}{'seconds':>10}")
    for r in results:
        click.echo(f"{r.name:<56}{'PASS' if r.passed else 'FAIL':>8}{r.value:>14.3e}{r.threshold:>12.1e}{r.seconds:>10.2f}")
    sys.exit(0 if all(r.passed for r in results) else 1)


@main.command("make-data")
@click.option("--kind", type=click.Choice(["stripes", "boxes", "digits", "smooth"]), default="stripes", show_default=True)
@click.option("--n", "count", type=int, default=16, show_default=True)
@click.option("--height", type=int, default=8, show_default=True)
@click.option("--width", type=int, default=8, show_default=True)
@click.option("--channels", type=click.Choice(["1", "3"]), default="1", show_default=True)
@click.option("--K", "levels", type=int, default=2, show_default=True, help="Number of intensity levels")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def make_data(kind: str, count: int, height: int, width: int, channels: str, levels: int, seed: int, out_dir: Path) -> None:
    """Generate a deterministic synthetic dataset with a sha256 manifest."""
    try:
        grid = ImageGrid(height, width, int(channels))
        spec = SyntheticSpec(kind=kind, n=count, grid=grid, K=levels)
        sequences = make_synthetic_dataset(spec, substream(seed))
    except DLPSError as e:
        raise click.ClickException(str(e)) from e
    manifest = write_dataset(out_dir, sequences, grid, VocabSpec.ordinal(levels), seed=seed, kind=kind)
    click.echo(str(manifest))


@main.command("fit-surrogate")
@experiment_options
@click.option("--dim", "d_e", type=int, default=8, show_default=True, help="Embedding dimension")
@click.option("--tau", type=float, default=0.1, show_default=True)
@click.option("--fit-steps", type=int, default=500, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
def fit_surrogate(config_file: Path, d_e: int, tau: float, fit_steps: int, lr: float, out_path: Path, **flags: Any) -> None:
    """Fit linear contrastive encoders on (image, simulated measurement) pairs."""
    h = _harness(config_file, flags)
    sigma = h.cfg.operator.noise_sigma
    pairs = []
    for i, z in enumerate(h.dataset.sequences):
        x = decode(z, h.vocab)
        noise = substream(h.cfg.run.seed, i, NOISE).standard_normal(h.operator.output_dim)
        pairs.append((x, h.operator.apply(x) + sigma * noise))
    fit = infonce_fit(pairs, d_e=d_e, tau=tau, steps=fit_steps, lr=lr, rng=np.random.default_rng(h.cfg.run.seed))
    fit.surrogate.save(out_path)
    click.echo(dump_json({"path": str(out_path), "initial_loss": fit.losses[0], "final_loss": fit.losses[-1], "correct_mass": fit.correct_mass}))


if __name__ == "__main__":
    main()
