"""
Command-line experiment runner.

Every subcommand resolves to an ExperimentConfig, and run(config) turns a
config into one report file. The same config and seed always produce the same
bytes, whatever CATMIX_THREADS is set to.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import click
import numpy as np
import pandas as pd
import yaml

from src.analysis import mean_with_stderr
from src.config import configure_logging, get_thread_count
from src.decay import decay_table
from src.dynamics import MODELS, CensoringScheme, Trajectory, evolve_batch, trial_rng
from src.errors import CapacityError, InvariantError
from src.exactdist import censoring_compare, tv_curve
from src.exclusion import excl_coupling_time, excl_exact_tv, excl_lower_bound
from src.loader import build_meta, cached_sweep_kernel, save_trajectory, write_report
from src.observables import observable_columns
from src.permcore import Permutation
from src.walks import killed_srw_kernel, spectrum_report, srw_survival_bound, survival_curve
from src.wilson import cat_lower_bound

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate", "tv-exact", "censor-check", "spectrum", "survival", "decay", "wilson", "excl", "couple")
TRIAL_CHUNK = 64

# options each subcommand accepts, by config field name
SUBCOMMAND_FIELDS = {
    "simulate": ("n", "model", "sweeps", "trials", "seed", "start", "dump_dir", "output", "fmt"),
    "tv-exact": ("n", "model", "sweeps", "seed", "start", "output", "fmt"),
    "censor-check": ("n", "sweeps", "scheme", "seed", "output", "fmt"),
    "spectrum": ("n", "seed", "output", "fmt"),
    "survival": ("n", "thetas", "seed", "output", "fmt"),
    "decay": ("n", "sweeps", "delta", "y", "seed", "output", "fmt"),
    "wilson": ("n", "eps", "units", "c_hat", "seed", "output", "fmt"),
    "excl": ("n", "k", "mode", "sweeps", "eps", "units", "c_hat", "seed", "output", "fmt"),
    "couple": ("n", "k", "trials", "sweeps", "points", "seed", "output", "fmt"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment; seed is always present."""
    subcommand: str
    n: int
    seed: int = 0
    k: int | None = None
    model: str = "cat"
    sweeps: int | None = None
    trials: int | None = None
    scheme: str = "none"
    eps: float = 0.25
    delta: float = 0.2
    units: str = "sweeps"
    y: int | None = None
    thetas: tuple[float, ...] = (1.0, 2.0, 4.0)
    c_hat: float | None = None
    mode: str = "tv"
    points: int = 10
    start: str | None = None
    dump_dir: str | None = None
    output: str | None = None
    fmt: str = "csv"

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"Unknown subcommand {self.subcommand!r}")
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["thetas"] = list(self.thetas)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown config keys: {unknown}")
        return cls(**data)

    def to_argv(self) -> list[str]:
        """Command-line arguments that parse back to this config."""
        argv = [self.subcommand]
        for name in SUBCOMMAND_FIELDS[self.subcommand]:
            value = getattr(self, name)
            if value is None:
                continue
            if name == "thetas":
                for theta in value:
                    argv += ["--theta", repr(theta)]
            else:
                argv += [_option_name(name), str(value)]
        return argv

    def output_path(self) -> Path:
        if self.output:
            return Path(self.output)
        return Path("outputs") / f"{self.subcommand}_n{self.n}.{self.fmt}"

    def censoring(self) -> CensoringScheme:
        return CensoringScheme.parse(self.scheme, self.n, self.sweeps)


# ── Parsing ───────────────────────────────────────────────────────────────────

def _finish(ctx: click.Context, subcommand: str, **options):
    options = {k: v for k, v in options.items() if v is not None and v != ()}
    if "fmt" not in options:
        options["fmt"] = "json" if subcommand == "wilson" else "csv"
    config = ExperimentConfig(subcommand=subcommand, **options)

    if subcommand == "censor-check":
        try:
            config.censoring()
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--scheme") from None
    if config.start:
        try:
            start = Permutation.from_string(config.start)
        except ValueError as e:
            raise click.BadParameter(str(e), param_hint="--start") from None
        if start.n != config.n:
            raise click.BadParameter(f"start has n={start.n}, expected {config.n}", param_hint="--start")

    if (ctx.obj or {}).get("parse_only"):
        return config
    path = run(config)
    click.echo(str(path))
    return config


def _common(func):
    func = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None)(func)
    func = click.option("--output", type=click.Path(dir_okay=False), default=None)(func)
    func = click.option("--seed", type=int, default=0, show_default=True)(func)
    func = click.option("--n", type=click.IntRange(min=2), required=True)(func)
    return click.pass_context(func)


@click.group()
def cli():
    """Experiments on the cyclic adjacent transposition shuffle."""


@cli.command()
@_common
@click.option("--model", type=click.Choice(MODELS), default="cat", show_default=True)
@click.option("--sweeps", type=click.IntRange(min=1), required=True)
@click.option("--trials", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--start", default=None, help='One-line start state, e.g. "[2,1,3]"; identity by default.')
@click.option("--dump-dir", type=click.Path(file_okay=False), default=None,
              help="Also write one trajectory_<trial>.jsonl per trial here.")
def simulate(ctx, **options):
    """Per-sweep mean observables over independent trajectories."""
    return _finish(ctx, "simulate", **options)


@cli.command("tv-exact")
@_common
@click.option("--model", type=click.Choice(MODELS), default="cat", show_default=True)
@click.option("--sweeps", type=click.IntRange(min=0), required=True)
@click.option("--start", default=None)
def tv_exact(ctx, **options):
    """Exact TV to uniform from a point mass."""
    return _finish(ctx, "tv-exact", **options)


@cli.command("censor-check")
@_common
@click.option("--sweeps", type=click.IntRange(min=0), required=True)
@click.option("--scheme", default="none", show_default=True)
def censor_check(ctx, **options):
    """Plain against censored exact TV, sweep by sweep."""
    return _finish(ctx, "censor-check", **options)


@cli.command()
@_common
def spectrum(ctx, **options):
    """Eigenvalues of the killed simple random walk."""
    return _finish(ctx, "spectrum", **options)


@cli.command()
@_common
@click.option("--theta", "thetas", type=float, multiple=True)
def survival(ctx, **options):
    """Exact survival of the killed walk at θn² steps against its envelope."""
    return _finish(ctx, "survival", **options)


@cli.command()
@_common
@click.option("--sweeps", type=click.IntRange(min=0), required=True)
@click.option("--delta", type=float, default=0.2, show_default=True)
@click.option("--y", type=int, default=None)
def decay(ctx, **options):
    """Decay of the expected σ̃ rows from the identity."""
    return _finish(ctx, "decay", **options)


@cli.command()
@_common
@click.option("--eps", type=float, default=0.25, show_default=True)
@click.option("--units", type=click.Choice(["sweeps", "steps"]), default="sweeps", show_default=True)
@click.option("--c-hat", "c_hat", type=float, default=None)
def wilson(ctx, **options):
    """Lower bound on the CAT mixing time."""
    return _finish(ctx, "wilson", **options)


@cli.command()
@_common
@click.option("--k", type=click.IntRange(min=0), required=True)
@click.option("--mode", type=click.Choice(["tv", "bound"]), default="tv", show_default=True)
@click.option("--sweeps", type=click.IntRange(min=0), default=None)
@click.option("--eps", type=float, default=0.25, show_default=True)
@click.option("--units", type=click.Choice(["sweeps", "steps"]), default="sweeps", show_default=True)
@click.option("--c-hat", "c_hat", type=float, default=None)
def excl(ctx, **options):
    """Exact exclusion TV from the wedge, or the exclusion lower bound."""
    if options["mode"] == "tv" and options["sweeps"] is None:
        raise click.UsageError("excl --mode tv needs --sweeps")
    return _finish(ctx, "excl", **options)


@cli.command()
@_common
@click.option("--k", type=click.IntRange(min=1), required=True)
@click.option("--trials", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--sweeps", type=click.IntRange(min=1), required=True)
@click.option("--points", type=click.IntRange(min=1), default=10, show_default=True)
def couple(ctx, **options):
    """Uncoupled fraction of wedge/anti-wedge exclusion pairs."""
    return _finish(ctx, "couple", **options)


def parse_config(source) -> ExperimentConfig:
    """
    Resolves an argv list or a YAML file path into an ExperimentConfig.

    Raises:
        click.UsageError: For unknown flags, missing required options or
            malformed values.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if "subcommand" not in data:
            raise click.UsageError(f"{source} does not name a subcommand")
        argv = _argv_from_mapping(data)
    else:
        argv = list(source)
    return cli.main(args=argv, prog_name="catmix", standalone_mode=False, obj={"parse_only": True})


def _argv_from_mapping(data: dict) -> list[str]:
    data = dict(data)
    argv = [data.pop("subcommand")]
    for key, value in data.items():
        if value is None:
            continue
        if key == "thetas":
            for theta in value:
                argv += ["--theta", str(theta)]
            continue
        argv += [_option_name(key), str(value)]
    return argv


def _option_name(key: str) -> str:
    return "--format" if key in ("fmt", "format") else "--" + key.replace("_", "-")


# ── Running ───────────────────────────────────────────────────────────────────

def _start_state(config: ExperimentConfig) -> Permutation:
    return Permutation.from_string(config.start) if config.start else Permutation.identity(config.n)


def _simulate_chunk(config: ExperimentConfig, first_trial: int, trials: int) -> list[dict]:
    starts = np.repeat(_start_state(config).as_array()[None, :], trials, axis=0)
    columns = [observable_columns(starts)]
    history = [starts] if config.dump_dir else None
    for _, states in evolve_batch(starts, config.seed, config.sweeps, config.model, first_trial):
        columns.append(observable_columns(states))
        if history is not None:
            history.append(states)
    if history is not None:
        _dump_trajectories(config, first_trial, np.stack(history, axis=1))
    return columns


def _dump_trajectories(config: ExperimentConfig, first_trial: int, paths: np.ndarray) -> None:
    """paths[r, s] is the state of trial first_trial + r after s sweeps."""
    for r, rows in enumerate(paths):
        trial = first_trial + r
        states = tuple(Permutation(tuple(int(v) for v in row)) for row in rows)
        trajectory = Trajectory(states, config.seed, trial, config.model)
        save_trajectory(trajectory, Path(config.dump_dir) / f"trajectory_{trial}.jsonl")


def _run_simulate(config: ExperimentConfig) -> tuple[pd.DataFrame, str]:
    chunks = [(first, min(TRIAL_CHUNK, config.trials - first)) for first in range(0, config.trials, TRIAL_CHUNK)]
    with ThreadPoolExecutor(max_workers=get_thread_count()) as pool:
        results = list(pool.map(lambda c: _simulate_chunk(config, *c), chunks))

    rows = []
    for s in range(config.sweeps + 1):
        phi = np.concatenate([chunk[s]["phi"] for chunk in results])
        height_l2 = np.concatenate([chunk[s]["height_l2"] for chunk in results])
        height_max = np.concatenate([chunk[s]["height_max"] for chunk in results])
        summary = mean_with_stderr(phi)
        rows.append({
            "sweep": s,
            "steps": (config.n - 1) * s,
            "mean_phi": summary["mean"],
            "stderr_phi": summary["stderr"],
            "mean_height_l2": float(height_l2.mean()),
            "mean_height_max": float(height_max.mean()),
        })
    return pd.DataFrame(rows), "sweeps"


def _run_spectrum(config: ExperimentConfig) -> tuple[pd.DataFrame, str]:
    report = spectrum_report(config.n)
    rows = pd.DataFrame({"j": range(1, len(report["eigenvalues"]) + 1), "eigenvalue": report["eigenvalues"]})
    rows["gram_residual"] = report["gram_residual"]
    rows["eigen_residual_max"] = report["eigen_residual_max"]
    rows["symmetric_residual"] = report["symmetric_residual"]
    return rows, "none"


def _run_survival(config: ExperimentConfig) -> tuple[pd.DataFrame, str]:
    kernel = killed_srw_kernel(config.n)
    steps = [int(math.floor(theta * config.n ** 2)) for theta in config.thetas]
    curve = survival_curve(kernel, max(steps))
    rows = [
        {"theta": theta, "steps": t, "survival": float(curve[t]), "bound": srw_survival_bound(theta)}
        for theta, t in zip(config.thetas, steps)
    ]
    return pd.DataFrame(rows), "steps"


def _run_excl(config: ExperimentConfig) -> tuple[pd.DataFrame, str]:
    if config.mode == "bound":
        report = excl_lower_bound(config.n, config.k, config.eps, config.c_hat, config.units)
        return pd.DataFrame([report]), config.units
    return excl_exact_tv(config.n, config.k, config.sweeps), "sweeps"


def _run_couple(config: ExperimentConfig) -> tuple[pd.DataFrame, str]:
    grid = np.unique(np.linspace(0, config.sweeps, config.points + 1).round().astype(int))
    return excl_coupling_time(config.n, config.k, config.trials, trial_rng(config.seed, 0), grid), "sweeps"


RUNNERS = {
    "simulate": _run_simulate,
    "tv-exact": lambda c: (tv_curve(c.n, c.sweeps, _start_state(c), c.model, cached_sweep_kernel), "sweeps"),
    "censor-check": lambda c: (
        censoring_compare(c.n, c.censoring(), c.sweeps, builder=cached_sweep_kernel), "sweeps"
    ),
    "spectrum": _run_spectrum,
    "survival": _run_survival,
    "decay": lambda c: (decay_table(c.n, c.sweeps, c.delta, c.y), "sweeps"),
    "wilson": lambda c: (pd.DataFrame([cat_lower_bound(c.n, c.eps, c.c_hat, c.units)]), c.units),
    "excl": _run_excl,
    "couple": _run_couple,
}


def run(config: ExperimentConfig) -> Path:
    """Runs one experiment and writes its report; returns the report path."""
    logger.info("Running experiment", extra={"config": config.to_dict()})
    rows, units = RUNNERS[config.subcommand](config)
    path = config.output_path()
    return write_report(rows, path, config.fmt, build_meta(config.subcommand, units), config.to_dict())


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    configure_logging()
    try:
        result = cli.main(args=argv, prog_name="catmix", standalone_mode=False, obj={})
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted.", err=True)
        return 1
    except CapacityError as e:
        click.echo(f"Capacity error: {e}", err=True)
        return 3
    except InvariantError as e:
        click.echo(f"Invariant failed: {e}", err=True)
        return 4
    except ValueError as e:
        click.UsageError(str(e)).show()
        return 2
    return result if isinstance(result, int) else 0
