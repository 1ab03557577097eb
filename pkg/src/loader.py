import json
import logging
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from src import __version__
from src.config import get_cache_dir
from src.dynamics import Trajectory
from src.exactdist import SweepKernel, build_sweep_kernel
from src.observables import observable_columns
from src.permcore import ExactDistribution

logger = logging.getLogger(__name__)

LIBRARY = "catmix"


def _encode_number(value):
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    return float(value)


def _decode_number(value):
    if isinstance(value, str):
        try:
            return Fraction(value)
        except ValueError:
            raise ValueError(f"Malformed probability {value!r}") from None
    return float(value)


def _to_json(value):
    """json.dump fallback for numpy scalars, Fractions, sets and paths."""
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


# ── Distributions ─────────────────────────────────────────────────────────────

def save_distribution(nu: ExactDistribution, path: str | Path) -> None:
    """
    Writes {n, ordering, ranks, probs} with only the nonzero ranks.
    Exact probabilities are stored as "p/q" strings.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ranks = [rank for rank, p in enumerate(nu.probs) if p != 0]
    payload = {
        "n": nu.n,
        "ordering": "lehmer",
        "ranks": ranks,
        "probs": [_encode_number(nu.probs[rank]) for rank in ranks],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)


def load_distribution(path: str | Path) -> ExactDistribution:
    """
    Reads a distribution written by save_distribution.

    Raises:
        FileNotFoundError: If the file doesn't exist.
        ValueError: If ranks and probabilities disagree or fall out of range.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Distribution file not found: {path}")

    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)

    n = int(data["n"])
    ranks, probs = data["ranks"], [_decode_number(p) for p in data["probs"]]
    if len(ranks) != len(probs):
        raise ValueError(f"{path} lists {len(ranks)} ranks but {len(probs)} probabilities")

    exact = all(isinstance(p, Fraction) for p in probs)
    size = math.factorial(n)
    values = [Fraction(0) if exact else 0.0] * size
    for rank, p in zip(ranks, probs):
        if not 0 <= rank < size:
            raise ValueError(f"Rank {rank} out of range for n={n}")
        values[rank] = p
    return ExactDistribution(n, tuple(values))


# ── Kernels and their cache ───────────────────────────────────────────────────

def kernel_to_dict(kernel: SweepKernel) -> dict:
    counts = kernel.counts.tocsr()
    rows = []
    for i in range(counts.shape[0]):
        start, end = counts.indptr[i], counts.indptr[i + 1]
        rows.append([[int(c), int(v)] for c, v in zip(counts.indices[start:end], counts.data[start:end])])
    return {
        "n": kernel.n,
        "model": kernel.model,
        "ordering": "lehmer",
        "denominator": kernel.denominator,
        "censored": sorted(kernel.censored),
        "rows": rows,
    }


def kernel_from_dict(data: dict) -> SweepKernel:
    rows = data["rows"]
    row_index, col_index, values = [], [], []
    for i, entries in enumerate(rows):
        for col, count in entries:
            row_index.append(i)
            col_index.append(col)
            values.append(count)
    counts = sp.csr_matrix(
        (np.array(values, dtype=np.int64), (np.array(row_index), np.array(col_index))),
        shape=(len(rows), len(rows)),
    )
    return SweepKernel(int(data["n"]), data["model"], counts, int(data["denominator"]), frozenset(data["censored"]))


def save_kernel(kernel: SweepKernel, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(kernel_to_dict(kernel), f)


def load_kernel(path: str | Path) -> SweepKernel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Kernel file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return kernel_from_dict(json.load(f))


def kernel_cache_path(n: int, model: str, censored: frozenset[int] = frozenset(), cache_dir=None) -> Path:
    cache_dir = Path(cache_dir) if cache_dir else get_cache_dir()
    edges = "-".join(str(e) for e in sorted(censored)) or "none"
    return cache_dir / f"kernel_{model}_n{n}_c{edges}.json"


def cached_sweep_kernel(
    n: int, model: str = "cat", censored: frozenset[int] = frozenset(), cache_dir=None
) -> SweepKernel:
    """Loads the kernel from the cache directory, building and saving it on a miss."""
    path = kernel_cache_path(n, model, censored, cache_dir)
    if path.exists():
        logger.info("Kernel cache hit", extra={"path": str(path)})
        return load_kernel(path)

    logger.info("Kernel cache miss", extra={"path": str(path)})
    kernel = build_sweep_kernel(n, model, censored)
    save_kernel(kernel, path)
    return kernel


# ── Trajectories ──────────────────────────────────────────────────────────────

def save_trajectory(trajectory: Trajectory, path: str | Path) -> None:
    """One JSON line per sweep: {sweep, state, phi, height_l2, height_max}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    states = np.stack([sigma.as_array() for sigma in trajectory.states])
    columns = observable_columns(states)

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sweep, sigma in enumerate(trajectory.states):
            record = {
                "sweep": sweep,
                "state": str(sigma),
                "phi": float(columns["phi"][sweep]),
                "height_l2": float(columns["height_l2"][sweep]),
                "height_max": float(columns["height_max"][sweep]),
            }
            f.write(json.dumps(record) + "\n")


def load_trajectory_files(directory: str | Path) -> pd.DataFrame:
    """
    Loads and combines every trajectory_*.jsonl file in a directory.

    Args:
        directory: Folder containing the trajectory files.

    Returns:
        One DataFrame with a source column naming the originating file.

    Raises:
        FileNotFoundError: If the directory doesn't exist.
        ValueError: If no trajectory files are found.
    """
    directory = Path(directory)

    if not directory.exists():
        raise FileNotFoundError(f"Trajectory directory not found: {directory}")

    files = sorted(directory.glob("trajectory_*.jsonl"))

    if not files:
        raise ValueError(f"No trajectory files found in {directory}")

    dataframes = []

    for file in files:
        frame = pd.read_json(file, lines=True)
        frame["source"] = file.name
        dataframes.append(frame)

    return pd.concat(dataframes, ignore_index=True)


# ── Reports ───────────────────────────────────────────────────────────────────

def build_meta(subcommand: str, units: str) -> dict:
    return {"library": LIBRARY, "version": __version__, "units": units, "subcommand": subcommand}


def write_report(rows, path: str | Path, fmt: str, meta: dict, config: dict) -> Path:
    """
    Writes rows as CSV (with a <path>.meta.json sidecar holding meta and config)
    or as JSON {meta, config, rows}.

    Args:
        rows: DataFrame or list of dicts.
        path: Output file.
        fmt: "csv" or "json".
        meta: Library, version, units and subcommand.
        config: The resolved experiment configuration.

    Returns:
        The path written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))

    if fmt == "csv":
        frame.to_csv(path, index=False, lineterminator="\n")
        sidecar = path.with_name(path.name + ".meta.json")
        with open(sidecar, "w", encoding="utf-8", newline="\n") as f:
            json.dump({"meta": meta, "config": config}, f, indent=2, default=_to_json)
            f.write("\n")
    elif fmt == "json":
        payload = {"meta": meta, "config": config, "rows": frame.to_dict(orient="records")}
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, default=_to_json)
            f.write("\n")
    else:
        raise ValueError(f"Unknown report format {fmt!r}; expected 'csv' or 'json'")

    logger.info("Wrote report", extra={"path": str(path), "rows": len(frame)})
    return path


def load_report(path: str | Path) -> tuple[pd.DataFrame, dict]:
    """Reads a report back as (rows, {meta, config})."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Report not found: {path}")
    if path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        return pd.DataFrame(payload["rows"]), {"meta": payload["meta"], "config": payload["config"]}

    with open(path.with_name(path.name + ".meta.json"), "r", encoding="utf-8") as f:
        header = json.load(f)
    return pd.read_csv(path), header
