import json
from fractions import Fraction

import pandas as pd
import pytest

from src.dynamics import simulate_trajectory, trial_rng
from src.exactdist import build_sweep_kernel, kernels_equal, random_distribution
from src.loader import (
    build_meta,
    cached_sweep_kernel,
    kernel_cache_path,
    load_distribution,
    load_kernel,
    load_report,
    load_trajectory_files,
    save_distribution,
    save_kernel,
    save_trajectory,
    write_report,
)
from src.permcore import ExactDistribution, Permutation


# ── Fixtures ────────────────────────────────────────────────────────────────

@pytest.fixture
def trajectory_dir(tmp_path):
    """Two short trajectories written the way the simulator writes them."""
    for trial in (0, 1):
        trajectory = simulate_trajectory(Permutation.identity(5), 3, seed=7, trial=trial)
        save_trajectory(trajectory, tmp_path / f"trajectory_{trial}.jsonl")
    return tmp_path


# ── Distributions ────────────────────────────────────────────────────────────

def test_distribution_keeps_exact_probabilities(tmp_path):
    nu = random_distribution(4, trial_rng(3, 0))
    path = tmp_path / "nu.json"
    save_distribution(nu, path)
    assert load_distribution(path) == nu


def test_distribution_stores_fraction_strings(tmp_path):
    path = tmp_path / "point.json"
    save_distribution(ExactDistribution.point_mass(Permutation((2, 1, 3))), path)
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data == {"n": 3, "ordering": "lehmer", "ranks": [2], "probs": ["1/1"]}


def test_distribution_rejects_bad_rank(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n": 3, "ranks": [9], "probs": ["1/1"]}), encoding="utf-8")
    with pytest.raises(ValueError, match="out of range"):
        load_distribution(path)


def test_distribution_rejects_length_mismatch(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n": 3, "ranks": [0, 1], "probs": ["1/2"]}), encoding="utf-8")
    with pytest.raises(ValueError, match="lists 2 ranks"):
        load_distribution(path)


def test_load_distribution_raises_if_missing():
    with pytest.raises(FileNotFoundError):
        load_distribution("nonexistent/nu.json")


# ── Kernels ──────────────────────────────────────────────────────────────────

def test_kernel_file_keeps_counts(tmp_path):
    kernel = build_sweep_kernel(4, "single")
    save_kernel(kernel, tmp_path / "single.json")
    loaded = load_kernel(tmp_path / "single.json")
    assert kernels_equal(loaded, kernel)
    assert loaded.model == "single"


def test_kernel_cache_path_names_censored_edges(tmp_path):
    path = kernel_cache_path(5, "monotone", frozenset({3, 1}), cache_dir=tmp_path)
    assert path.name == "kernel_monotone_n5_c1-3.json"
    assert kernel_cache_path(5, "cat", cache_dir=tmp_path).name == "kernel_cat_n5_cnone.json"


def test_cached_kernel_is_built_once(tmp_path):
    first = cached_sweep_kernel(4, cache_dir=tmp_path)
    assert (tmp_path / "kernel_cat_n4_cnone.json").exists()
    assert kernels_equal(cached_sweep_kernel(4, cache_dir=tmp_path), first)


# ── Trajectories ─────────────────────────────────────────────────────────────

def test_load_trajectories_combines_files(trajectory_dir):
    frame = load_trajectory_files(trajectory_dir)
    assert len(frame) == 8
    assert set(frame["source"]) == {"trajectory_0.jsonl", "trajectory_1.jsonl"}
    assert frame["state"].iloc[0] == "[1,2,3,4,5]"


def test_trajectory_records_observables(trajectory_dir):
    line = (trajectory_dir / "trajectory_0.jsonl").read_text(encoding="utf-8").splitlines()[0]
    assert set(json.loads(line)) == {"sweep", "state", "phi", "height_l2", "height_max"}


def test_load_raises_if_path_missing():
    with pytest.raises(FileNotFoundError):
        load_trajectory_files("nonexistent/path")


def test_load_raises_if_no_trajectories(tmp_path):
    with pytest.raises(ValueError, match="No trajectory files"):
        load_trajectory_files(tmp_path)


# ── Reports ──────────────────────────────────────────────────────────────────

def test_csv_report_and_sidecar(tmp_path):
    rows = pd.DataFrame({"sweep": [0, 1], "tv": [5 / 6, 0.5]})
    meta = build_meta("tv-exact", "sweeps")
    path = write_report(rows, tmp_path / "tv.csv", "csv", meta, {"n": 3})
    assert path.read_text(encoding="utf-8").startswith("sweep,tv\n0,")

    frame, header = load_report(path)
    assert frame["sweep"].tolist() == [0, 1]
    assert header == {"meta": meta, "config": {"n": 3}}


def test_json_report_serializes_fractions(tmp_path):
    path = write_report([{"p": Fraction(1, 3)}], tmp_path / "r.json", "json", build_meta("decay", "sweeps"), {})
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["rows"] == [{"p": "1/3"}]


def test_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="Unknown report format"):
        write_report([], tmp_path / "r.txt", "xml", build_meta("decay", "sweeps"), {})
