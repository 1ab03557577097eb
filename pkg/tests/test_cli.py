import json
from unittest.mock import patch

import click
import pytest

from src.cli import ExperimentConfig, main, parse_config, run
from src.dynamics import simulate_trajectory
from src.loader import load_trajectory_files
from src.permcore import Permutation


# ── Fixtures ────────────────────────────────────────────────────────────────

@pytest.fixture
def simulate_config(tmp_path):
    return ExperimentConfig(
        subcommand="simulate", n=6, seed=11, sweeps=4, trials=150, output=str(tmp_path / "sim.csv")
    )


# ── Parsing ──────────────────────────────────────────────────────────────────

def test_parse_argv():
    config = parse_config(["simulate", "--n", "8", "--sweeps", "5", "--seed", "3"])
    assert config.subcommand == "simulate"
    assert config.n == 8
    assert config.sweeps == 5
    assert config.trials == 100
    assert config.fmt == "csv"


def test_parse_wilson_defaults_to_json():
    assert parse_config(["wilson", "--n", "64"]).fmt == "json"


def test_parse_survival_thetas():
    config = parse_config(["survival", "--n", "10", "--theta", "0.5", "--theta", "3"])
    assert config.thetas == (0.5, 3.0)
    assert parse_config(["survival", "--n", "10"]).thetas == (1.0, 2.0, 4.0)


def test_parse_yaml(tmp_path):
    path = tmp_path / "experiment.yaml"
    path.write_text("subcommand: decay\nn: 12\nsweeps: 30\ny: 4\nformat: json\n", encoding="utf-8")
    config = parse_config(path)
    assert config == ExperimentConfig(subcommand="decay", n=12, sweeps=30, y=4, fmt="json")


def test_parse_yaml_needs_subcommand(tmp_path):
    path = tmp_path / "experiment.yaml"
    path.write_text("n: 12\n", encoding="utf-8")
    with pytest.raises(click.UsageError, match="subcommand"):
        parse_config(path)


def test_config_round_trips_through_argv():
    config = ExperimentConfig(subcommand="excl", n=20, k=6, mode="bound", eps=0.1, c_hat=0.75, seed=4)
    assert parse_config(config.to_argv()) == config


def test_missing_n_is_usage_error():
    with pytest.raises(click.UsageError):
        parse_config(["spectrum"])


def test_bad_scheme_is_usage_error():
    with pytest.raises(click.UsageError, match="scheme"):
        parse_config(["censor-check", "--n", "5", "--sweeps", "3", "--scheme", "edges=9"])


def test_start_must_match_n():
    with pytest.raises(click.UsageError, match="start"):
        parse_config(["tv-exact", "--n", "4", "--sweeps", "2", "--start", "[2,1,3]"])


def test_excl_tv_needs_sweeps():
    with pytest.raises(click.UsageError, match="needs --sweeps"):
        parse_config(["excl", "--n", "8", "--k", "3"])


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="Unknown config keys"):
        ExperimentConfig.from_dict({"subcommand": "spectrum", "n": 5, "colour": "red"})


def test_default_output_path():
    config = ExperimentConfig(subcommand="spectrum", n=16)
    assert str(config.output_path()) == "outputs/spectrum_n16.csv"


# ── Exit codes ───────────────────────────────────────────────────────────────

def test_main_usage_error_exit_code():
    assert main(["simulate", "--sweeps", "3"]) == 2


def test_main_capacity_exit_code(tmp_path):
    assert main(["tv-exact", "--n", "9", "--sweeps", "1", "--output", str(tmp_path / "tv.csv")]) == 3


@pytest.mark.parametrize(
    "argv",
    [
        ["excl", "--mode", "bound", "--n", "20", "--k", "2"],
        ["wilson", "--n", "4"],
        ["decay", "--n", "8", "--sweeps", "3", "--y", "99"],
    ],
    ids=["excl-few-particles", "wilson-small-deck", "decay-bad-label"],
)
def test_main_rejected_values_exit_code(argv, tmp_path, capsys):
    assert main(argv + ["--output", str(tmp_path / "report.csv")]) == 2
    assert "Error" in capsys.readouterr().err
    assert not (tmp_path / "report.csv").exists()


def test_main_success(tmp_path):
    output = tmp_path / "spectrum.csv"
    assert main(["spectrum", "--n", "8", "--output", str(output)]) == 0
    assert output.exists()


# ── Running ──────────────────────────────────────────────────────────────────

def test_run_writes_csv_and_sidecar(simulate_config):
    path = run(simulate_config)
    lines = path.read_text(encoding="utf-8").split("\n")
    assert lines[0] == "sweep,steps,mean_phi,stderr_phi,mean_height_l2,mean_height_max"
    assert len([line for line in lines if line]) == 6

    sidecar = json.loads(path.with_name(path.name + ".meta.json").read_text(encoding="utf-8"))
    assert sidecar["meta"] == {"library": "catmix", "version": "0.1.0", "units": "sweeps", "subcommand": "simulate"}
    assert sidecar["config"]["seed"] == 11


def test_run_is_deterministic(simulate_config, tmp_path):
    first = run(simulate_config).read_bytes()
    again = ExperimentConfig.from_dict({**simulate_config.to_dict(), "output": str(tmp_path / "again.csv")})
    assert run(again).read_bytes() == first


def test_run_ignores_thread_count(simulate_config, tmp_path):
    with patch.dict("os.environ", {"CATMIX_THREADS": "1"}):
        single = run(simulate_config).read_bytes()
    other = ExperimentConfig.from_dict({**simulate_config.to_dict(), "output": str(tmp_path / "threads.csv")})
    with patch.dict("os.environ", {"CATMIX_THREADS": "4"}):
        assert run(other).read_bytes() == single


def test_run_json_report(tmp_path):
    config = ExperimentConfig(subcommand="excl", n=6, k=2, sweeps=3, output=str(tmp_path / "excl.json"), fmt="json")
    payload = json.loads(run(config).read_text(encoding="utf-8"))
    assert set(payload) == {"meta", "config", "rows"}
    assert [row["sweep"] for row in payload["rows"]] == [0, 1, 2, 3]
    assert "timestamp" not in payload["meta"]


def test_run_survival_report(tmp_path):
    config = ExperimentConfig(subcommand="survival", n=10, output=str(tmp_path / "survival.csv"))
    rows = run(config).read_text(encoding="utf-8").splitlines()
    assert rows[0] == "theta,steps,survival,bound"
    assert rows[1].startswith("1.0,100,")


def test_simulate_dumps_trajectories(tmp_path):
    dump = tmp_path / "trajectories"
    argv = ["simulate", "--n", "5", "--sweeps", "3", "--trials", "70", "--seed", "2",
            "--dump-dir", str(dump), "--output", str(tmp_path / "sim.csv")]
    assert main(argv) == 0

    frame = load_trajectory_files(dump)
    assert len(frame) == 70 * 4
    expected = simulate_trajectory(Permutation.identity(5), 3, seed=2, trial=69)
    last = (dump / "trajectory_69.jsonl").read_text(encoding="utf-8").splitlines()[-1]
    assert json.loads(last)["state"] == str(expected.states[-1])


def test_dump_dir_round_trips_through_argv(tmp_path):
    config = ExperimentConfig(subcommand="simulate", n=6, sweeps=2, trials=3, dump_dir=str(tmp_path))
    assert parse_config(config.to_argv()) == config


def test_exact_runs_fill_the_kernel_cache(tmp_path):
    cache = tmp_path / "kernels"
    with patch.dict("os.environ", {"CATMIX_CACHE_DIR": str(cache)}):
        assert main(["tv-exact", "--n", "4", "--sweeps", "3", "--output", str(tmp_path / "tv.csv")]) == 0
        assert main(["censor-check", "--n", "4", "--sweeps", "3", "--scheme", "edges=2;windows=0-2",
                     "--output", str(tmp_path / "censor.csv")]) == 0
    assert sorted(p.name for p in cache.iterdir()) == [
        "kernel_cat_n4_cnone.json",
        "kernel_monotone_n4_c2.json",
        "kernel_monotone_n4_cnone.json",
    ]


def test_cached_kernel_gives_same_report(tmp_path):
    with patch.dict("os.environ", {"CATMIX_CACHE_DIR": str(tmp_path / "kernels")}):
        first = run(ExperimentConfig(subcommand="tv-exact", n=4, sweeps=5, output=str(tmp_path / "a.csv")))
        again = run(ExperimentConfig(subcommand="tv-exact", n=4, sweeps=5, output=str(tmp_path / "b.csv")))
    assert first.read_bytes() == again.read_bytes()
