import math

import numpy as np
import pytest

from src.dynamics import Direction, SweepRandomness, enumerate_sweep_randomness, sweep, sweep_batch, trial_rng
from src.errors import CapacityError
from src.exactdist import is_doubly_stochastic
from src.exclusion import (
    Configuration,
    colex_rank,
    complement,
    conditional_psi_mean,
    configurations,
    excl_coupling_time,
    excl_exact_kernel,
    excl_exact_tv,
    excl_lower_bound,
    excl_sweep,
    g_height,
    labeled_deck,
    project_permutation,
    psi_excl,
    psi_first_moment_residual,
)
from src.permcore import Permutation
from src.wilson import first_moment_bound


# ── Fixtures ────────────────────────────────────────────────────────────────

@pytest.fixture
def wedge_6_2():
    return Configuration.wedge(6, 2)


# ── Configurations ───────────────────────────────────────────────────────────

def test_configuration_from_string(wedge_6_2):
    assert Configuration.from_string("110000") == wedge_6_2
    assert str(wedge_6_2) == "110000"
    assert wedge_6_2.k == 2


def test_configuration_rejects_bad_string():
    with pytest.raises(ValueError, match="Malformed"):
        Configuration.from_string("0120")


def test_wedge_rejects_bad_k():
    with pytest.raises(ValueError, match="k must lie"):
        Configuration.wedge(4, 5)


def test_projection_and_complement():
    xi = project_permutation(Permutation((3, 1, 4, 2)), 2)
    assert str(xi) == "0101"
    assert complement(Configuration.wedge(6, 2)) == Configuration.anti_wedge(6, 4)


def test_labeled_deck_projects_back():
    xi = Configuration.from_string("0110")
    deck = labeled_deck(xi)
    assert deck.tolist() == [3, 1, 2, 4]
    assert project_permutation(Permutation(tuple(deck)), 2) == xi


# ── Sweeps ───────────────────────────────────────────────────────────────────

def test_two_site_sweep():
    xi = Configuration.from_string("10")
    after = excl_sweep(xi, SweepRandomness(Direction.LEFT_TO_RIGHT, (1,)))
    assert str(after) == "01"
    assert excl_sweep(xi, SweepRandomness(Direction.LEFT_TO_RIGHT, (0,))) == xi


def test_sweep_rejects_bit_count():
    with pytest.raises(ValueError, match="Expected 3 bits"):
        excl_sweep(Configuration.wedge(4, 2), SweepRandomness(Direction.LEFT_TO_RIGHT, (1, 0)))


def test_projection_commutes_with_sweep():
    sigma = Permutation((3, 5, 1, 4, 2))
    for r in enumerate_sweep_randomness(5):
        assert project_permutation(sweep(sigma, r), 2) == excl_sweep(project_permutation(sigma, 2), r)


def test_projection_commutes_with_random_sweeps():
    n, k, trials = 8, 3, 100_000
    rng = trial_rng(31, 0)
    decks = np.stack([rng.permutation(n) + 1 for _ in range(trials)])
    left_to_right = rng.integers(0, 2, size=trials).astype(bool)
    bits = rng.integers(0, 2, size=(trials, n - 1), dtype=np.int8)

    swept = sweep_batch(decks, left_to_right, bits)
    occupied = sweep_batch((decks <= k).astype(np.int64), left_to_right, bits)
    assert np.array_equal((swept <= k).astype(np.int64), occupied)

    for row in range(500):
        sigma = Permutation(tuple(int(v) for v in decks[row]))
        direction = Direction.LEFT_TO_RIGHT if left_to_right[row] else Direction.RIGHT_TO_LEFT
        r = SweepRandomness(direction, tuple(int(b) for b in bits[row]))
        assert project_permutation(sweep(sigma, r), k) == excl_sweep(project_permutation(sigma, k), r)


# ── Height and Ψ ─────────────────────────────────────────────────────────────

def test_wedge_height(wedge_6_2):
    values = g_height(wedge_6_2).values
    assert values.tolist() == pytest.approx([2 / 3, 4 / 3, 1, 2 / 3, 1 / 3, 0])
    assert psi_excl(wedge_6_2) == pytest.approx(1.5 + math.sqrt(3))


def test_empty_configuration_has_zero_psi():
    assert psi_excl(Configuration.wedge(7, 0)) == pytest.approx(0.0)
    assert conditional_psi_mean(Configuration.wedge(7, 0)) == pytest.approx(0.0)


def test_height_averages_to_zero():
    states = configurations(4, 2)
    mean = np.mean([g_height(Configuration(tuple(row))).values for row in states], axis=0)
    assert mean == pytest.approx(np.zeros(4))


def test_psi_first_moment_residual_is_bounded():
    bound = first_moment_bound(8)
    for row in configurations(8, 3):
        assert psi_first_moment_residual(Configuration(tuple(row))) <= bound


# ── Exact kernel ─────────────────────────────────────────────────────────────

def test_configurations_in_colex_order():
    ranks = [colex_rank(Configuration(tuple(row))) for row in configurations(5, 2)]
    assert ranks == list(range(10))
    assert colex_rank(Configuration.from_string("1100")) == 0
    assert colex_rank(Configuration.from_string("0011")) == 5


def test_exclusion_kernel_is_doubly_stochastic():
    kernel = excl_exact_kernel(7, 3)
    assert kernel.size == 35
    assert kernel.denominator == 2 ** 7
    assert is_doubly_stochastic(kernel)


def test_exclusion_kernel_capacity():
    with pytest.raises(CapacityError):
        excl_exact_kernel(20, 10)


def test_two_sites_mix_in_one_sweep():
    assert excl_exact_tv(2, 1, 1)["tv"].tolist() == pytest.approx([0.5, 0.0])


def test_full_occupancy_is_always_mixed():
    assert excl_exact_tv(5, 5, 3)["tv"].tolist() == [0.0] * 4


def test_exact_tv_is_nonincreasing():
    curve = excl_exact_tv(8, 3, 15)
    assert curve["tv"].iloc[0] == pytest.approx(1 - 1 / math.comb(8, 3))
    assert curve["tv"].is_monotonic_decreasing


def test_exact_tv_particle_hole_symmetry():
    assert excl_exact_tv(6, 2, 6)["tv"].tolist() == pytest.approx(excl_exact_tv(6, 4, 6)["tv"].tolist())


# ── Lower bound ──────────────────────────────────────────────────────────────

def test_lower_bound_particle_hole_symmetry():
    low = excl_lower_bound(20, 6, 0.25, c_hat=0.5)
    high = excl_lower_bound(20, 14, 0.25, c_hat=0.5)
    assert low["k_prime"] == high["k_prime"] == 6
    assert low["t_lower"] == pytest.approx(high["t_lower"])


@pytest.mark.parametrize("k", [3, 17])
def test_lower_bound_needs_four_particles(k):
    with pytest.raises(ValueError, match="min\\(k, n-k\\) >= 4"):
        excl_lower_bound(20, k, 0.25, c_hat=0.5)


def test_lower_bound_scales_like_n_squared():
    small = excl_lower_bound(256, 8, 0.25, c_hat=0.5)["t_lower"]
    large = excl_lower_bound(512, 8, 0.25, c_hat=0.5)["t_lower"]
    assert large / small == pytest.approx(4.0, rel=0.05)


def test_lower_bound_increases_with_k():
    bounds = [excl_lower_bound(512, k, 0.25, c_hat=0.5)["t_lower"] for k in (8, 16, 32, 64)]
    assert bounds == sorted(bounds)
    assert len(set(bounds)) == 4


def test_lower_bound_steps():
    sweeps = excl_lower_bound(64, 8, 0.25, c_hat=0.5)
    steps = excl_lower_bound(64, 8, 0.25, c_hat=0.5, units="steps")
    assert steps["t_lower"] == pytest.approx(63 * sweeps["t_lower"])


# ── Coupling ─────────────────────────────────────────────────────────────────

def test_identical_starts_are_coupled():
    table = excl_coupling_time(10, 3, 20, trial_rng(0, 0), [0, 5], start=Configuration.wedge(10, 3))
    assert table["uncoupled"].tolist() == [0.0, 0.0]


def test_coupling_tail_decreases():
    table = excl_coupling_time(12, 4, 200, trial_rng(5, 0), [0, 50, 150, 600])
    assert list(table.columns) == ["sweep", "steps", "uncoupled"]
    assert table["uncoupled"].iloc[0] == 1.0
    assert table["uncoupled"].is_monotonic_decreasing
    assert table["uncoupled"].iloc[-1] <= 0.1
    assert table["steps"].tolist() == [0, 550, 1650, 6600]


def test_coupling_rejects_zero_trials():
    with pytest.raises(ValueError, match="trials must be positive"):
        excl_coupling_time(8, 2, 0, trial_rng(0, 0), [1])
