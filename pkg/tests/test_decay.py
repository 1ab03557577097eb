from fractions import Fraction

import numpy as np
import pytest

from src.decay import (
    DecayVector,
    as_kind,
    boundary_leak,
    d_matrix,
    d_step,
    decay_bound_check,
    decay_table,
    difference,
    evolve,
    fitted_decay_rate,
    sigma_tilde_start,
    u_matrix,
    u_step,
    vbar_matrix,
    vbar_step,
)
from src.exactdist import expected_sigma_tilde_after_sweep
from src.permcore import Permutation
from src.walks import killed_x_kernel


# ── Fixtures ────────────────────────────────────────────────────────────────

@pytest.fixture
def mixed_sigma():
    return Permutation((3, 5, 1, 4, 2))


# ── Vectors ──────────────────────────────────────────────────────────────────

def test_vector_length_is_checked():
    with pytest.raises(ValueError, match="has 4 entries"):
        DecayVector(5, "vbar", np.zeros(5))


def test_vector_kind_is_checked():
    with pytest.raises(ValueError, match="Unknown decay vector kind"):
        DecayVector(5, "w", np.zeros(4))


def test_step_rejects_wrong_kind():
    with pytest.raises(ValueError, match="Expected a u vector"):
        u_step(sigma_tilde_start(5, 2))


# ── One-sweep recursion ──────────────────────────────────────────────────────

def test_vbar_small_deck_by_hand():
    # identity, y = 1: σ̃(·, 1) = (2/3, 1/3)
    after = vbar_step(sigma_tilde_start(3, 1))
    assert after.values.tolist() == [Fraction(1, 6), Fraction(5, 24)]


def test_vbar_matches_enumeration(mixed_sigma):
    for sigma in (Permutation.identity(5), mixed_sigma):
        expected = expected_sigma_tilde_after_sweep(sigma).values
        for y in range(1, 5):
            after = vbar_step(sigma_tilde_start(5, y, sigma))
            assert after.values.tolist() == list(expected[:4, y - 1])


def test_vbar_matrix_trivial_deck():
    assert vbar_matrix(2).shape == (1, 1)
    assert vbar_matrix(2)[0, 0] == 0


def test_vbar_is_dominated_by_u():
    for y in range(1, 6):
        vbar_path = evolve(sigma_tilde_start(6, y), 8)
        u_path = evolve(as_kind(sigma_tilde_start(6, y), "u"), 8)
        for v, u in zip(vbar_path, u_path):
            assert all(0 <= a <= b for a, b in zip(v.values, u.values))


def test_killed_matrices_are_symmetric_and_substochastic():
    for matrix in (u_matrix(7), d_matrix(7)):
        assert np.array_equal(matrix, matrix.T)
        assert all(sum(row) < 1 for row in matrix)


def test_d_interior_row_is_x_law():
    row = d_matrix(9)[4]
    assert row[4] == Fraction(1, 4)
    assert row[3] == row[5] == Fraction(5, 16)
    assert row[7] == Fraction(1, 64)


def test_difference_pads_zero_boundaries():
    u = DecayVector(4, "u", np.array([Fraction(1), Fraction(3), Fraction(2)], dtype=object))
    assert difference(u).values.tolist() == [1, 2, -1, -2]


def test_difference_commutes_up_to_boundary_leak():
    u = as_kind(sigma_tilde_start(7, 3), "u")
    w0, wn = boundary_leak(u)
    gap = d_step(difference(u)).values - difference(u_step(u)).values
    assert gap.tolist() == [-w0] + [0] * 5 + [wn]
    assert w0 > 0 and wn > 0


@pytest.mark.parametrize("l", [1, 15, 30])
def test_d_mass_is_killed_x_walk_survival(l):
    n = 30
    kernel = killed_x_kernel(n)
    d = DecayVector(n, "d", np.eye(n)[l - 1])
    mass = np.eye(n)[l - 1]
    for _ in range(2000):
        d = d_step(d)
        mass = mass @ kernel
        assert abs(d.values.sum() - mass.sum()) <= 1e-10


def test_float_and_exact_paths_agree():
    exact = evolve(sigma_tilde_start(6, 2), 5)[-1].values.astype(float)
    floats = evolve(sigma_tilde_start(6, 2, exact=False), 5)[-1].values
    assert np.allclose(exact, floats)


# ── Decay reports ────────────────────────────────────────────────────────────

def test_decay_table_columns_and_regimes():
    table = decay_table(6, 5, exact_until=2)
    assert list(table.columns) == ["s", "d_mass", "u_inf", "envelope", "ratio", "arithmetic"]
    assert table["arithmetic"].tolist() == ["exact"] * 3 + ["float"] * 3


def test_decay_table_starts_below_half_n():
    n = 12
    first = decay_table(n, 0).iloc[0]
    assert first["ratio"] <= n / 2


def test_decay_table_ratio_is_mass_over_envelope():
    table = decay_table(8, 20, delta=0.2)
    assert table["envelope"].iloc[0] == pytest.approx(1.0)
    assert table["envelope"].is_monotonic_decreasing
    assert np.allclose(table["ratio"], table["d_mass"] / table["envelope"])


def test_decay_table_mass_decreases():
    table = decay_table(10, 40)
    assert table["d_mass"].is_monotonic_decreasing
    assert table["u_inf"].is_monotonic_decreasing


def test_decay_table_single_label():
    table = decay_table(8, 3, y=4)
    # σ̃_id(·, 4) rises to 2 and falls back: total variation 4
    assert table["d_mass"].iloc[0] == pytest.approx(4.0)


def test_decay_table_rejects_bad_label():
    with pytest.raises(ValueError, match="out of range"):
        decay_table(8, 3, y=8)


def test_decay_bound_check_holds():
    report = decay_bound_check(20, 1200, 0.2)
    assert report["holds"]
    assert report["steps"] == 19 * 1200
    assert report["lhs"] <= report["u_inf"] + 1e-12
    assert report["ratio"] == pytest.approx(report["d_mass"] / report["envelope"])
    assert report["margin"] == pytest.approx(2 * 20 - report["ratio"])


def test_fitted_rate_tracks_top_eigenvalue():
    result = fitted_decay_rate(10, 200, 400)
    assert result["slope"] == pytest.approx(result["log_top_eigenvalue"], rel=1e-6)
    assert result["slope"] < 0
