import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pandas as pd

from src.dynamics import Direction, outcome_arrays, sweep_batch

logger = logging.getLogger(__name__)

HALF = Fraction(1, 2)


# ── The increment law X ───────────────────────────────────────────────────────

def x_pmf(k: int) -> Fraction:
    """ℙ(X = k) = 2^-(|k|+3) + 2^-(3-|k|)·1{|k| ≤ 1}."""
    k = abs(int(k))
    p = Fraction(1, 2 ** (k + 3))
    if k <= 1:
        p += Fraction(1, 2 ** (3 - k))
    return p


def x_cdf(k: int) -> Fraction:
    """ℙ(X ≤ k)."""
    k = int(k)
    if k <= -2:
        return Fraction(1, 2 ** (-k + 2))
    if k >= 1:
        return 1 - Fraction(1, 2 ** (k + 3))
    return {-1: Fraction(3, 8), 0: Fraction(5, 8)}[k]


def x_quantile(u: np.ndarray) -> np.ndarray:
    """Smallest k with ℙ(X ≤ k) ≥ u, elementwise for u in (0, 1)."""
    u = np.clip(np.asarray(u, dtype=float), np.finfo(float).tiny, 1 - np.finfo(float).epsneg)
    with np.errstate(divide="ignore"):
        left = np.ceil(np.log2(u)) + 2
        right = np.ceil(-np.log2(1 - u)) - 3
    k = np.select(
        [u <= 1 / 16, u <= 6 / 16, u <= 10 / 16, u <= 15 / 16],
        [left, -1, 0, 1],
        default=right,
    )
    return k.astype(np.int64)


def sample_x(rng: np.random.Generator, size=None):
    """
    Exact draws of X with unbounded support.

    |X| is 0 w.p. 1/4, 1 w.p. 5/8, and 1 + Geometric(1/2) w.p. 1/8; the sign
    is a fair coin.
    """
    shape = () if size is None else size
    head = rng.integers(0, 8, size=shape)
    tail = 1 + rng.geometric(0.5, size=shape)
    magnitude = np.where(head < 2, 0, np.where(head < 7, 1, tail))
    sign = np.where(rng.integers(0, 2, size=shape) == 1, 1, -1)
    draws = sign * magnitude
    return int(draws) if size is None else draws


# ── Tagged-card jump laws ─────────────────────────────────────────────────────

def _carry(law: dict, start: int, n: int, mass: Fraction) -> None:
    # a carried card moves right with each further swap, stopping at n-1
    y = start
    while y < n - 1:
        law[y] += mass * HALF
        mass *= HALF
        y += 1
    law[n - 1] += mass


def card_jump_law_directed(x: int, n: int, direction: Direction) -> dict[int, Fraction]:
    """
    One-sweep law of a card's position (0-based) for a fixed direction.

    Raises:
        ValueError: If n < 2 or x is outside 0..n-1.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if not 0 <= x <= n - 1:
        raise ValueError(f"x={x} out of range 0..{n - 1}")

    if direction is Direction.RIGHT_TO_LEFT:
        mirrored = card_jump_law_directed(n - 1 - x, n, Direction.LEFT_TO_RIGHT)
        return {n - 1 - y: p for y, p in mirrored.items()}

    law: dict[int, Fraction] = defaultdict(Fraction)
    if x == 0:
        _carry(law, 0, n, Fraction(1))
    else:
        law[x - 1] += HALF
        _carry(law, x, n, HALF)
    return {y: p for y, p in sorted(law.items()) if p}


def card_jump_law(x: int, n: int) -> dict[int, Fraction]:
    """Direction-averaged one-sweep law of the card at 0-based position x."""
    law: dict[int, Fraction] = defaultdict(Fraction)
    for direction in Direction:
        for y, p in card_jump_law_directed(x, n, direction).items():
            law[y] += p * HALF
    return dict(sorted(law.items()))


def enumerate_card_jump_law(x: int, n: int) -> dict[int, Fraction]:
    """Brute-force law of the card at 0-based x over all 2·2^(n-1) sweep outcomes."""
    left_to_right, bits = outcome_arrays(n)
    deck = np.tile(np.arange(1, n + 1), (len(bits), 1))
    after = sweep_batch(deck, left_to_right, bits)
    positions = np.argmax(after == x + 1, axis=1)
    values, counts = np.unique(positions, return_counts=True)
    return {int(y): Fraction(int(c), len(bits)) for y, c in zip(values, counts)}


def jump_cdf_table(n: int) -> np.ndarray:
    """cdf[x, y] = ℙ(card at x lands at ≤ y), as floats."""
    table = np.zeros((n, n))
    for x in range(n):
        for y, p in card_jump_law(x, n).items():
            table[x, y] = float(p)
    return np.cumsum(table, axis=1)


# ── The pushed walk ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PushedWalk:
    """Ŝ_s = S_s − (min_{r ≤ s} S_r ∧ −q0), for s = 1..t."""
    q0: int
    increments: np.ndarray
    partial_sums: np.ndarray
    path: np.ndarray


def pushed_walk(increments, q0: int) -> PushedWalk:
    if q0 < 0:
        raise ValueError(f"q0 must be nonnegative, got {q0}")
    increments = np.asarray(increments, dtype=np.int64)
    sums = np.cumsum(increments)
    clamp = np.minimum(np.minimum.accumulate(sums), -q0) if len(sums) else sums
    return PushedWalk(q0, increments, sums, sums - clamp)


def simulate_card_domination(
    n: int, start: int, sweeps: int, trials: int, rng: np.random.Generator
) -> dict:
    """
    Runs a tagged card against its pushed walk under a quantile coupling.

    Each sweep one uniform drives both the card's exact jump and the increment
    X. Counts sweeps before the hitting time of n-1 where the card sits below Ŝ.
    """
    cdf = jump_cdf_table(n)
    position = np.full(trials, start, dtype=np.int64)
    walk = np.full(trials, start, dtype=np.int64)
    alive = position < n - 1
    violations = 0

    for _ in range(sweeps):
        if not alive.any():
            break
        u = rng.random(trials)
        landed = (cdf[position] < u[:, None]).sum(axis=1)
        pushed = np.maximum(walk + x_quantile(u), 0)
        position = np.where(alive, np.minimum(landed, n - 1), position)
        walk = np.where(alive, pushed, walk)
        alive = alive & (position < n - 1)
        violations += int(np.sum(alive & (position < walk)))

    return {"n": n, "trials": trials, "violations": violations, "hit": int(np.sum(~alive))}


def hitting_time_right(
    n: int,
    start: int,
    trials: int,
    rng: np.random.Generator,
    thetas=(0.5, 1, 2, 4, 8),
) -> pd.DataFrame:
    """
    Empirical tail of T = min{t : q_t = n-1} at t = θn²/π² sweeps.

    Returns:
        DataFrame with columns theta, sweeps and tail.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    thetas = sorted(float(t) for t in thetas)
    grid = [int(math.floor(t * n * n / math.pi ** 2 + 1e-9)) for t in thetas]
    horizon = max(grid) if grid else 0

    cdf = jump_cdf_table(n)
    position = np.full(trials, start, dtype=np.int64)
    hit_at = np.where(position == n - 1, 0, np.iinfo(np.int64).max)

    for s in range(1, horizon + 1):
        alive = hit_at > s - 1
        if not alive.any():
            break
        u = rng.random(trials)
        landed = np.minimum((cdf[position] < u[:, None]).sum(axis=1), n - 1)
        position = np.where(alive, landed, position)
        hit_at = np.where(alive & (position == n - 1), s, hit_at)

    tails = [float(np.mean(hit_at > s)) for s in grid]
    return pd.DataFrame({"theta": thetas, "sweeps": grid, "tail": tails})


# ── The killed simple random walk ─────────────────────────────────────────────

@dataclass(frozen=True)
class KilledWalkKernel:
    """A substochastic kernel on states 0..n-1; defect[x] is the killing mass."""
    n: int
    matrix: np.ndarray

    @property
    def defect(self) -> np.ndarray:
        return 1.0 - self.matrix.sum(axis=1)

    def exact_matrix(self) -> np.ndarray:
        """The entries as Fractions (all entries are dyadic)."""
        return np.vectorize(Fraction, otypes=[object])(self.matrix)


def killed_srw_kernel(n: int) -> KilledWalkKernel:
    """
    M_n: 0 moves to 1; interior x moves to x±1 w.p. 1/2; n-1 moves to n-2
    w.p. 1/2 and is killed w.p. 1/2.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    matrix = np.zeros((n, n))
    matrix[0, 1] = 1.0
    for x in range(1, n):
        matrix[x, x - 1] = 0.5
        if x + 1 < n:
            matrix[x, x + 1] = 0.5
    return KilledWalkKernel(n, matrix)


def reversibility_weights(n: int) -> np.ndarray:
    """w with w[x]·M[x,y] = w[y]·M[y,x]: (1/2, 1, ..., 1)."""
    weights = np.ones(n)
    weights[0] = 0.5
    return weights


def symmetrized_srw_kernel(n: int) -> np.ndarray:
    """W^{1/2} M_n W^{-1/2}, which is symmetric."""
    root = np.sqrt(reversibility_weights(n))
    return root[:, None] * killed_srw_kernel(n).matrix / root[None, :]


def srw_spectrum(n: int) -> list[tuple[float, np.ndarray]]:
    """λ_j = cos((2j+1)π/2n), f_j(x) = cos((2j+1)πx/2n), j = 0..n-1."""
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    x = np.arange(n)
    pairs = []
    for j in range(n):
        angle = (2 * j + 1) * np.pi / (2 * n)
        pairs.append((float(np.cos(angle)), np.cos(angle * x)))
    return pairs


def spectrum_report(n: int) -> dict:
    """
    Residuals of the closed-form spectrum of M_n.

    gram_residual uses the reversibility weights, under which the f_j are
    orthogonal with squared norm n/2; norm_residual checks the plain
    f_j·f_j = (n+1)/2. symmetric_residual compares the closed form with the
    eigenvalues of the symmetrized kernel computed by eigvalsh.
    """
    matrix = killed_srw_kernel(n).matrix
    pairs = srw_spectrum(n)
    eigenvalues = [value for value, _ in pairs]
    vectors = np.column_stack([vector for _, vector in pairs])

    eigen_residual = max(float(np.max(np.abs(matrix @ f - lam * f))) for lam, f in pairs)
    gram = vectors.T @ (reversibility_weights(n)[:, None] * vectors)
    gram_residual = float(np.max(np.abs(gram - (n / 2) * np.eye(n))))
    norms = np.einsum("ij,ij->j", vectors, vectors)
    norm_residual = float(np.max(np.abs(norms - (n + 1) / 2)))
    numeric = np.linalg.eigvalsh(symmetrized_srw_kernel(n))
    symmetric_residual = float(np.max(np.abs(np.sort(numeric) - np.sort(eigenvalues))))

    return {
        "n": n,
        "eigenvalues": eigenvalues,
        "gram_residual": gram_residual,
        "eigen_residual_max": eigen_residual,
        "norm_residual": norm_residual,
        "symmetric_residual": symmetric_residual,
    }


def survival_curve(kernel: KilledWalkKernel, t_max: int) -> np.ndarray:
    """ℙ(τ > t) = Σ_x (δ_0 M^t)(x) for t = 0..t_max."""
    mass = np.zeros(kernel.n)
    mass[0] = 1.0
    curve = np.empty(t_max + 1)
    curve[0] = 1.0
    for t in range(1, t_max + 1):
        mass = mass @ kernel.matrix
        curve[t] = mass.sum()
    return curve


def survival_probability(kernel: KilledWalkKernel, t: int, exact: bool = False):
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if not exact:
        return float(survival_curve(kernel, t)[-1])

    matrix = kernel.exact_matrix()
    mass = np.array([Fraction(1)] + [Fraction(0)] * (kernel.n - 1), dtype=object)
    for _ in range(t):
        mass = mass.dot(matrix)
    return sum(mass, Fraction(0))


def srw_survival_bound(theta: float) -> float:
    """Envelope 5·exp(−π²θ/8) for ℙ(τ > θn²)."""
    return 5.0 * math.exp(-math.pi ** 2 * theta / 8)


def killed_x_kernel(n: int, exact: bool = False) -> np.ndarray:
    """
    The X-walk on [n] (1-based states) with mass leaving [n] killed:
    K[i, j] = ℙ(X = j − i).
    """
    dtype = object if exact else float
    matrix = np.empty((n, n), dtype=dtype)
    for i in range(n):
        for j in range(n):
            p = x_pmf(j - i)
            matrix[i, j] = p if exact else float(p)
    return matrix
