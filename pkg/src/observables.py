from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from src.permcore import Permutation


@dataclass(frozen=True)
class HeightField:
    """A height-type statistic h(1..n); values[x-1] = h(x)."""
    n: int
    values: np.ndarray

    def at(self, x: int) -> float:
        return float(self.values[x - 1])


@dataclass(frozen=True)
class CardPositions:
    """q(a) for a = 1..n."""
    n: int
    q: tuple[int, ...]

    @classmethod
    def of(cls, sigma: Permutation) -> "CardPositions":
        return cls(sigma.n, sigma.positions())

    def position(self, a: int) -> int:
        return self.q[a - 1]


@lru_cache(maxsize=None)
def sin_weights(n: int) -> np.ndarray:
    """sin(πx/n) for x = 1..n-1."""
    weights = np.sin(np.pi * np.arange(1, n) / n)
    weights.setflags(write=False)
    return weights


@lru_cache(maxsize=None)
def tail_sums(n: int) -> np.ndarray:
    """T(p) = Σ_{x=p}^{n-1} sin(πx/n) for p = 1..n; T(n) = 0."""
    tails = np.append(np.cumsum(sin_weights(n)[::-1])[::-1], 0.0)
    tails.setflags(write=False)
    return tails


def height(sigma: Permutation) -> HeightField:
    """h(x) = #{z ≤ x : σ(z) ≤ ⌊n/2⌋} − (⌊n/2⌋/n)·x."""
    return HeightField(sigma.n, height_batch(sigma.as_array()[None, :])[0])


def height_from_positions(sigma: Permutation) -> HeightField:
    """The same field through card positions: Σ_{a ≤ ⌊n/2⌋} 1{q(a) ≤ x} − (x/n)⌊n/2⌋."""
    n = sigma.n
    half = n // 2
    q = np.asarray(CardPositions.of(sigma).q[:half])
    x = np.arange(1, n + 1)
    counts = (q[None, :] <= x[:, None]).sum(axis=1)
    return HeightField(n, counts - x * half / n)


def height_batch(states: np.ndarray) -> np.ndarray:
    """Height fields of every row of an (m, n) label array."""
    states = np.asarray(states)
    n = states.shape[1]
    half = n // 2
    x = np.arange(1, n + 1)
    return np.cumsum(states <= half, axis=1) - x * half / n


def phi_from_heights(values: np.ndarray) -> np.ndarray | float:
    """Σ_{x=1}^{n-1} h(x) sin(πx/n) over the last axis."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    return values[..., : n - 1] @ sin_weights(n)


def phi(sigma: Permutation) -> float:
    return float(phi_from_heights(height(sigma).values))


def phi_batch(states: np.ndarray) -> np.ndarray:
    return phi_from_heights(height_batch(states))


def psi_card(before: Permutation, after: Permutation, a: int) -> float:
    """
    Change in card a's tail-sum weight across one sweep.

    Summed over a ≤ ⌊n/2⌋ this is Φ(after) − Φ(before).
    """
    if before.n != after.n:
        raise ValueError(f"States have different sizes {before.n} and {after.n}")
    tails = tail_sums(before.n)
    q_before, q_after = CardPositions.of(before), CardPositions.of(after)
    return float(tails[q_after.position(a) - 1] - tails[q_before.position(a) - 1])


def observable_columns(states: np.ndarray) -> dict[str, np.ndarray]:
    """Per-row phi, height_l2 and height_max."""
    heights = height_batch(states)
    return {
        "phi": phi_from_heights(heights),
        "height_l2": np.sqrt((heights ** 2).sum(axis=1)),
        "height_max": np.abs(heights).max(axis=1),
    }
