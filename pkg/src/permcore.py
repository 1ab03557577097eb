import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from src.errors import CapacityError

MAX_ENUMERATION_N = 9


# ── Permutations ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Permutation:
    """
    An arrangement of the labels 1..n; mapping[x-1] is the label at position x.

    Positions and labels are 1-based at every public interface.
    """
    mapping: tuple[int, ...]

    def __post_init__(self):
        mapping = tuple(int(v) for v in self.mapping)
        if not mapping or sorted(mapping) != list(range(1, len(mapping) + 1)):
            raise ValueError(f"Not a permutation of 1..{len(mapping)}: {list(self.mapping)}")
        object.__setattr__(self, "mapping", mapping)

    @property
    def n(self) -> int:
        return len(self.mapping)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(1, n + 1)))

    @classmethod
    def reversal(cls, n: int) -> "Permutation":
        return cls(tuple(range(n, 0, -1)))

    @classmethod
    def from_string(cls, text: str) -> "Permutation":
        """Parses the one-line form "[2,1,4,3]"."""
        try:
            values = json.loads(text)
        except json.JSONDecodeError:
            raise ValueError(f"Malformed permutation string: {text!r}") from None
        if not isinstance(values, list) or not all(isinstance(v, int) for v in values):
            raise ValueError(f"Malformed permutation string: {text!r}")
        return cls(tuple(values))

    def __str__(self) -> str:
        return "[" + ",".join(str(v) for v in self.mapping) + "]"

    def __call__(self, position: int) -> int:
        return self.mapping[position - 1]

    def positions(self) -> tuple[int, ...]:
        """q(a) for a = 1..n: the position holding label a."""
        q = [0] * self.n
        for position, label in enumerate(self.mapping, start=1):
            q[label - 1] = position
        return tuple(q)

    def inverse(self) -> "Permutation":
        return Permutation(self.positions())

    def compose(self, other: "Permutation") -> "Permutation":
        """(self ∘ other)(z) = self(other(z))."""
        if other.n != self.n:
            raise ValueError(f"Cannot compose permutations of sizes {self.n} and {other.n}")
        return Permutation(tuple(self.mapping[label - 1] for label in other.mapping))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.int64)


def random_permutation(n: int, rng: np.random.Generator) -> Permutation:
    return Permutation(tuple(int(v) for v in rng.permutation(n) + 1))


# ── Lehmer ranking ────────────────────────────────────────────────────────────

def lehmer_rank(sigma: Permutation) -> int:
    """
    Rank of sigma in the lexicographic order of one-line notation.

    This ordering indexes every ExactDistribution and kernel file.
    """
    n = sigma.n
    rank = 0
    mapping = sigma.mapping
    for i in range(n):
        smaller_after = sum(1 for j in range(i + 1, n) if mapping[j] < mapping[i])
        rank += smaller_after * math.factorial(n - 1 - i)
    return rank


def lehmer_unrank(rank: int, n: int) -> Permutation:
    if not 0 <= rank < math.factorial(n):
        raise ValueError(f"Rank {rank} out of range for n={n}")
    remaining = list(range(1, n + 1))
    mapping = []
    for i in range(n):
        block = math.factorial(n - 1 - i)
        index, rank = divmod(rank, block)
        mapping.append(remaining.pop(index))
    return Permutation(tuple(mapping))


def lehmer_rank_batch(states: np.ndarray) -> np.ndarray:
    """Lehmer ranks of each row of an (m, n) array of labels."""
    states = np.asarray(states)
    n = states.shape[1]
    later = np.triu(np.ones((n, n), dtype=bool), k=1)
    smaller_after = ((states[:, None, :] < states[:, :, None]) & later).sum(axis=2)
    weights = np.array([math.factorial(n - 1 - i) for i in range(n)], dtype=np.int64)
    return smaller_after @ weights


@lru_cache(maxsize=None)
def permutation_array(n: int) -> np.ndarray:
    """
    All of S_n as an (n!, n) read-only array of labels, in Lehmer-rank order.

    Raises:
        CapacityError: If n is too large to enumerate.
    """
    if n > MAX_ENUMERATION_N:
        raise CapacityError("n", n, MAX_ENUMERATION_N)
    states = np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.int64)
    states.setflags(write=False)
    return states


def all_permutations(n: int) -> list[Permutation]:
    return [Permutation(tuple(row)) for row in permutation_array(n).tolist()]


# ── The σ̃ statistic and the partial order ─────────────────────────────────────

@dataclass(frozen=True)
class SigmaTildeField:
    """σ̃(x, y) for all x, y in [n]; values[x-1, y-1]."""
    n: int
    values: np.ndarray

    def at(self, x: int, y: int):
        return self.values[x - 1, y - 1]


def label_counts(labels: np.ndarray) -> np.ndarray:
    """
    counts[..., x-1, y-1] = #{z ≤ x : label(z) ≤ y}.

    Works on a single (n,) row or a batch of shape (m, n).
    """
    labels = np.asarray(labels)
    n = labels.shape[-1]
    below = labels[..., :, None] <= np.arange(1, n + 1)
    return np.cumsum(below, axis=-2, dtype=np.int64)


def _check_position(value: int, n: int, name: str) -> None:
    if not 1 <= value <= n:
        raise ValueError(f"{name}={value} out of range 1..{n}")


def sigma_tilde(sigma: Permutation, x: int, y: int, exact: bool = False):
    """
    σ̃(x, y): labels ≤ y among the first x positions, minus xy/n.

    Args:
        sigma: The permutation.
        x: Position in 1..n.
        y: Label in 1..n.
        exact: Return a Fraction instead of a float.

    Raises:
        ValueError: If x or y is out of range.
    """
    n = sigma.n
    _check_position(x, n, "x")
    _check_position(y, n, "y")
    count = sum(1 for label in sigma.mapping[:x] if label <= y)
    if exact:
        return Fraction(count) - Fraction(x * y, n)
    return count - x * y / n


def sigma_tilde_field(sigma: Permutation, exact: bool = False) -> SigmaTildeField:
    n = sigma.n
    counts = label_counts(sigma.as_array())
    grid = np.arange(1, n + 1)
    if exact:
        values = np.empty((n, n), dtype=object)
        for x in range(n):
            for y in range(n):
                values[x, y] = Fraction(int(counts[x, y])) - Fraction(int(grid[x] * grid[y]), n)
    else:
        values = counts - np.outer(grid, grid) / n
    return SigmaTildeField(n=n, values=values)


def order_leq(a: Permutation, b: Permutation) -> bool:
    """
    True iff σ̃_a ≤ σ̃_b everywhere; the identity is the maximum.

    The xy/n offsets cancel, so the comparison runs on integer counts.
    """
    if a.n != b.n:
        raise ValueError(f"Cannot compare permutations of sizes {a.n} and {b.n}")
    return bool(np.all(label_counts(a.as_array()) <= label_counts(b.as_array())))


# ── Block partitions and projections ─────────────────────────────────────────

@dataclass(frozen=True)
class BlockPartition:
    """The K blocks of [n] with cutpoints x_i = floor(i·n/K)."""
    n: int
    K: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if not 1 <= self.K <= self.n:
            raise ValueError(f"K must lie in 1..{self.n}, got {self.K}")

    @property
    def cutpoints(self) -> tuple[int, ...]:
        return tuple(i * self.n // self.K for i in range(self.K + 1))

    @property
    def block_sizes(self) -> tuple[int, ...]:
        cuts = self.cutpoints
        return tuple(cuts[i] - cuts[i - 1] for i in range(1, self.K + 1))

    @property
    def interior_cuts(self) -> tuple[int, ...]:
        """The edges {x_i : i in [K-1]} that separate blocks."""
        return self.cutpoints[1:-1]

    def block_of_label(self) -> np.ndarray:
        """Array b with b[v] = block index of label v (index 0 unused)."""
        owner = np.zeros(self.n + 1, dtype=np.int64)
        cuts = self.cutpoints
        for i in range(self.K):
            owner[cuts[i] + 1: cuts[i + 1] + 1] = i
        return owner


def project_hat(sigma: Permutation, part: BlockPartition, exact: bool = False) -> np.ndarray:
    """σ̂(x, j) = σ̃(x, x_j), an n×K array."""
    _check_partition(sigma, part)
    columns = [c - 1 for c in part.cutpoints[1:]]
    return sigma_tilde_field(sigma, exact=exact).values[:, columns]


def project_bar(sigma: Permutation, part: BlockPartition, exact: bool = False) -> np.ndarray:
    """σ̄(i, j) = σ̃(x_i, x_j), a K×K array."""
    _check_partition(sigma, part)
    cuts = [c - 1 for c in part.cutpoints[1:]]
    return sigma_tilde_field(sigma, exact=exact).values[np.ix_(cuts, cuts)]


def in_Tn(sigma: Permutation, part: BlockPartition) -> bool:
    """True iff sigma maps every block onto itself."""
    _check_partition(sigma, part)
    cuts = part.cutpoints
    for i in range(part.K):
        block = set(range(cuts[i] + 1, cuts[i + 1] + 1))
        if set(sigma.mapping[cuts[i]: cuts[i + 1]]) != block:
            return False
    return True


def tn_size(part: BlockPartition) -> int:
    return math.prod(math.factorial(size) for size in part.block_sizes)


def _check_partition(sigma: Permutation, part: BlockPartition) -> None:
    if sigma.n != part.n:
        raise ValueError(f"Partition is for n={part.n}, permutation has n={sigma.n}")


def block_signatures(part: BlockPartition) -> np.ndarray:
    """
    For every permutation (Lehmer order), an integer code of the block index
    of each position's label.

    Two permutations share a code iff they differ by left-composition with an
    element of T_n, so the codes label the T_n-orbits and also the fibers of σ̂.
    """
    states = permutation_array(part.n)
    blocks = part.block_of_label()[states]
    weights = part.K ** np.arange(part.n - 1, -1, -1, dtype=np.int64)
    return blocks @ weights


def projection_keys(part: BlockPartition, kind: str) -> np.ndarray:
    """
    Integer key per permutation identifying its σ̂ ("hat") or σ̄ ("bar") value.
    """
    if kind == "hat":
        return block_signatures(part)
    if kind != "bar":
        raise ValueError(f"Unknown projection kind: {kind!r}")

    cuts = np.array(part.cutpoints[1:]) - 1
    counts = label_counts(permutation_array(part.n))[:, cuts][:, :, cuts]
    flat = counts.reshape(counts.shape[0], -1)
    _, keys = np.unique(flat, axis=0, return_inverse=True)
    return keys.reshape(-1)


# ── Exact distributions over S_n ──────────────────────────────────────────────

@dataclass(frozen=True)
class ExactDistribution:
    """
    Probabilities over S_n indexed by Lehmer rank.

    Entries are either all Fractions (exact) or all floats.
    """
    n: int
    probs: tuple

    def __post_init__(self):
        probs = tuple(self.probs)
        if len(probs) != math.factorial(self.n):
            raise ValueError(f"Expected {math.factorial(self.n)} probabilities for n={self.n}, got {len(probs)}")
        if any(p < 0 for p in probs):
            raise ValueError("Probabilities must be nonnegative")
        if not all(isinstance(p, (Fraction, int)) for p in probs):
            probs = tuple(float(p) for p in probs)
        else:
            probs = tuple(Fraction(p) for p in probs)
        object.__setattr__(self, "probs", probs)

    @property
    def exact(self) -> bool:
        return bool(self.probs) and isinstance(self.probs[0], Fraction)

    @classmethod
    def point_mass(cls, sigma: Permutation) -> "ExactDistribution":
        probs = [Fraction(0)] * math.factorial(sigma.n)
        probs[lehmer_rank(sigma)] = Fraction(1)
        return cls(sigma.n, tuple(probs))

    @classmethod
    def uniform(cls, n: int, exact: bool = True) -> "ExactDistribution":
        size = math.factorial(n)
        value = Fraction(1, size) if exact else 1.0 / size
        return cls(n, (value,) * size)

    def total(self):
        return sum(self.probs, Fraction(0)) if self.exact else math.fsum(self.probs)

    def is_normalized(self, tol: float = 1e-9) -> bool:
        if self.exact:
            return self.total() == 1
        return abs(self.total() - 1.0) <= tol

    def prob(self, sigma: Permutation):
        return self.probs[lehmer_rank(sigma)]

    def as_array(self) -> np.ndarray:
        return np.array([float(p) for p in self.probs])


def uniformize(nu: ExactDistribution, part: BlockPartition) -> ExactDistribution:
    """
    ν^u(σ) = (1/|T_n|) Σ_{τ ∈ T_n} ν(τ∘σ).

    The average runs over the T_n-orbit of σ, i.e. over permutations with the
    same block signature.

    Raises:
        ValueError: If nu is not normalized or the sizes differ.
    """
    if nu.n != part.n:
        raise ValueError(f"Partition is for n={part.n}, distribution has n={nu.n}")
    if not nu.is_normalized():
        raise ValueError("Distribution must sum to 1")

    keys = block_signatures(part)
    size = tn_size(part)

    if nu.exact:
        sums: dict[int, Fraction] = {}
        for key, p in zip(keys.tolist(), nu.probs):
            sums[key] = sums.get(key, Fraction(0)) + p
        return ExactDistribution(nu.n, tuple(sums[key] / size for key in keys.tolist()))

    _, inverse = np.unique(keys, return_inverse=True)
    sums = np.bincount(inverse, weights=nu.as_array())
    return ExactDistribution(nu.n, tuple(sums[inverse] / size))


def project_distribution(nu: ExactDistribution, part: BlockPartition, kind: str = "hat") -> dict:
    """Pushes nu forward through σ̂ or σ̄; returns key -> probability."""
    if nu.n != part.n:
        raise ValueError(f"Partition is for n={part.n}, distribution has n={nu.n}")
    keys = projection_keys(part, kind).tolist()
    zero = Fraction(0) if nu.exact else 0.0
    pushed: dict[int, object] = {}
    for key, p in zip(keys, nu.probs):
        pushed[key] = pushed.get(key, zero) + p
    return pushed
