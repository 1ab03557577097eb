"""
Exact distributional analysis on S_n for small n.

Kernels store integer outcome counts over a power-of-two denominator in a
scipy.sparse matrix, so exact evolution runs on Python integers and only
becomes a Fraction when a distance is reported.
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator

import numpy as np
import pandas as pd
import scipy.sparse as sp

from src.dynamics import MODELS, CensoringScheme, outcome_arrays, sweep_batch
from src.errors import CapacityError, InvariantError
from src.permcore import (
    BlockPartition,
    ExactDistribution,
    Permutation,
    SigmaTildeField,
    label_counts,
    lehmer_rank,
    lehmer_rank_batch,
    permutation_array,
    project_distribution,
    uniformize,
)

logger = logging.getLogger(__name__)

MAX_KERNEL_N = 8
MAX_MIXING_N = 7
MAX_CENSORING_N = 6
MAX_EXACT_ARITHMETIC_N = 6
FULL_MAX_N = 5


# ── Kernels ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SweepKernel:
    """
    One-sweep transition kernel: P(σ, σ′) = counts[σ, σ′] / denominator,
    states indexed by Lehmer rank.
    """
    n: int
    model: str
    counts: sp.csr_matrix
    denominator: int
    censored: frozenset[int] = frozenset()
    _coo: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        coo = self.counts.tocoo()
        object.__setattr__(self, "_coo", (coo.row, coo.col, coo.data.astype(np.int64)))

    @property
    def size(self) -> int:
        return self.counts.shape[0]

    def probability(self, source: Permutation, target: Permutation) -> Fraction:
        return Fraction(int(self.counts[lehmer_rank(source), lehmer_rank(target)]), self.denominator)

    def to_fractions(self) -> list[list[Fraction]]:
        dense = self.counts.toarray()
        return [[Fraction(int(v), self.denominator) for v in row] for row in dense]

    def push(self, values: np.ndarray) -> np.ndarray:
        """
        Unnormalized one-sweep push-forward: values @ counts.

        Object arrays of ints stay exact (the caller multiplies its denominator
        by self.denominator); float arrays come back normalized.
        """
        if values.dtype != object:
            return self.counts.T @ values / self.denominator
        rows, cols, data = self._coo
        out = np.zeros(values.shape, dtype=object)
        weights = data.astype(object)
        if values.ndim > 1:
            weights = weights[:, None]
        np.add.at(out, cols, values[rows] * weights)
        return out


def _outcomes(n: int, model: str) -> tuple[np.ndarray, np.ndarray, str]:
    left_to_right, bits = outcome_arrays(n)
    if model == "single":
        keep = left_to_right
        return left_to_right[keep], bits[keep], "plain"
    return left_to_right, bits, "monotone" if model == "monotone" else "plain"


def build_sweep_kernel(n: int, model: str = "cat", censored: frozenset[int] = frozenset()) -> SweepKernel:
    """
    Assembles the exact kernel by pushing every state through every equally
    likely sweep outcome.

    The "at" model is a single adjacent-transposition step (uniform edge, fair
    bit). Censored edges are skipped by the sweep models.

    Raises:
        CapacityError: If n exceeds the dense kernel limit.
        ValueError: For an unknown model or n < 2.
    """
    if model not in MODELS:
        raise ValueError(f"Unknown model {model!r}; expected one of {MODELS}")
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if n > MAX_KERNEL_N:
        raise CapacityError("n", n, MAX_KERNEL_N)

    states = permutation_array(n)
    size = len(states)
    sources = np.arange(size, dtype=np.int64)
    rows, cols = [], []

    if model == "at":
        for edge in range(1, n):
            moved = np.array(states, copy=True)
            moved[:, [edge - 1, edge]] = moved[:, [edge, edge - 1]]
            rows += [sources, sources]
            cols += [sources, lehmer_rank_batch(moved)]
        denominator = 2 * (n - 1)
    else:
        left_to_right, bits, rule = _outcomes(n, model)
        for ltr, row_bits in zip(left_to_right, bits):
            after = sweep_batch(states, bool(ltr), row_bits, rule=rule, censored=censored)
            rows.append(sources)
            cols.append(lehmer_rank_batch(after))
        denominator = len(bits)

    row_index = np.concatenate(rows)
    counts = sp.coo_matrix(
        (np.ones(len(row_index), dtype=np.int64), (row_index, np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    counts.sum_duplicates()

    kernel = SweepKernel(n, model, counts, denominator, frozenset(censored))
    logger.info("Built sweep kernel", extra={"n": n, "model": model, "nnz": int(counts.nnz),
                                             "censored": sorted(censored)})
    return kernel


def is_doubly_stochastic(kernel: SweepKernel) -> bool:
    rows = np.asarray(kernel.counts.sum(axis=1)).ravel()
    cols = np.asarray(kernel.counts.sum(axis=0)).ravel()
    return bool(np.all(rows == kernel.denominator) and np.all(cols == kernel.denominator))


def kernels_equal(a: SweepKernel, b: SweepKernel) -> bool:
    if a.n != b.n or a.denominator != b.denominator:
        return False
    return (a.counts != b.counts).nnz == 0


# ── Exact evolution ───────────────────────────────────────────────────────────

@dataclass
class RationalVector:
    """numerators / denominator, one column per tracked start when 2-D."""
    numerators: np.ndarray
    denominator: int

    @classmethod
    def from_distribution(cls, nu: ExactDistribution) -> "RationalVector":
        denominator = math.lcm(*(p.denominator for p in nu.probs))
        numerators = np.array([p.numerator * (denominator // p.denominator) for p in nu.probs], dtype=object)
        return cls(numerators, denominator)

    def step(self, kernel: SweepKernel) -> "RationalVector":
        return RationalVector(kernel.push(self.numerators), self.denominator * kernel.denominator)

    def tv_to_uniform(self) -> np.ndarray:
        size = self.numerators.shape[0]
        gaps = np.abs(self.numerators * size - self.denominator).sum(axis=0)
        scale = 2 * size * self.denominator
        if np.ndim(gaps) == 0:
            return Fraction(int(gaps), scale)
        return np.array([Fraction(int(g), scale) for g in gaps], dtype=object)

    def distribution(self) -> ExactDistribution:
        n = _n_of_size(self.numerators.shape[0])
        return ExactDistribution(n, tuple(Fraction(int(v), self.denominator) for v in self.numerators))


def _n_of_size(size: int) -> int:
    n = 1
    while math.factorial(n) < size:
        n += 1
    return n


def evolve_exact(nu: ExactDistribution, kernel: SweepKernel, sweeps: int) -> Iterator[ExactDistribution]:
    """Yields ν P^i for i = 1..sweeps, exact when nu is."""
    if nu.n != kernel.n:
        raise ValueError(f"Kernel is for n={kernel.n}, distribution has n={nu.n}")
    if nu.exact:
        state = RationalVector.from_distribution(nu)
        for _ in range(sweeps):
            state = state.step(kernel)
            yield state.distribution()
        return
    values = nu.as_array()
    for _ in range(sweeps):
        values = kernel.push(values)
        yield ExactDistribution(nu.n, tuple(values))


def tv_distance(p: ExactDistribution, q: ExactDistribution):
    """(1/2) Σ |p − q|; a Fraction when both are exact."""
    if p.n != q.n:
        raise ValueError(f"Cannot compare distributions with n={p.n} and n={q.n}")
    if p.exact and q.exact:
        return sum((abs(a - b) for a, b in zip(p.probs, q.probs)), Fraction(0)) / 2
    return float(0.5 * np.abs(p.as_array() - q.as_array()).sum())


def tv_to_uniform(nu: ExactDistribution):
    return tv_distance(nu, ExactDistribution.uniform(nu.n, exact=nu.exact))


KernelBuilder = Callable[[int, str, frozenset], "SweepKernel"]


def _tv_iterate(
    start: ExactDistribution, kernel_for: Callable[[int], SweepKernel], sweeps: int, exact: bool
) -> list:
    """TV to uniform at sweeps 0..sweeps; kernel_for(i) drives sweep i -> i+1."""
    if exact:
        state = RationalVector.from_distribution(start)
        curve = [state.tv_to_uniform()]
        for i in range(sweeps):
            state = state.step(kernel_for(i))
            curve.append(state.tv_to_uniform())
        return curve

    size = math.factorial(start.n)
    values = start.as_array()
    curve = [float(0.5 * np.abs(values - 1 / size).sum())]
    for i in range(sweeps):
        values = kernel_for(i).push(values)
        curve.append(float(0.5 * np.abs(values - 1 / size).sum()))
    return curve


def tv_curve(
    n: int,
    sweeps: int,
    start: Permutation | None = None,
    model: str = "cat",
    builder: KernelBuilder | None = None,
) -> pd.DataFrame:
    """
    TV to uniform from a point mass (identity by default), sweeps 0..sweeps.

    builder(n, model, censored) supplies the kernel; build_sweep_kernel when None.
    """
    start = start or Permutation.identity(n)
    kernel = (builder or build_sweep_kernel)(n, model, frozenset())
    exact = n <= MAX_EXACT_ARITHMETIC_N
    curve = _tv_iterate(ExactDistribution.point_mass(start), lambda i: kernel, sweeps, exact)
    return pd.DataFrame({"sweep": range(sweeps + 1), "tv": [float(v) for v in curve]})


@dataclass(frozen=True)
class MixingTime:
    """
    Sweeps to reach TV ≤ eps. mode is "max" when every start was evaluated,
    "lower envelope of the max" when only the identity and reversal were.
    """
    n: int
    eps: float
    sweeps: int
    mode: str


def mixing_time_exact(n: int, eps: float, max_sweeps: int = 10_000) -> MixingTime:
    """
    Smallest sweep count i ≥ 1 with max over starts of tv(P^i_σ, μ) ≤ eps.

    Raises:
        CapacityError: For n above the exact limit.
        ValueError: If eps is negative or the target is not reached.
    """
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if n > MAX_MIXING_N:
        raise CapacityError("n", n, MAX_MIXING_N)

    kernel = build_sweep_kernel(n, "cat")
    exact = n <= MAX_EXACT_ARITHMETIC_N
    size = math.factorial(n)

    if n <= FULL_MAX_N:
        start_ranks = list(range(size))
        mode = "max"
    else:
        start_ranks = [lehmer_rank(Permutation.identity(n)), lehmer_rank(Permutation.reversal(n))]
        mode = "lower envelope of the max"
        logger.warning("Mixing time at n=%d uses the identity and reversal starts only", n)

    starts = np.zeros((size, len(start_ranks)), dtype=object if exact else float)
    for column, rank in enumerate(start_ranks):
        starts[rank, column] = 1

    if exact:
        state = RationalVector(starts, 1)
        for i in range(1, max_sweeps + 1):
            state = state.step(kernel)
            if max(state.tv_to_uniform()) <= Fraction(eps):
                return _mixing_result(n, eps, i, mode)
    else:
        values = starts
        for i in range(1, max_sweeps + 1):
            values = kernel.push(values)
            if float(np.max(0.5 * np.abs(values - 1 / size).sum(axis=0))) <= eps:
                return _mixing_result(n, eps, i, mode)

    raise ValueError(f"TV did not reach eps={eps} within {max_sweeps} sweeps at n={n}")


def _mixing_result(n: int, eps: float, sweeps: int, mode: str) -> MixingTime:
    logger.info("Mixing time", extra={"n": n, "eps": eps, "sweeps": sweeps, "mode": mode})
    return MixingTime(n, eps, sweeps, mode)


# ── Censoring ─────────────────────────────────────────────────────────────────

def censoring_compare(
    n: int,
    scheme: CensoringScheme,
    sweeps: int,
    start: Permutation | None = None,
    builder: KernelBuilder | None = None,
) -> pd.DataFrame:
    """
    Exact TV of the plain and censored chains from a point mass (identity by
    default) at sweeps 0..sweeps.

    Raises:
        CapacityError: For n above the exact censoring limit.
        InvariantError: If the censored chain is ever strictly closer to uniform.
    """
    if n > MAX_CENSORING_N:
        raise CapacityError("n", n, MAX_CENSORING_N)

    start_dist = ExactDistribution.point_mass(start or Permutation.identity(n))
    builder = builder or build_sweep_kernel
    plain_kernel = builder(n, "cat", frozenset())
    kernels: dict[frozenset, SweepKernel] = {}

    def censored_kernel(i: int) -> SweepKernel:
        edges = scheme.censored_edges(i)
        if edges not in kernels:
            kernels[edges] = builder(n, "monotone", edges)
        return kernels[edges]

    plain = _tv_iterate(start_dist, lambda i: plain_kernel, sweeps, exact=True)
    censored = _tv_iterate(start_dist, censored_kernel, sweeps, exact=True)

    for i, (a, b) in enumerate(zip(plain, censored)):
        if b < a:
            raise InvariantError(f"Censored TV {b} below plain TV {a} at sweep {i} ({scheme.description})")

    return pd.DataFrame({
        "sweep": range(sweeps + 1),
        "tv_plain": [float(v) for v in plain],
        "tv_censored": [float(v) for v in censored],
        "censored_edges": [len(scheme.censored_edges(i)) if i < sweeps else 0 for i in range(sweeps + 1)],
    })


# ── Projections ───────────────────────────────────────────────────────────────

def _projected_gap(nu: ExactDistribution, mu: ExactDistribution, part: BlockPartition, kind: str):
    pushed_nu = project_distribution(nu, part, kind)
    pushed_mu = project_distribution(mu, part, kind)
    zero = Fraction(0) if nu.exact else 0.0
    return sum((abs(pushed_nu.get(key, zero) - pushed_mu[key]) for key in pushed_mu), zero) / 2


def projected_tv(nu: ExactDistribution, part: BlockPartition) -> dict:
    """
    Distances of the σ̂ and σ̄ projections, and of the block-uniformized ν^u,
    to their uniform counterparts.

    Raises:
        CapacityError: For n above the exact limit.
        InvariantError: If ‖ν̂ − μ̂‖ ≠ ‖ν^u − μ‖ or the triangle bound
            ‖ν − μ‖ ≤ ‖ν − ν^u‖ + ‖ν̂ − μ̂‖ fails.
    """
    if nu.n > MAX_MIXING_N:
        raise CapacityError("n", nu.n, MAX_MIXING_N)
    mu = ExactDistribution.uniform(nu.n, exact=nu.exact)
    nu_u = uniformize(nu, part)

    report = {
        "tv_hat": _projected_gap(nu, mu, part, "hat"),
        "tv_bar": _projected_gap(nu, mu, part, "bar"),
        "tv_u": tv_distance(nu_u, mu),
        "tv": tv_distance(nu, mu),
        "tv_to_uniformized": tv_distance(nu, nu_u),
    }

    tol = 0 if nu.exact else 1e-12
    if abs(report["tv_hat"] - report["tv_u"]) > tol:
        raise InvariantError(f"Projected TV {report['tv_hat']} differs from uniformized TV {report['tv_u']}")
    if report["tv"] > report["tv_to_uniformized"] + report["tv_hat"] + tol:
        raise InvariantError("Triangle bound through the uniformized distribution failed")
    return report


# ── Oracles and helpers ───────────────────────────────────────────────────────

def random_distribution(n: int, rng: np.random.Generator, exact: bool = True) -> ExactDistribution:
    """Random ν with small integer weights, normalized."""
    weights = rng.integers(0, 100, size=math.factorial(n)) + 1
    total = int(weights.sum())
    if exact:
        return ExactDistribution(n, tuple(Fraction(int(w), total) for w in weights))
    return ExactDistribution(n, tuple(weights / total))


def expected_sigma_tilde_after_sweep(sigma: Permutation, exact: bool = True) -> SigmaTildeField:
    """E[σ̃′(x, y) | σ] by enumerating every sweep outcome."""
    n = sigma.n
    left_to_right, bits = outcome_arrays(n)
    starts = np.repeat(sigma.as_array()[None, :], len(bits), axis=0)
    after = sweep_batch(starts, left_to_right, bits)
    totals = label_counts(after).sum(axis=0)
    outcomes = len(bits)

    grid = np.arange(1, n + 1)
    if not exact:
        return SigmaTildeField(n, totals / outcomes - np.outer(grid, grid) / n)
    values = np.empty((n, n), dtype=object)
    for x in range(n):
        for y in range(n):
            values[x, y] = Fraction(int(totals[x, y]), outcomes) - Fraction(int(grid[x] * grid[y]), n)
    return SigmaTildeField(n, values)
