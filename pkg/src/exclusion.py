"""
The systematic simple exclusion process: the CAT shuffle seen through which
positions hold the k smallest labels.
"""
import itertools
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp

from src.config import get_second_moment_constant
from src.dynamics import (
    Direction,
    SweepRandomness,
    coupled_sweep_batch,
    draw_sweep_block,
    outcome_arrays,
    sweep_batch,
)
from src.errors import CapacityError
from src.exactdist import RationalVector, SweepKernel
from src.observables import HeightField, phi_from_heights, sin_weights
from src.permcore import Permutation
from src.wilson import WilsonInputs, first_moment_bound, gamma_of_n, wilson_lower_bound

logger = logging.getLogger(__name__)

MAX_KERNEL_OUTCOMES = 2 ** 22


@dataclass(frozen=True)
class Configuration:
    """Occupancies ξ(1..n) in {0, 1}; k is the particle count."""
    occupancy: tuple[int, ...]

    def __post_init__(self):
        occupancy = tuple(int(v) for v in self.occupancy)
        if not occupancy or any(v not in (0, 1) for v in occupancy):
            raise ValueError(f"Occupancies must be a nonempty sequence of 0/1, got {list(self.occupancy)}")
        object.__setattr__(self, "occupancy", occupancy)

    @property
    def n(self) -> int:
        return len(self.occupancy)

    @property
    def k(self) -> int:
        return sum(self.occupancy)

    @classmethod
    def from_string(cls, text: str) -> "Configuration":
        """Parses a bitstring such as "110100"."""
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"Malformed configuration string: {text!r}")
        return cls(tuple(int(c) for c in text))

    def __str__(self) -> str:
        return "".join(str(v) for v in self.occupancy)

    @classmethod
    def wedge(cls, n: int, k: int) -> "Configuration":
        """Particles packed at the left end."""
        _check_k(n, k)
        return cls(tuple(1 if x <= k else 0 for x in range(1, n + 1)))

    @classmethod
    def anti_wedge(cls, n: int, k: int) -> "Configuration":
        _check_k(n, k)
        return cls(tuple(1 if x > n - k else 0 for x in range(1, n + 1)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.occupancy, dtype=np.int64)


def _check_k(n: int, k: int) -> None:
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in 0..{n}, got {k}")


def project_permutation(sigma: Permutation, k: int) -> Configuration:
    """ξ(x) = 1{σ(x) ≤ k}."""
    _check_k(sigma.n, k)
    return Configuration(tuple(1 if label <= k else 0 for label in sigma.mapping))


def complement(xi: Configuration) -> Configuration:
    """Swaps particles and holes."""
    return Configuration(tuple(1 - v for v in xi.occupancy))


def excl_sweep(xi: Configuration, r: SweepRandomness) -> Configuration:
    """
    One exclusion sweep: the contents of each visited edge swap iff its bit is 1.

    Raises:
        ValueError: If r does not carry n-1 bits.
    """
    if len(r.bits) != xi.n - 1:
        raise ValueError(f"Expected {xi.n - 1} bits for n={xi.n}, got {len(r.bits)}")
    ltr = r.direction is Direction.LEFT_TO_RIGHT
    after = sweep_batch(xi.as_array()[None, :], ltr, np.asarray(r.bits))
    return Configuration(tuple(after[0]))


# ── Height and Ψ ──────────────────────────────────────────────────────────────

def g_heights_batch(occupancies: np.ndarray) -> np.ndarray:
    occupancies = np.asarray(occupancies)
    n = occupancies.shape[1]
    k = occupancies.sum(axis=1, keepdims=True)
    return np.cumsum(occupancies, axis=1) - np.arange(1, n + 1) * k / n


def g_height(xi: Configuration) -> HeightField:
    """g(x) = Σ_{z ≤ x} ξ(z) − xk/n; g(n) = 0."""
    return HeightField(xi.n, g_heights_batch(xi.as_array()[None, :])[0])


def psi_excl(xi: Configuration) -> float:
    """Ψ(ξ) = Σ_x g(x) sin(πx/n)."""
    return float(phi_from_heights(g_height(xi).values))


def conditional_psi_mean(xi: Configuration) -> float:
    """E[Ψ′ | ξ] over every sweep outcome."""
    left_to_right, bits = outcome_arrays(xi.n)
    starts = np.repeat(xi.as_array()[None, :], len(bits), axis=0)
    return float(phi_from_heights(g_heights_batch(sweep_batch(starts, left_to_right, bits))).mean())


def psi_first_moment_residual(xi: Configuration) -> float:
    """|E[Ψ′|ξ] − (1 − γ(n))Ψ(ξ)|; bounded by 3π/(4n)."""
    return abs(conditional_psi_mean(xi) - (1 - gamma_of_n(xi.n)) * psi_excl(xi))


# ── Exact kernel on Ω_{n,k} ───────────────────────────────────────────────────

def colex_rank(xi: Configuration) -> int:
    """Σ_i C(p_i, i) over the occupied 0-based positions p_1 < ... < p_k."""
    occupied = [x for x, v in enumerate(xi.occupancy) if v]
    return sum(math.comb(p, i) for i, p in enumerate(occupied, start=1))


def _colex_rank_batch(occupancies: np.ndarray) -> np.ndarray:
    n = occupancies.shape[1]
    # the i-th particle from the left at position p contributes C(p, i)
    order = np.cumsum(occupancies, axis=1)
    table = np.array([[math.comb(p, i) for i in range(n + 1)] for p in range(n)], dtype=np.int64)
    positions = np.broadcast_to(np.arange(n), occupancies.shape)
    return (table[positions, order] * occupancies).sum(axis=1)


def configurations(n: int, k: int) -> np.ndarray:
    """Ω_{n,k} as a (C(n,k), n) array in colex order."""
    _check_k(n, k)
    states = np.zeros((math.comb(n, k), n), dtype=np.int64)
    for row, occupied in enumerate(itertools.combinations(range(n), k)):
        states[row, list(occupied)] = 1
    return states[np.argsort(_colex_rank_batch(states))]


def excl_exact_kernel(n: int, k: int) -> SweepKernel:
    """
    One-sweep kernel on Ω_{n,k}, states in colex order.

    Raises:
        CapacityError: If C(n,k)·2^n exceeds the assembly budget.
    """
    work = math.comb(n, k) * 2 ** n
    if work > MAX_KERNEL_OUTCOMES:
        raise CapacityError("C(n,k)*2^n", work, MAX_KERNEL_OUTCOMES)

    states = configurations(n, k)
    size = len(states)
    sources = np.arange(size)
    if n < 2:
        counts = sp.identity(size, dtype=np.int64, format="csr")
        return SweepKernel(n, "exclusion", counts, 1)

    left_to_right, bits = outcome_arrays(n)
    rows, cols = [], []
    for ltr, row_bits in zip(left_to_right, bits):
        rows.append(sources)
        cols.append(_colex_rank_batch(sweep_batch(states, bool(ltr), row_bits)))

    row_index = np.concatenate(rows)
    counts = sp.coo_matrix(
        (np.ones(len(row_index), dtype=np.int64), (row_index, np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    counts.sum_duplicates()
    logger.info("Built exclusion kernel", extra={"n": n, "k": k, "states": size})
    return SweepKernel(n, "exclusion", counts, len(bits))


def excl_exact_tv(n: int, k: int, sweeps: int) -> pd.DataFrame:
    """Exact TV to uniform on Ω_{n,k} from the wedge, sweeps 0..sweeps."""
    kernel = excl_exact_kernel(n, k)
    numerators = np.zeros(kernel.size, dtype=object)
    numerators[colex_rank(Configuration.wedge(n, k))] = 1
    state = RationalVector(numerators, 1)

    curve = [state.tv_to_uniform()]
    for _ in range(sweeps):
        state = state.step(kernel)
        curve.append(state.tv_to_uniform())
    return pd.DataFrame({"sweep": range(sweeps + 1), "tv": [float(v) for v in curve]})


# ── Lower bound ───────────────────────────────────────────────────────────────

def excl_wilson_inputs(n: int, k: int, eps: float, c_hat: float | None = None) -> WilsonInputs:
    _check_k(n, k)
    k_prime = min(k, n - k)
    if k_prime < 4:
        raise ValueError(f"The exclusion lower bound needs min(k, n-k) >= 4, got {k_prime}")
    c_hat = get_second_moment_constant() if c_hat is None else c_hat
    x = np.arange(1, n)
    return WilsonInputs(
        phi0=psi_excl(Configuration.wedge(n, k_prime)),
        gamma=gamma_of_n(n),
        delta=first_moment_bound(n),
        R=c_hat * k_prime * math.log(k_prime),
        phi_sup=float(np.minimum(np.minimum(x, n - x), k_prime) @ sin_weights(n)),
        eps=eps,
    )


def excl_lower_bound(n: int, k: int, eps: float, c_hat: float | None = None, units: str = "sweeps") -> dict:
    """
    Lower bound on t_mix(1 − ε) for the exclusion process from Ψ at the wedge.

    k is first replaced by k′ = min(k, n−k), so the bound is symmetric under
    swapping particles and holes.
    """
    if units not in ("sweeps", "steps"):
        raise ValueError(f"units must be 'sweeps' or 'steps', got {units!r}")
    w = excl_wilson_inputs(n, k, eps, c_hat)
    t = wilson_lower_bound(w)
    if units == "steps":
        t *= n - 1
    if t <= 0:
        logger.warning("Vacuous exclusion lower bound", extra={"n": n, "k": k, "eps": eps, "t_lower": t})
    return {"n": n, "k": k, "k_prime": min(k, n - k), "t_lower": t, "units": units, **asdict(w)}


# ── Coupling ──────────────────────────────────────────────────────────────────

def labeled_deck(xi: Configuration) -> np.ndarray:
    """
    A permutation projecting to xi: particles get labels 1..k and holes
    k+1..n, each numbered left to right.
    """
    occupancy = xi.as_array()
    labels = np.empty(xi.n, dtype=np.int64)
    particles = np.flatnonzero(occupancy == 1)
    holes = np.flatnonzero(occupancy == 0)
    labels[particles] = np.arange(1, len(particles) + 1)
    labels[holes] = np.arange(len(particles) + 1, xi.n + 1)
    return labels


def excl_coupling_time(
    n: int, k: int, trials: int, rng: np.random.Generator, sweeps_grid, start: Configuration | None = None
) -> pd.DataFrame:
    """
    Fraction of coupled pairs in which some particle is still unmatched at each
    sweep of sweeps_grid.

    The first chain starts at the wedge and the second at `start` (the
    anti-wedge by default); both run the matching coupling on labeled decks.
    """
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    grid = sorted(set(int(s) for s in sweeps_grid))
    first_start = labeled_deck(Configuration.wedge(n, k))
    second_start = labeled_deck(start or Configuration.anti_wedge(n, k))
    first = np.repeat(first_start[None, :], trials, axis=0)
    second = np.repeat(second_start[None, :], trials, axis=0)

    def unmatched() -> float:
        apart = (first <= k) & (first != second)
        return float(apart.any(axis=1).mean())

    rows = []
    s = 0
    for target in grid:
        while s < target:
            block = draw_sweep_block(rng, n, trials)
            first, second = coupled_sweep_batch(first, second, block.left_to_right, block.bits, block.aux)
            s += 1
        rows.append({"sweep": target, "steps": (n - 1) * target, "uncoupled": unmatched()})
    return pd.DataFrame(rows)
