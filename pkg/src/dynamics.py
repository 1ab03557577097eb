import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np

from src.permcore import BlockPartition, Permutation

logger = logging.getLogger(__name__)

MODELS = ("cat", "monotone", "single", "at")
SWEEP_CHUNK = 256


class Direction(Enum):
    LEFT_TO_RIGHT = "LeftToRight"
    RIGHT_TO_LEFT = "RightToLeft"


@dataclass(frozen=True)
class SweepRandomness:
    """
    One sweep's randomness: a direction and n-1 fair bits.

    bits[i] is consumed by the i-th edge visited, in time order.
    """
    direction: Direction
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"Sweep bits must be 0 or 1, got {list(self.bits)}")
        object.__setattr__(self, "bits", bits)


def edge_order(n: int, direction: Direction) -> list[int]:
    """Edges visited by one sweep: 1..n-1 left to right, n-1..1 right to left."""
    edges = list(range(1, n))
    return edges if direction is Direction.LEFT_TO_RIGHT else edges[::-1]


def sweeps_to_steps(n: int, sweeps: int) -> int:
    """Raw time t = (n-1)·i for sweep index i."""
    return (n - 1) * sweeps


def _check_bits(n: int, bits) -> None:
    if len(bits) != n - 1:
        raise ValueError(f"Expected {n - 1} bits for n={n}, got {len(bits)}")


# ── Censoring ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CensoringScheme:
    """
    Edges skipped during given sweep windows.

    Windows are half-open sweep-index ranges [start, end); end None is open.
    """
    edges: frozenset[int] = frozenset()
    windows: tuple[tuple[int, int | None], ...] = ()
    description: str = "none"

    def censored_edges(self, sweep_index: int) -> frozenset[int]:
        for start, end in self.windows:
            if start <= sweep_index and (end is None or sweep_index < end):
                return self.edges
        return frozenset()

    def is_censored(self, sweep_index: int, edge: int) -> bool:
        return edge in self.censored_edges(sweep_index)

    @classmethod
    def none(cls) -> "CensoringScheme":
        return cls()

    @classmethod
    def everything(cls, n: int) -> "CensoringScheme":
        return cls(frozenset(range(1, n)), ((0, None),), "all")

    @classmethod
    def three_phase(cls, n: int, eta: float, total_sweeps: int | None = None) -> "CensoringScheme":
        """
        Censors the block cuts {x_i : i in [K-1]}, K = floor(1/eta), during
        [0, t1) and [t2, t3).

        With total_sweeps the cut times are scaled to that budget in the
        proportions (eta/3) : (1 + 2eta/3) : (1 + eta); otherwise they are the
        asymptotic values n³/(2π²)·log n converted to sweeps.
        """
        if not 0 < eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {eta}")
        K = int(math.floor(1 / eta))
        if K > n:
            raise ValueError(f"eta={eta} gives K={K} blocks, more than n={n}")
        cuts = frozenset(BlockPartition(n, K).interior_cuts)

        if total_sweeps is None:
            base = n ** 3 / (2 * math.pi ** 2) * math.log(n) / (n - 1)
            t1 = int(round(eta / 3 * base))
            t2 = int(round((1 + 2 * eta / 3) * base))
            t3 = int(round((1 + eta) * base))
        else:
            t1 = int(round(total_sweeps * (eta / 3) / (1 + eta)))
            t2 = int(round(total_sweeps * (1 + 2 * eta / 3) / (1 + eta)))
            t3 = int(total_sweeps)

        description = f"three-phase:eta={eta},t1={t1},t2={t2},t3={t3}"
        return cls(cuts, ((0, t1), (t2, t3)), description)

    @classmethod
    def parse(cls, text: str, n: int, total_sweeps: int | None = None) -> "CensoringScheme":
        """
        Parses "none", "all", "three-phase:eta=0.1" or
        "edges=2,4;windows=0-100,400-500" (a window "400-" is open-ended).

        Raises:
            ValueError: If the string is malformed or names edges outside 1..n-1.
        """
        text = (text or "none").strip()
        if text == "none":
            return cls.none()
        if text == "all":
            return cls.everything(n)

        match = re.fullmatch(r"three-phase:eta=([0-9.eE+-]+)", text)
        if match:
            try:
                eta = float(match.group(1))
            except ValueError:
                raise ValueError(f"Malformed eta in scheme {text!r}") from None
            return cls.three_phase(n, eta, total_sweeps)

        match = re.fullmatch(r"edges=([0-9,]+);windows=([0-9,\-]+)", text)
        if not match:
            raise ValueError(f"Malformed censoring scheme: {text!r}")

        edges = frozenset(int(e) for e in match.group(1).split(",") if e)
        bad = sorted(e for e in edges if not 1 <= e <= n - 1)
        if bad:
            raise ValueError(f"Censored edges {bad} outside 1..{n - 1}")

        windows = []
        for item in match.group(2).split(","):
            start, sep, end = item.partition("-")
            if not sep or not start:
                raise ValueError(f"Malformed window {item!r} in scheme {text!r}")
            windows.append((int(start), int(end) if end else None))
        return cls(edges, tuple(windows), text)


# ── Scalar sweeps ─────────────────────────────────────────────────────────────

def sweep(sigma: Permutation, r: SweepRandomness) -> Permutation:
    """Plain CAT sweep: transpose the cards at each visited edge iff its bit is 1."""
    _check_bits(sigma.n, r.bits)
    cards = list(sigma.mapping)
    for bit, edge in zip(r.bits, edge_order(sigma.n, r.direction)):
        if bit:
            cards[edge - 1], cards[edge] = cards[edge], cards[edge - 1]
    return Permutation(tuple(cards))


def _monotone_swap(bit: int, left: int, right: int) -> bool:
    # bit 1 sorts the pair ascending, bit 0 descending
    return (bit == 0 and left < right) or (bit == 1 and left > right)


def monotone_sweep(sigma: Permutation, r: SweepRandomness) -> Permutation:
    _check_bits(sigma.n, r.bits)
    cards = list(sigma.mapping)
    for bit, edge in zip(r.bits, edge_order(sigma.n, r.direction)):
        if _monotone_swap(bit, cards[edge - 1], cards[edge]):
            cards[edge - 1], cards[edge] = cards[edge], cards[edge - 1]
    return Permutation(tuple(cards))


def censored_sweep(
    sigma: Permutation, r: SweepRandomness, c: CensoringScheme, sweep_index: int
) -> Permutation:
    """Monotone sweep that skips the edges c censors at this sweep."""
    _check_bits(sigma.n, r.bits)
    skipped = c.censored_edges(sweep_index)
    cards = list(sigma.mapping)
    for bit, edge in zip(r.bits, edge_order(sigma.n, r.direction)):
        if edge in skipped:
            continue
        if _monotone_swap(bit, cards[edge - 1], cards[edge]):
            cards[edge - 1], cards[edge] = cards[edge], cards[edge - 1]
    return Permutation(tuple(cards))


def coupled_sweep(
    sigma: Permutation, sigma2: Permutation, r: SweepRandomness, aux
) -> tuple[Permutation, Permutation]:
    """
    Matching coupling of two decks under one sweep.

    At edge (x, x+1), if sigma(x) = sigma2(x+1) or sigma(x+1) = sigma2(x) exactly
    one deck transposes (aux picks which: 0 the first, 1 the second). Otherwise
    both decks follow the shared bit. A card at the same position in both decks
    stays matched.
    """
    if sigma.n != sigma2.n:
        raise ValueError(f"Cannot couple decks of sizes {sigma.n} and {sigma2.n}")
    n = sigma.n
    _check_bits(n, r.bits)
    _check_bits(n, aux)

    first, second = list(sigma.mapping), list(sigma2.mapping)
    for bit, extra, edge in zip(r.bits, aux, edge_order(n, r.direction)):
        x = edge - 1
        if first[x] == second[x + 1] or first[x + 1] == second[x]:
            deck = second if extra else first
            deck[x], deck[x + 1] = deck[x + 1], deck[x]
        elif bit:
            first[x], first[x + 1] = first[x + 1], first[x]
            second[x], second[x + 1] = second[x + 1], second[x]
    return Permutation(tuple(first)), Permutation(tuple(second))


def single_directional_sweep(sigma: Permutation, bits) -> Permutation:
    return sweep(sigma, SweepRandomness(Direction.LEFT_TO_RIGHT, tuple(bits)))


def at_step(sigma: Permutation, rng: np.random.Generator) -> Permutation:
    """One step of the random adjacent transposition shuffle."""
    n = sigma.n
    if n < 2:
        raise ValueError("The AT shuffle needs n >= 2")
    edge = int(rng.integers(1, n))
    if not rng.integers(2):
        return sigma
    cards = list(sigma.mapping)
    cards[edge - 1], cards[edge] = cards[edge], cards[edge - 1]
    return Permutation(tuple(cards))


# ── Batched sweeps ────────────────────────────────────────────────────────────

def _visited_edges(n: int, left_to_right: np.ndarray, i: int) -> np.ndarray:
    """0-based index of the i-th visited edge, per row."""
    return np.where(left_to_right, i, n - 2 - i)


def sweep_batch(
    states: np.ndarray,
    left_to_right,
    bits,
    rule: str = "plain",
    censored: frozenset[int] = frozenset(),
) -> np.ndarray:
    """
    Applies one sweep to every row of an (m, n) array.

    Args:
        states: Rows of labels (or 0/1 occupancies for the plain rule).
        left_to_right: Scalar or (m,) booleans.
        bits: (n-1,) or (m, n-1) array of sweep bits in visit order.
        rule: "plain" (bit 1 transposes) or "monotone" (bit 1 sorts ascending).
        censored: 1-based edges to skip.

    Returns:
        A new (m, n) array.
    """
    states = np.array(states, copy=True)
    m, n = states.shape
    if n < 2:
        return states
    ltr = np.broadcast_to(np.asarray(left_to_right, dtype=bool), (m,))
    bits = np.broadcast_to(np.asarray(bits), (m, n - 1))
    rows = np.arange(m)

    blocked = np.zeros(n - 1, dtype=bool)
    for edge in censored:
        blocked[edge - 1] = True

    for i in range(n - 1):
        x = _visited_edges(n, ltr, i)
        left = states[rows, x]
        right = states[rows, x + 1]
        bit = bits[:, i]
        if rule == "plain":
            swap = bit == 1
        elif rule == "monotone":
            swap = ((bit == 0) & (left < right)) | ((bit == 1) & (left > right))
        else:
            raise ValueError(f"Unknown sweep rule: {rule!r}")
        swap = swap & ~blocked[x]
        states[rows[swap], x[swap]] = right[swap]
        states[rows[swap], x[swap] + 1] = left[swap]
    return states


def coupled_sweep_batch(
    first: np.ndarray, second: np.ndarray, left_to_right, bits, aux
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise coupled_sweep over two (m, n) arrays."""
    first = np.array(first, copy=True)
    second = np.array(second, copy=True)
    m, n = first.shape
    ltr = np.broadcast_to(np.asarray(left_to_right, dtype=bool), (m,))
    bits = np.broadcast_to(np.asarray(bits), (m, n - 1))
    aux = np.broadcast_to(np.asarray(aux), (m, n - 1))
    rows = np.arange(m)

    for i in range(n - 1):
        x = _visited_edges(n, ltr, i)
        a_left, a_right = first[rows, x], first[rows, x + 1]
        b_left, b_right = second[rows, x], second[rows, x + 1]
        opposite = (a_left == b_right) | (a_right == b_left)
        swap_a = np.where(opposite, aux[:, i] == 0, bits[:, i] == 1)
        swap_b = np.where(opposite, aux[:, i] == 1, bits[:, i] == 1)

        first[rows[swap_a], x[swap_a]] = a_right[swap_a]
        first[rows[swap_a], x[swap_a] + 1] = a_left[swap_a]
        second[rows[swap_b], x[swap_b]] = b_right[swap_b]
        second[rows[swap_b], x[swap_b] + 1] = b_left[swap_b]
    return first, second


def at_step_batch(states: np.ndarray, edges: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """One AT step per row: edge edges[r] (1-based) transposes iff bits[r] is 1."""
    states = np.array(states, copy=True)
    rows = np.flatnonzero(np.asarray(bits) == 1)
    x = np.asarray(edges)[rows] - 1
    left = states[rows, x]
    states[rows, x] = states[rows, x + 1]
    states[rows, x + 1] = left
    return states


# ── Randomness ────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SweepBlock:
    """Randomness for consecutive sweeps of one trial; row i is sweep i."""
    left_to_right: np.ndarray
    bits: np.ndarray
    aux: np.ndarray

    def randomness(self, i: int) -> SweepRandomness:
        direction = Direction.LEFT_TO_RIGHT if self.left_to_right[i] else Direction.RIGHT_TO_LEFT
        return SweepRandomness(direction, tuple(int(b) for b in self.bits[i]))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator for one trial, keyed by (seed, trial)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial])))


def draw_sweep_block(rng: np.random.Generator, n: int, sweeps: int) -> SweepBlock:
    """Draws directions, bits and coupling bits for `sweeps` sweeps, in that order."""
    left_to_right = rng.integers(0, 2, size=sweeps).astype(bool)
    bits = rng.integers(0, 2, size=(sweeps, n - 1), dtype=np.int8)
    aux = rng.integers(0, 2, size=(sweeps, n - 1), dtype=np.int8)
    return SweepBlock(left_to_right, bits, aux)


def enumerate_sweep_randomness(n: int) -> Iterator[SweepRandomness]:
    """All 2·2^(n-1) equally likely sweep outcomes."""
    for direction in Direction:
        for code in range(2 ** (n - 1)):
            yield SweepRandomness(direction, tuple((code >> i) & 1 for i in range(n - 1)))


def outcome_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    The sweep outcomes as arrays: directions (2^n,) and bits (2^n, n-1).

    Row order matches enumerate_sweep_randomness.
    """
    codes = np.arange(2 ** (n - 1))
    bits = ((codes[:, None] >> np.arange(n - 1)) & 1).astype(np.int8)
    left_to_right = np.concatenate([np.ones(len(codes), bool), np.zeros(len(codes), bool)])
    return left_to_right, np.concatenate([bits, bits])


# ── Trajectories ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Trajectory:
    """States at sweep boundaries 0..sweeps, with their seed provenance."""
    states: tuple[Permutation, ...]
    seed: int
    trial: int
    model: str


def evolve_batch(
    starts: np.ndarray, seed: int, sweeps: int, model: str = "cat", first_trial: int = 0
) -> Iterator[tuple[int, np.ndarray]]:
    """
    Evolves each row of `starts` as its own trial.

    Row r uses the generator of trial first_trial + r, so results do not
    depend on how trials are split into batches. Randomness is drawn in
    blocks of SWEEP_CHUNK sweeps per trial.

    Yields:
        (sweep index, states after that sweep) for sweep index 1..sweeps.
        For the "at" model one sweep is n-1 AT steps.
    """
    if model not in MODELS:
        raise ValueError(f"Unknown model {model!r}; expected one of {MODELS}")
    states = np.array(starts, copy=True)
    m, n = states.shape
    if m == 0:
        return
    rngs = [trial_rng(seed, first_trial + r) for r in range(m)]
    rule = "monotone" if model == "monotone" else "plain"

    for offset in range(0, sweeps, SWEEP_CHUNK):
        chunk = min(SWEEP_CHUNK, sweeps - offset)

        if model == "at":
            edges = np.stack([rng.integers(1, n, size=(chunk, n - 1)) for rng in rngs])
            flips = np.stack([rng.integers(0, 2, size=(chunk, n - 1), dtype=np.int8) for rng in rngs])
            for i in range(chunk):
                for j in range(n - 1):
                    states = at_step_batch(states, edges[:, i, j], flips[:, i, j])
                yield offset + i + 1, states
            continue

        blocks = [draw_sweep_block(rng, n, chunk) for rng in rngs]
        left_to_right = np.stack([b.left_to_right for b in blocks])
        bits = np.stack([b.bits for b in blocks])
        for i in range(chunk):
            ltr = True if model == "single" else left_to_right[:, i]
            states = sweep_batch(states, ltr, bits[:, i], rule=rule)
            yield offset + i + 1, states


def simulate_trajectory(
    start: Permutation, sweeps: int, seed: int, trial: int = 0, model: str = "cat"
) -> Trajectory:
    states = [start]
    for _, batch in evolve_batch(start.as_array()[None, :], seed, sweeps, model, first_trial=trial):
        states.append(Permutation(tuple(int(v) for v in batch[0])))
    logger.debug("Simulated %d sweeps of %s at n=%d", sweeps, model, start.n)
    return Trajectory(tuple(states), seed, trial, model)
