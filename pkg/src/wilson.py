"""
Wilson-type lower bounds for mixing, the moment estimates they consume, and
chains with exact answers to check them against.
"""
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy import stats

from src.analysis import mean_with_stderr
from src.config import get_second_moment_constant
from src.decay import vbar_matrix
from src.dynamics import draw_sweep_block, evolve_batch, outcome_arrays, sweep_batch, trial_rng
from src.observables import phi, phi_batch, sin_weights
from src.permcore import Permutation, random_permutation, sigma_tilde_field

logger = logging.getLogger(__name__)

GAMMA_CEILING = 2 - math.sqrt(2)
SERIES_TERMS = 200


@dataclass(frozen=True)
class WilsonInputs:
    """
    Inputs to the lower bound for a statistic Φ with
    |E[Φ_{t+1}|F_t] − (1−γ)Φ_t| ≤ δ and E[(ΔΦ_t)²|F_t] ≤ R.
    """
    phi0: float
    gamma: float
    delta: float
    R: float
    phi_sup: float
    eps: float

    def __post_init__(self):
        if not 0 < self.gamma < GAMMA_CEILING:
            raise ValueError(f"gamma must lie in (0, 2-sqrt(2)), got {self.gamma}")
        if self.delta < 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.R <= 0 or self.phi_sup <= 0:
            raise ValueError("R and phi_sup must be positive")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.phi0 <= 0:
            raise ValueError(f"phi0 must be positive, got {self.phi0}")

    @property
    def gamma_star(self) -> float:
        return -math.log(1 - self.gamma)


def wilson_lower_bound(w: WilsonInputs) -> float:
    """
    t = (1/γ⋆) log Φ(x₀) − (1/2γ⋆) log(48(δ‖Φ‖∞ + R)/(γε)), γ⋆ = −log(1−γ).

    At any time below t the chain is still at TV distance at least 1 − ε from
    stationarity. Units are those of the step that Φ contracts over.
    """
    penalty = math.log(48 * (w.delta * w.phi_sup + w.R) / (w.gamma * w.eps))
    return math.log(w.phi0) / w.gamma_star - penalty / (2 * w.gamma_star)


# ── Contraction rate of Φ ─────────────────────────────────────────────────────

def gamma_of_n(n: int) -> float:
    """γ(n) = 1 − Σ_{k≥−1} cos(kπ/n)·2^{−(k+2)} in closed form."""
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    c = math.cos(math.pi / n)
    return 1 - (c / 2 + (1 - c / 2) / (5 - 4 * c))


def gamma_series(n: int, terms: int = SERIES_TERMS) -> float:
    """The same quantity summed term by term up to k = terms."""
    theta = math.pi / n
    k = np.arange(-1, terms + 1)
    return float(1 - math.fsum(np.cos(k * theta) * 2.0 ** -(k + 2)))


# ── First moment ──────────────────────────────────────────────────────────────

def conditional_phi_mean(sigma: Permutation, mode: str = "enumeration") -> float:
    """
    E[Φ′ | σ] over one sweep.

    "enumeration" averages Φ over every sweep outcome; "recursion" applies the
    exact expected-σ̃ recursion to the height h = σ̃(·, ⌊n/2⌋).
    """
    n = sigma.n
    if mode == "enumeration":
        left_to_right, bits = outcome_arrays(n)
        starts = np.repeat(sigma.as_array()[None, :], len(bits), axis=0)
        return float(phi_batch(sweep_batch(starts, left_to_right, bits)).mean())
    if mode != "recursion":
        raise ValueError(f"Unknown mode {mode!r}; expected 'enumeration' or 'recursion'")

    heights = sigma_tilde_field(sigma, exact=True).values[: n - 1, n // 2 - 1]
    expected = vbar_matrix(n).dot(np.array(list(heights), dtype=object))
    return float(np.array([float(v) for v in expected]) @ sin_weights(n))


def first_moment_residual(sigma: Permutation, mode: str = "enumeration") -> float:
    """|E[Φ′|σ] − (1 − γ(n))Φ(σ)|; bounded by 3π/(4n)."""
    return abs(conditional_phi_mean(sigma, mode) - (1 - gamma_of_n(sigma.n)) * phi(sigma))


def first_moment_bound(n: int) -> float:
    return 3 * math.pi / (4 * n)


# ── Second moment ─────────────────────────────────────────────────────────────

def conditional_second_moment(sigma: Permutation, trials: int, rng: np.random.Generator) -> dict:
    """Monte Carlo E[(ΔΦ)² | σ] over one sweep, with its standard error."""
    n = sigma.n
    block = draw_sweep_block(rng, n, trials)
    starts = np.repeat(sigma.as_array()[None, :], trials, axis=0)
    after = sweep_batch(starts, block.left_to_right, block.bits)
    squares = (phi_batch(after) - phi(sigma)) ** 2
    return mean_with_stderr(squares)


def second_moment_estimate(n: int, trials: int, rng: np.random.Generator, states: int = 20) -> dict:
    """
    Largest estimated E[(ΔΦ)²|σ] over the identity, the reversal and random
    uniform states.

    Raises:
        ValueError: If fewer than 1000 trials are requested.
    """
    if trials < 1000:
        raise ValueError(f"second_moment_estimate needs at least 1000 trials, got {trials}")

    candidates = [Permutation.identity(n), Permutation.reversal(n)]
    candidates += [random_permutation(n, rng) for _ in range(max(states - 2, 0))]

    best = None
    for sigma in candidates:
        summary = conditional_second_moment(sigma, trials, rng)
        if best is None or summary["mean"] > best["estimate"]:
            best = {"estimate": summary["mean"], "stderr": summary["stderr"], "state": str(sigma)}

    best.update({"n": n, "trials": trials, "states": len(candidates)})
    return best


def fit_second_moment_constant(ns, trials: int, seed: int) -> dict:
    """Ĉ = max_n estimate(n) / (n log n) over the given sizes."""
    per_n = {}
    for n in ns:
        estimate = second_moment_estimate(n, trials, trial_rng(seed, n))
        per_n[n] = estimate["estimate"] / (n * math.log(n))
    c_hat = max(per_n.values())
    logger.info("Fitted second moment constant", extra={"c_hat": c_hat, "sizes": list(per_n)})
    return {"c_hat": c_hat, "per_n": per_n}


# ── Assembled bound for the CAT shuffle ───────────────────────────────────────

def cat_wilson_inputs(n: int, eps: float, c_hat: float | None = None) -> WilsonInputs:
    if n < 8:
        raise ValueError(f"The CAT lower bound needs n >= 8, got {n}")
    c_hat = get_second_moment_constant() if c_hat is None else c_hat
    return WilsonInputs(
        phi0=phi(Permutation.identity(n)),
        gamma=gamma_of_n(n),
        delta=first_moment_bound(n),
        R=c_hat * n * math.log(n),
        phi_sup=n ** 2 / 8,
        eps=eps,
    )


def effective_constant(w: WilsonInputs, n: int) -> float:
    """c with 2γ⋆t = log n − log(c·log n/ε) for the bound t of w."""
    return 48 * n * (w.delta * w.phi_sup + w.R) / (w.gamma * w.phi0 ** 2 * math.log(n))


def cat_lower_bound(n: int, eps: float, c_hat: float | None = None, units: str = "sweeps") -> dict:
    """
    Lower bound on t_mix(1 − ε) for the CAT shuffle from Φ started at the identity.

    Args:
        n: Deck size, at least 8.
        eps: Target TV deficit.
        c_hat: Second-moment constant; defaults to CATMIX_SECOND_MOMENT_C.
        units: "sweeps" or "steps" (steps = sweeps × (n-1)).

    Returns:
        Dictionary with t_lower, units and every Wilson input.
    """
    if units not in ("sweeps", "steps"):
        raise ValueError(f"units must be 'sweeps' or 'steps', got {units!r}")
    w = cat_wilson_inputs(n, eps, c_hat)
    t = wilson_lower_bound(w)
    if units == "steps":
        t *= n - 1
    if t <= 0:
        logger.warning("Vacuous CAT lower bound", extra={"n": n, "eps": eps, "t_lower": t})

    return {
        "n": n,
        "t_lower": t,
        "units": units,
        "c_hat": w.R / (n * math.log(n)),
        "c_eff": effective_constant(w, n),
        **asdict(w),
    }


# ── Oracle chains ─────────────────────────────────────────────────────────────

def lazy_cycle_kernel(m: int) -> np.ndarray:
    """Lazy walk on Z/m: stay 1/2, step ±1 with 1/4 each."""
    P = np.zeros((m, m))
    for x in range(m):
        P[x, x] += 0.5
        P[x, (x + 1) % m] += 0.25
        P[x, (x - 1) % m] += 0.25
    return P


def _tv_curve_from(P: np.ndarray, start: int, pi: np.ndarray, t: int) -> float:
    row = np.zeros(len(P))
    row[start] = 1.0
    for _ in range(t):
        row = row @ P
    return float(0.5 * np.abs(row - pi).sum())


def cycle_wilson_check(m: int, eps: float) -> dict:
    """
    Wilson bound for the lazy cycle walk with the exact eigenfunction
    Φ(x) = cos(2πx/m) against its exact TV.

    The bound is negative for every m, so the TV is read at max(t, 0).
    """
    P = lazy_cycle_kernel(m)
    x = np.arange(m)
    values = np.cos(2 * np.pi * x / m)
    gamma = (1 - math.cos(2 * math.pi / m)) / 2
    R = float(np.max(P @ values ** 2 - 2 * values * (P @ values) + values ** 2))

    w = WilsonInputs(phi0=1.0, gamma=gamma, delta=0.0, R=R, phi_sup=1.0, eps=eps)
    t = wilson_lower_bound(w)
    checked = max(math.floor(t), 0)
    tv = _tv_curve_from(P, 0, np.full(m, 1 / m), checked)
    return {"m": m, "t_lower": t, "t_checked": checked, "tv": tv, "holds": tv >= 1 - eps}


def ehrenfest_kernel(d: int) -> np.ndarray:
    """
    Hamming weight of the lazy walk on {0,1}^d (pick a coordinate, refresh it
    with a fair bit).
    """
    P = np.zeros((d + 1, d + 1))
    for w in range(d + 1):
        up = (d - w) / (2 * d)
        down = w / (2 * d)
        if w < d:
            P[w, w + 1] = up
        if w > 0:
            P[w, w - 1] = down
        P[w, w] = 1 - up - down
    return P


def ehrenfest_wilson_check(d: int, eps: float) -> dict:
    """
    Wilson bound from the all-zeros corner with Φ = Σ(−1)^{x_i}, an exact
    eigenfunction with γ = 1/d, δ = 0 and R = 2, against the exact TV of the
    lumped weight chain.
    """
    w = WilsonInputs(phi0=float(d), gamma=1 / d, delta=0.0, R=2.0, phi_sup=float(d), eps=eps)
    t = wilson_lower_bound(w)
    checked = max(math.floor(t), 0)
    pi = stats.binom.pmf(np.arange(d + 1), d, 0.5)
    tv = _tv_curve_from(ehrenfest_kernel(d), 0, pi, checked)
    return {"d": d, "t_lower": t, "t_checked": checked, "tv": tv, "holds": tv >= 1 - eps}


# ── Monte Carlo diagnostics ───────────────────────────────────────────────────

def expected_phi_path(n: int, sweeps: int) -> np.ndarray:
    """E[Φ_s] from the identity for s = 0..sweeps, through the σ̃ recursion."""
    A = vbar_matrix(n).astype(float)
    heights = np.array(sigma_tilde_field(Permutation.identity(n)).values[: n - 1, n // 2 - 1], dtype=float)
    path = []
    for _ in range(sweeps + 1):
        path.append(float(heights @ sin_weights(n)))
        heights = A @ heights
    return np.array(path)


def drift_check(n: int, sweeps: int, trials: int, seed: int, c_hat: float | None = None) -> pd.DataFrame:
    """
    Per-sweep mean and variance of Φ from the identity next to the drift floor
    (1−γ)^sΦ₀ − δ/γ, the variance cap 3(δ‖Φ‖∞ + R)/γ and the exact mean.
    """
    w = cat_wilson_inputs(n, 0.25, c_hat)
    starts = np.repeat(Permutation.identity(n).as_array()[None, :], trials, axis=0)
    expected = expected_phi_path(n, sweeps)
    variance_cap = 3 * (w.delta * w.phi_sup + w.R) / w.gamma

    def row(s: int, states: np.ndarray) -> dict:
        values = phi_batch(states)
        summary = mean_with_stderr(values)
        return {
            "sweep": s,
            "mean_phi": summary["mean"],
            "stderr": summary["stderr"],
            "expected_phi": expected[s],
            "floor": (1 - w.gamma) ** s * w.phi0 - w.delta / w.gamma,
            "variance": float(values.var()),
            "variance_cap": variance_cap,
        }

    rows = [row(0, starts)]
    rows += [row(s, states) for s, states in evolve_batch(starts, seed, sweeps)]
    return pd.DataFrame(rows)


def _uniform_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0, 1])))


def distinguishing_time(n: int, trials: int, seed: int, max_sweeps: int | None = None) -> dict:
    """
    First sweep at which ℙ_id(Φ_t ≥ τ) − μ(Φ ≥ τ) drops below 1/2, with τ two
    uniform standard deviations of Φ.

    Raises:
        ValueError: If the gap never closes within max_sweeps (default n²).
    """
    max_sweeps = max_sweeps or n * n
    rng = _uniform_rng(seed)
    uniform = np.stack([rng.permutation(n) + 1 for _ in range(trials)])
    uniform_phi = phi_batch(uniform)
    threshold = 2 * float(uniform_phi.std())
    p_uniform = float((uniform_phi >= threshold).mean())

    starts = np.repeat(Permutation.identity(n).as_array()[None, :], trials, axis=0)
    for s, states in evolve_batch(starts, seed, max_sweeps):
        if float((phi_batch(states) >= threshold).mean()) - p_uniform < 0.5:
            logger.info("Distinguishing time", extra={"n": n, "sweeps": s, "threshold": threshold})
            return {"n": n, "sweeps": s, "threshold": threshold, "p_uniform": p_uniform, "trials": trials}

    raise ValueError(f"Distinguishing gap did not close within {max_sweeps} sweeps at n={n}")

