"""
Linear recursions for expected σ̃ rows.

v̄ evolves E[σ̃_t(·, y)] exactly over one sweep. u dominates v̄ and is the
X-walk killed outside [1, n-1]; its difference sequence d is the X-walk
killed outside [1, n]. All three are applied as coefficient matrices, either
over Fractions (object arrays) or floats.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pandas as pd

from src.permcore import Permutation, sigma_tilde_field

logger = logging.getLogger(__name__)

KINDS = ("vbar", "u", "d")
EXACT_STEPS = 30
EXACT_MAX_N = 20


@dataclass(frozen=True)
class DecayVector:
    """
    values[x-1] for x = 1..n-1 (vbar, u) or x = 1..n (d).

    Object arrays hold Fractions; float arrays hold doubles.
    """
    n: int
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"Unknown decay vector kind {self.kind!r}")
        expected = self.n if self.kind == "d" else self.n - 1
        if len(self.values) != expected:
            raise ValueError(f"A {self.kind} vector for n={self.n} has {expected} entries, got {len(self.values)}")

    @property
    def exact(self) -> bool:
        return self.values.dtype == object


def _coefficient(k: int) -> Fraction:
    return Fraction(1, 2 ** (k + 3))


@lru_cache(maxsize=None)
def vbar_matrix(n: int) -> np.ndarray:
    """Coefficients of v̄_{t+Δ}(x) in terms of v̄_t(j), x, j in 1..n-1."""
    size = n - 1
    A = np.full((size, size), Fraction(0), dtype=object)
    if n < 3:
        return A

    for x in range(2, n - 1):
        for k in range(-1, n - x - 1):
            A[x - 1, x + k - 1] += _coefficient(k)
        for k in range(-1, x - 1):
            A[x - 1, x - k - 1] += _coefficient(k)

    # boundary rows x = 1 and x = n-1 are mirror images
    A[0, 0] += Fraction(1, 8)
    A[0, 1] += Fraction(1, 4)
    A[size - 1, size - 1] += Fraction(1, 8)
    A[size - 1, size - 2] += Fraction(1, 4)
    for k in range(2, n - 1):
        A[0, k - 1] += Fraction(1, 2 ** (k + 2))
        A[size - 1, n - k - 1] += Fraction(1, 2 ** (k + 2))
    return A


@lru_cache(maxsize=None)
def u_matrix(n: int) -> np.ndarray:
    """Coefficients of u_{s+1}(x), x in 1..n-1, with u(0) = u(n) = 0."""
    return _killed_sum_matrix(n, upper=n - 1)


@lru_cache(maxsize=None)
def d_matrix(n: int) -> np.ndarray:
    """Coefficients of d_{s+1}(x), x in 1..n."""
    return _killed_sum_matrix(n, upper=n)


def _killed_sum_matrix(n: int, upper: int) -> np.ndarray:
    M = np.full((upper, upper), Fraction(0), dtype=object)
    for x in range(1, upper + 1):
        for k in range(-1, upper - x + 1):
            if 1 <= x + k <= upper:
                M[x - 1, x + k - 1] += _coefficient(k)
        for k in range(-1, x):
            if 1 <= x - k <= upper:
                M[x - 1, x - k - 1] += _coefficient(k)
    return M


@lru_cache(maxsize=None)
def _float_matrix(kind: str, n: int) -> np.ndarray:
    source = {"vbar": vbar_matrix, "u": u_matrix, "d": d_matrix}[kind](n)
    return source.astype(float)


def _matrix(kind: str, n: int, exact: bool) -> np.ndarray:
    return {"vbar": vbar_matrix, "u": u_matrix, "d": d_matrix}[kind](n) if exact else _float_matrix(kind, n)


def _step(vector: DecayVector, kind: str) -> DecayVector:
    if vector.kind != kind:
        raise ValueError(f"Expected a {kind} vector, got {vector.kind}")
    matrix = _matrix(kind, vector.n, vector.exact)
    return DecayVector(vector.n, kind, matrix.dot(vector.values))


def vbar_step(v: DecayVector) -> DecayVector:
    """One sweep of the exact expected-σ̃ recursion."""
    return _step(v, "vbar")


def u_step(u: DecayVector) -> DecayVector:
    return _step(u, "u")


def d_step(d: DecayVector) -> DecayVector:
    """One step of the X-walk killed outside [1, n]."""
    return _step(d, "d")


def evolve(vector: DecayVector, steps: int) -> list[DecayVector]:
    """The vector after 0..steps applications of its own recursion."""
    path = [vector]
    for _ in range(steps):
        path.append(_step(path[-1], vector.kind))
    return path


def sigma_tilde_start(n: int, y: int, sigma: Permutation | None = None, exact: bool = True) -> DecayVector:
    """v̄_0 = σ̃(·, y) at positions 1..n-1 (identity by default)."""
    sigma = sigma or Permutation.identity(n)
    column = sigma_tilde_field(sigma, exact=exact).values[: n - 1, y - 1]
    return DecayVector(n, "vbar", np.array(list(column), dtype=object if exact else float))


def as_kind(vector: DecayVector, kind: str) -> DecayVector:
    return DecayVector(vector.n, kind, vector.values.copy())


def difference(u: DecayVector) -> DecayVector:
    """d(x) = u(x) − u(x-1) for x = 1..n, with u(0) = u(n) = 0."""
    zero = Fraction(0) if u.exact else 0.0
    padded = np.concatenate([np.array([zero], dtype=u.values.dtype), u.values, np.array([zero], dtype=u.values.dtype)])
    return DecayVector(u.n, "d", padded[1:] - padded[:-1])


def boundary_leak(u: DecayVector) -> tuple:
    """
    The X-walk applied to u at the points 0 and n.

    d_step(difference(u)) equals difference(u_step(u)) except at x = 1, where
    it is smaller by the first value, and at x = n, where it is larger by the
    second.
    """
    from src.walks import x_pmf

    positions = range(1, u.n)
    w0 = sum((x_pmf(j) * v if u.exact else float(x_pmf(j)) * v for j, v in zip(positions, u.values)),
             Fraction(0) if u.exact else 0.0)
    wn = sum((x_pmf(j - u.n) * v if u.exact else float(x_pmf(j - u.n)) * v for j, v in zip(positions, u.values)),
             Fraction(0) if u.exact else 0.0)
    return w0, wn


# ── Decay reports ─────────────────────────────────────────────────────────────

def _identity_columns(n: int, exact: bool) -> np.ndarray:
    """Columns σ̃_id(·, y) at positions 1..n-1, one column per y in 1..n-1."""
    values = sigma_tilde_field(Permutation.identity(n), exact=exact).values
    return np.array(values[: n - 1, : n - 1], dtype=object if exact else float)


def _abs_differences(columns: np.ndarray) -> np.ndarray:
    zero = np.zeros((1, columns.shape[1]), dtype=columns.dtype)
    if columns.dtype == object:
        zero[:] = Fraction(0)
    padded = np.vstack([zero, columns, zero])
    return np.abs(padded[1:] - padded[:-1])


def envelope_exponent(n: int, sweeps: int, delta: float) -> float:
    """exp(−(1−δ)π²t/n³) at raw time t = (n-1)·sweeps."""
    steps = (n - 1) * sweeps
    return math.exp(-(1 - delta) * math.pi ** 2 * steps / n ** 3)


def decay_table(
    n: int, sweeps: int, delta: float = 0.2, y: int | None = None, exact_until: int = EXACT_STEPS
) -> pd.DataFrame:
    """
    Per-sweep decay of the σ̃ rows started at the identity, for one label y
    or maximized over all y.

    d_mass is max_y Σ_l |d_0(l)|·‖d_s^(l)‖₁, u_inf is max_y ‖u_s‖∞, envelope is
    exp(−(1−δ)π²t/n³) and ratio is d_mass / envelope.

    Rows up to exact_until are computed in rational arithmetic when n is small
    enough; the arithmetic column records which regime produced each row.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    exact = n <= EXACT_MAX_N and exact_until > 0
    columns = _identity_columns(n, exact)
    if y is not None:
        if not 1 <= y <= n - 1:
            raise ValueError(f"y={y} out of range 1..{n - 1}")
        columns = columns[:, [y - 1]]
    weights = _abs_differences(columns)
    survival = np.array([Fraction(1)] * n, dtype=object) if exact else np.ones(n)

    rows = []
    for s in range(sweeps + 1):
        if exact and s > exact_until:
            exact = False
            columns = columns.astype(float)
            weights = weights.astype(float)
            survival = survival.astype(float)
            logger.debug("decay_table n=%d switched to floats at s=%d", n, s)

        d_mass = float(max(weights.T.dot(survival)))
        u_inf = float(np.max(np.abs(columns.astype(float))))
        envelope = envelope_exponent(n, s, delta)
        rows.append({
            "s": s,
            "d_mass": d_mass,
            "u_inf": u_inf,
            "envelope": envelope,
            "ratio": d_mass / envelope,
            "arithmetic": "exact" if exact else "float",
        })
        columns = _matrix("u", n, exact).dot(columns)
        survival = _matrix("d", n, exact).dot(survival)

    return pd.DataFrame(rows)


def decay_bound_check(n: int, t_sweeps: int, delta: float) -> dict:
    """
    Compares the decay of E[σ̃_t] from the identity with the envelope
    exp(−(1−δ)π²t/n³) at t = (n-1)·t_sweeps.

    ratio is d_mass / envelope; the bound n·(1 + O(tn^-5))·envelope is
    accepted when ratio ≤ 2n.
    """
    A = _float_matrix("vbar", n)
    U = _float_matrix("u", n)
    D = _float_matrix("d", n)
    columns = _identity_columns(n, exact=False)

    vbar = np.linalg.matrix_power(A, t_sweeps) @ columns
    u = np.linalg.matrix_power(U, t_sweeps) @ columns
    survival = np.linalg.matrix_power(D, t_sweeps) @ np.ones(n)
    d_mass = float(np.max(_abs_differences(columns).T @ survival))

    envelope = envelope_exponent(n, t_sweeps, delta)
    ratio = d_mass / envelope
    report = {
        "n": n,
        "sweeps": t_sweeps,
        "steps": (n - 1) * t_sweeps,
        "delta": delta,
        "lhs": float(np.max(np.abs(vbar))),
        "u_inf": float(np.max(u)),
        "d_mass": d_mass,
        "envelope": envelope,
        "ratio": ratio,
        "margin": 2 * n - ratio,
        "holds": ratio <= 2 * n,
    }
    logger.info("Decay bound check", extra=report)
    return report


def fitted_decay_rate(n: int, s_start: int, s_end: int, l: int | None = None) -> dict:
    """
    Fitted per-sweep log-decay of ‖d_s^(l)‖₁ against the log of the top
    eigenvalue of the killed X-walk and the diffusive guess −π²/n².
    """
    from src.analysis import fit_log_slope

    l = l or (n + 1) // 2
    D = _float_matrix("d", n)
    mass = np.zeros(n)
    mass[l - 1] = 1.0
    totals = []
    for s in range(s_end + 1):
        if s >= s_start:
            totals.append(mass.sum())
        mass = D @ mass

    fit = fit_log_slope(np.arange(s_start, s_end + 1), np.array(totals))
    top = float(np.max(np.abs(np.linalg.eigvalsh(D))))
    return {
        "n": n,
        "slope": fit["slope"],
        "log_top_eigenvalue": math.log(top),
        "diffusive_rate": -math.pi ** 2 / n ** 2,
    }
