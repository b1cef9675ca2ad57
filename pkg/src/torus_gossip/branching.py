"""The flattened age-structured branching process and its growth martingales.

An individual of age ``a`` gives birth at rate ``rho * nu_k * a^d``; the
population birth times ``0 = tau_0 < tau_1 < ...`` therefore form a point
process whose compensator is the running integral of that rate over all
current individuals.  With ``lam = (d! rho nu_k)^{1/(d+1)}`` the scaled sums

    H_l(t) = sum_j (lam * (t - tau_j))^l / l!,     l = 0..d,

form a Markov vector, and the compensator is the same expression at
``l = d+1``.  Between births the compensator is an explicit polynomial, so
the next birth is sampled exactly by inverting a degree-(d+1) polynomial
against a fresh Exp(1) draw -- no time discretization anywhere.

For each (d+1)-th root of unity ``x_j`` the combination

    W_j(t) = sum_{r=0}^{d} exp(-lam x_j t) x_j^r H_r(t)

is a (complex) martingale with ``W_j(0) = 1``; ``W_0(t)`` is real, positive,
and converges to the limit growth variable W with mean 1 and variance <= 1.
``sample_w_batch`` draws W at a finite horizon ``T = horizon_mult / lam`` by
unrolling the process generation by generation (each individual's offspring
on ``(b, T]`` is Poisson with mean ``(lam (T-b))^{d+1}/(d+1)!`` and ages
distributed as ``(T-b) * U^{1/(d+1)}``), which vectorizes over replicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConvergenceError, ResourceLimitError

__all__ = [
    "CmjParams",
    "CmjState",
    "HVector",
    "UnitRoots",
    "WMartingales",
    "malthusian_lambda",
    "unit_roots_and_zeta",
    "new_cmj_state",
    "append_birth",
    "advance_time",
    "h_vector",
    "h_scalars_from_pow_sums",
    "invert_clock_increment",
    "next_birth_time",
    "run_cmj_until",
    "w_martingales",
    "h_reconstruction",
    "sample_W",
    "sample_w_batch",
]


def malthusian_lambda(d: int, rho: float, nu_k: float) -> float:
    """Exponential growth rate: the positive root of rho*nu_k*d!/lam^{d+1} = 1."""
    if not (isinstance(d, int) and d >= 1):
        raise ConfigError(f"d must be an integer >= 1, got {d!r}")
    if not (rho > 0.0 and nu_k > 0.0):
        raise ConfigError(f"rho and nu_k must be positive, got rho={rho}, nu_k={nu_k}")
    lam = (math.factorial(d) * rho * nu_k) ** (1.0 / (d + 1))
    # Closed form of the defining integral: rho*nu_k*d!/lam^{d+1} must be 1.
    check = rho * nu_k * math.factorial(d) / lam ** (d + 1)
    if abs(check - 1.0) > 1e-12:
        raise ConvergenceError(f"growth-rate identity violated: {check} != 1")
    return lam


@dataclass(frozen=True)
class CmjParams:
    """Branching-rate parameters; ``lam`` is derived, never passed."""

    d: int
    rho: float
    nu_k: float
    lam: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "lam", malthusian_lambda(self.d, self.rho, self.nu_k))

    @classmethod
    def from_lambda(cls, d: int, lam: float, nu_k: float) -> "CmjParams":
        """Construct from a target growth rate (rho is solved for)."""
        if not lam > 0.0:
            raise ConfigError(f"lam must be positive, got {lam}")
        rho = lam ** (d + 1) / (math.factorial(d) * nu_k)
        return cls(d=d, rho=rho, nu_k=nu_k)


@dataclass(frozen=True)
class UnitRoots:
    """(d+1)-th roots of unity with the spectral-gap constant zeta(d).

    ``zeta`` follows the piecewise convention (1/2 for d <= 6, else
    1 - cos(2*pi/d)); ``min_gap`` is the directly computed
    min(1 - Re x_1, 1/2).  The two agree for d <= 5; downstream code uses
    ``zeta``.  Only d in {1,2,3} occurs at runtime, where both equal 1/2.
    """

    roots: tuple
    real_parts: tuple
    zeta: float
    min_gap: float


def unit_roots_and_zeta(d: int) -> UnitRoots:
    if not (isinstance(d, int) and d >= 1):
        raise ConfigError(f"d must be an integer >= 1, got {d!r}")
    n = d + 1
    roots = [complex(1.0, 0.0)]
    for j in range(1, n):
        ang = 2.0 * math.pi * j / n
        roots.append(complex(math.cos(ang), math.sin(ang)))
    # Enforce exact conjugate pairing and an exact -1 when n is even.
    if n % 2 == 0:
        roots[n // 2] = complex(-1.0, 0.0)
    for j in range(1, (n + 1) // 2):
        roots[n - j] = roots[j].conjugate()
    zeta = 0.5 if d <= 6 else 1.0 - math.cos(2.0 * math.pi / d)
    min_gap = min(1.0 - roots[1].real, 0.5) if n >= 2 else 0.5
    return UnitRoots(
        roots=tuple(roots),
        real_parts=tuple(r.real for r in roots),
        zeta=zeta,
        min_gap=min_gap,
    )


@dataclass
class CmjState:
    """Ordered birth times plus running power sums (clock sufficient statistics).

    ``pow_sums[k] = sum_j tau_j^k`` for k = 0..d; these give the H-vector at
    any t >= t_now in O(d^2) without touching the birth list.  Checkpoint
    statistics (``h_vector``, ``w_martingales``) recompute from the raw birth
    times instead, so no accumulated-shift error can reach reported values.
    """

    params: CmjParams
    births: list
    t_now: float
    pow_sums: list


@dataclass(frozen=True)
class HVector:
    """H_0..H_d and the compensator value a_cum = H_{d+1}, at time t."""

    h: tuple
    a_cum: float
    t: float


@dataclass(frozen=True)
class WMartingales:
    """The d+1 complex martingale values at time t (w[0] is real positive)."""

    w: tuple
    t: float


def new_cmj_state(params: CmjParams) -> CmjState:
    pow_sums = [1.0] + [0.0] * params.d  # ancestor at tau = 0
    return CmjState(params=params, births=[0.0], t_now=0.0, pow_sums=pow_sums)


def append_birth(state: CmjState, t: float) -> None:
    if t <= state.births[-1]:
        raise ValueError(f"births must strictly increase: {t} <= {state.births[-1]}")
    state.births.append(t)
    ps = state.pow_sums
    ps[0] += 1.0
    p = 1.0
    for k in range(1, len(ps)):
        p *= t
        ps[k] += p
    state.t_now = t


def advance_time(state: CmjState, t: float) -> None:
    if t < state.t_now:
        raise ValueError(f"cannot move time backwards: {t} < {state.t_now}")
    state.t_now = t


def h_vector(state: CmjState, t: float) -> HVector:
    """Exact recompute of (H_0..H_d, A(t)) from the stored birth times."""
    if t < state.births[-1]:
        raise ValueError(f"t={t} precedes the last birth {state.births[-1]}")
    d = state.params.d
    ages = state.params.lam * (t - np.asarray(state.births, dtype=np.float64))
    h = [float(len(state.births))]
    term = np.ones_like(ages)
    for l in range(1, d + 2):
        term = term * ages / l
        h.append(float(term.sum()))
    return HVector(h=tuple(h[: d + 1]), a_cum=h[d + 1], t=t)


def h_scalars_from_pow_sums(pow_sums: Sequence[float], t: float, lam: float) -> list:
    """H_0..H_d at time t from power sums S_k = sum tau^k (k = 0..d).

    Binomial expansion of the age sums:
    H_m = lam^m/m! * sum_j (t - tau_j)^m
        = lam^m/m! * sum_{k<=m} C(m,k) t^{m-k} (-1)^k S_k.
    """
    d = len(pow_sums) - 1
    h = [pow_sums[0]]
    lam_pow = 1.0
    fact = 1.0
    for m in range(1, d + 1):
        lam_pow *= lam
        fact *= m
        acc = 0.0
        comb = 1.0
        sign = 1.0
        for k in range(0, m + 1):
            acc += comb * t ** (m - k) * sign * pow_sums[k]
            sign = -sign
            comb = comb * (m - k) / (k + 1)
        h.append(lam_pow * acc / fact)
    return h


def invert_clock_increment(h: Sequence[float], e: float) -> float:
    """Solve sum_m h[m] * x^{d+1-m}/(d+1-m)! == e for the unique x > 0.

    ``h = (H_0..H_d)`` at the current time; the left side is then the
    compensator increment after a lambda-scaled step x.  All coefficients are
    nonnegative and H_0 >= 1, so g is strictly increasing and convex.  Each
    single term alone reaches e at x_k = (k! e / c_k)^{1/k}; the minimum of
    those is therefore an upper bound for the root, and Newton from above
    converges monotonically.  A bisection fallback on [0, x0] guards the
    (never observed) case of rounding-induced stall.
    """
    deg = len(h)  # d + 1
    coeff = [0.0] * (deg + 1)  # coeff[k] multiplies x^k, k = 1..deg
    for m, hm in enumerate(h):
        k = deg - m
        coeff[k] = hm / math.factorial(k)
    x0 = None
    for k in range(1, deg + 1):
        if coeff[k] > 0.0:
            cand = (e / coeff[k]) ** (1.0 / k)
            if x0 is None or cand < x0:
                x0 = cand
    if x0 is None or not math.isfinite(x0):
        raise ConvergenceError("clock inversion: no positive coefficients")

    def g_and_slope(x: float) -> tuple:
        acc = coeff[deg]
        slope = deg * coeff[deg]
        for k in range(deg - 1, 0, -1):
            acc = acc * x + coeff[k]
            slope = slope * x + k * coeff[k]
        return acc * x, slope

    x = x0
    for _ in range(100):
        g, slope = g_and_slope(x)
        step = (g - e) / slope
        x_new = x - step
        if x_new < 0.0:
            x_new = 0.5 * x
        if abs(x_new - x) <= 1e-13 * max(x, x_new):
            return x_new
        x = x_new
    # Fallback: bisection on the guaranteed bracket.
    lo, hi = 0.0, x0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g, _ = g_and_slope(mid)
        if g < e:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(hi, 1e-300):
            return 0.5 * (lo + hi)
    raise ConvergenceError("clock inversion did not converge")


def next_birth_time(state: CmjState, rng: np.random.Generator) -> float:
    """Exact draw of the next birth time; commits nothing to the state."""
    e = float(rng.exponential())
    h = h_scalars_from_pow_sums(state.pow_sums, state.t_now, state.params.lam)
    x = invert_clock_increment(h, e)
    return state.t_now + x / state.params.lam


def run_cmj_until(
    state: CmjState,
    t_end: float,
    rng: np.random.Generator,
    population_cap: int = 10_000_000,
) -> CmjState:
    """Generate all births up to t_end; overshoot draws are discarded exactly.

    The compensator increment to the next birth is Exp(1) independent of the
    past, so discarding an overshoot beyond t_end and later drawing afresh
    reproduces the conditional law exactly (memorylessness in compensator
    scale).
    """
    if t_end < state.t_now:
        raise ValueError(f"t_end={t_end} precedes t_now={state.t_now}")
    while True:
        t = next_birth_time(state, rng)
        if t > t_end:
            state.t_now = t_end
            return state
        append_birth(state, t)
        if len(state.births) > population_cap:
            raise ResourceLimitError(
                f"population cap {population_cap} exceeded at t={t:.6g}"
            )


def w_martingales(state: CmjState, t: float) -> WMartingales:
    """All d+1 martingale values at time t via the closed-form H combination."""
    hv = h_vector(state, t)
    d = state.params.d
    lam = state.params.lam
    roots = unit_roots_and_zeta(d).roots
    w = []
    for x in roots:
        s = 0.0 + 0.0j
        xp = 1.0 + 0.0j
        for r in range(d + 1):
            s += xp * hv.h[r]
            xp *= x
        w.append(np.exp(-lam * x * t) * s)
    # x = 1 gives a real value exactly; strip the zero imaginary part.
    w[0] = complex(w[0].real, 0.0)
    return WMartingales(w=tuple(w), t=t)


def h_reconstruction(wm: WMartingales, d: int, lam: float) -> list:
    """Reconstruct the scaled H-vector from the martingale family.

    Root-of-unity orthogonality inverts the defining combination:
    (1/(d+1)) sum_l x_j^l exp(-lam (1 - x_l) t) W_l(t) equals
    exp(-lam t) H_{(d+1-j) mod (d+1)}(t).  The returned list is indexed so
    that entry j equals exp(-lam t) H_j(t) (reflection already applied).
    """
    roots = unit_roots_and_zeta(d).roots
    n = d + 1
    t = wm.t
    raw = []
    for j in range(n):
        xj = roots[j]
        s = 0.0 + 0.0j
        xp = 1.0 + 0.0j
        for l in range(n):
            s += xp * np.exp(-lam * (1.0 - roots[l]) * t) * wm.w[l]
            xp *= xj
        raw.append(s / n)
    out = [0.0] * n
    for j in range(n):
        out[(n - j) % n] = raw[j]
    return out


def sample_W(
    params: CmjParams,
    horizon_mult: float,
    rng: np.random.Generator,
    population_cap: int = 10_000_000,
) -> float:
    """One draw of the limit variable W, truncated at T = horizon_mult/lam.

    Truncation standard error is at most exp(-horizon_mult/2) (the remaining
    martingale increments have conditional variance bounded by W(T) e^{-lam T}).
    """
    return float(sample_w_batch(params, horizon_mult, 1, rng, population_cap)[0])


def sample_w_batch(
    params: CmjParams,
    horizon_mult: float,
    n: int,
    rng: np.random.Generator,
    population_cap: int = 10_000_000,
    chunk: int = 128,
) -> np.ndarray:
    """n independent draws of W(T), vectorized generation by generation.

    Each individual born at b has, independently, Poisson((lam(T-b))^{d+1}/(d+1)!)
    offspring on (b, T], with ages distributed as (T-b) U^{1/(d+1)} -- exactly
    the inhomogeneous-Poisson law of the per-individual birth process -- so the
    recursion over generations reproduces the full process law restricted to
    [0, T].  Replicates are processed in fixed-size chunks; results depend only
    on the generator state, n, and the chunk size (kept at its default
    everywhere in this package).
    """
    if horizon_mult < 8.0:
        raise ConfigError(f"horizon_mult must be >= 8, got {horizon_mult}")
    if n < 1:
        raise ValueError("n must be >= 1")
    d, lam = params.d, params.lam
    T = horizon_mult / lam
    inv_fact_top = 1.0 / math.factorial(d + 1)

    if d == 1:
        age_root = np.sqrt
    elif d == 2:
        age_root = np.cbrt
    else:

        def age_root(u: np.ndarray) -> np.ndarray:
            return u ** (1.0 / (d + 1))

    def poly_sum(age: np.ndarray) -> np.ndarray:
        # sum_{l<=d} age^l / l!, specialized per dimension (hot path).
        if d == 1:
            return 1.0 + age
        if d == 2:
            return 1.0 + age + 0.5 * age * age
        a2 = age * age
        return 1.0 + age + 0.5 * a2 + (1.0 / 6.0) * a2 * age

    def intensity_pow(y: np.ndarray) -> np.ndarray:
        # y^{d+1} by repeated multiplication (faster than np.power).
        acc = y * y
        for _ in range(d - 1):
            acc = acc * y
        return acc

    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, chunk):
        c = min(chunk, n - lo)
        h_acc = np.zeros(c, dtype=np.float64)
        born = np.zeros(c, dtype=np.float64)
        rep = np.arange(c, dtype=np.int64)
        totals = np.ones(c, dtype=np.float64)
        while born.size:
            h_acc += np.bincount(rep, weights=poly_sum(lam * (T - born)), minlength=c)
            mu = intensity_pow(lam * (T - born)) * inv_fact_top
            counts = rng.poisson(mu)
            tot = int(counts.sum())
            if tot == 0:
                break
            if tot > 60_000_000:
                raise ResourceLimitError(
                    f"generation of {tot} births exceeds the array-size guard"
                )
            totals += np.bincount(rep, weights=counts, minlength=c)
            if float(totals.max()) > population_cap:
                raise ResourceLimitError(
                    f"population cap {population_cap} exceeded in W sampling"
                )
            rep = np.repeat(rep, counts)
            b0 = np.repeat(born, counts)
            born = b0 + (T - b0) * age_root(rng.random(tot))
        out[lo : lo + c] = math.exp(-lam * T) * h_acc
    return out
