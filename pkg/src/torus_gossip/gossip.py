"""Event-driven exact simulation of first-passage gossip spread on the torus.

Every transmission attempt is generated from the embedded branching clock
over ALL records (kept or not): the total intensity at time t is
``rho nu(K) sum_l (t - tau_l)^d``, whose compensator increment is polynomial
in the elapsed step, so the next event time is obtained exactly by polynomial
inversion of a standard exponential draw.  Each event then samples

  1. a source record with probability proportional to its disc volume
     ``(t - tau_l)^d`` (binary search on binomially expanded prefix power
     sums, O(d log n));
  2. a transmitter location uniform in the source disc and a target uniform
     on the torus;
  3. the thinning verdict: the event is kept iff its source is kept and is
     the EARLIEST kept record whose disc covers the transmitter — this is
     what keeps the kept-event rate equal to ``rho vol(L_t)``;
  4. a redundancy flag: kept, but the target was already covered.

Spatial queries (earliest cover, already-covered) run against a wrapped
grid over kept disc centers whose cell always dominates the largest disc
radius, so the 3^d neighborhood scan is exhaustive.

Overshooting events are discarded without being committed; by memorylessness
of the exponential in compensator scale this leaves the law of the process
exact at any stopping time, and snapshots therefore never carry a pending
event.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path

import numpy as np

from .branching import CmjParams, h_scalars_from_pow_sums, invert_clock_increment
from .errors import FormatError, GeometryError, ResourceLimitError
from .gridindex import GridIndex
from .torus import (
    Disc,
    TorusSpec,
    arc_union_length,
    coverage_times_batch,
    torus_distance,
    uniform_in_ball,
    uniform_point,
)

__all__ = [
    "TransmissionRecord",
    "GossipState",
    "ProcessStats",
    "Snapshot",
    "new_gossip_state",
    "next_event",
    "run_until",
    "snapshot",
    "restore",
    "save_snapshot",
    "load_snapshot",
    "isolated_kept_indices",
    "w_hat",
    "w_star",
    "coverage_fraction",
    "process_stats",
]

_NO_SOURCE = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class TransmissionRecord:
    """One transmission attempt; the ancestor has no source or transmitter."""

    tau: float
    p: tuple
    k_source: int | None
    q_source: tuple | None
    kept: bool
    redundant: bool


@dataclass(frozen=True)
class ProcessStats:
    """Counts and d-th power age sums over kept and over all records."""

    n_kept: int
    m_kept: float
    n_all: int
    m_all: float


@dataclass(eq=False)
class GossipState:
    """Mutable simulation state; one instance per worker, never shared.

    Records live in parallel lists (hot-path friendly); ``cum[k]`` holds the
    running prefix sums of ``tau^k`` over all records, which serve both the
    branching clock and the source-sampling search.  The grid indexes kept
    record centers only.
    """

    spec: TorusSpec
    params: CmjParams
    rng: np.random.Generator
    seed_key: int = 0
    t_now: float = 0.0
    taus: list = field(default_factory=list)
    ps: list = field(default_factory=list)
    qs: list = field(default_factory=list)
    k_sources: list = field(default_factory=list)
    kept: list = field(default_factory=list)
    redundant: list = field(default_factory=list)
    cum: list = field(default_factory=list)
    grid: GridIndex | None = None
    population_cap: int = 2_000_000

    @property
    def n_records(self) -> int:
        return len(self.taus)

    def record(self, j: int) -> TransmissionRecord:
        src = self.k_sources[j]
        return TransmissionRecord(
            tau=self.taus[j],
            p=self.ps[j],
            k_source=None if src < 0 else src,
            q_source=self.qs[j],
            kept=self.kept[j],
            redundant=self.redundant[j],
        )

    def records(self):
        return [self.record(j) for j in range(self.n_records)]

    def _ensure_grid(self, radius: float) -> None:
        if self.grid is not None and self.grid.covers_radius(radius):
            return
        cell = 2.0 * max(radius, 1.0 / self.params.lam)
        kept_idx = [j for j, k in enumerate(self.kept) if k]
        self.grid = GridIndex.build(
            self.spec.side,
            self.spec.d,
            cell,
            [self.ps[j] for j in kept_idx],
            kept_idx,
        )


def new_gossip_state(
    spec: TorusSpec,
    params: CmjParams,
    rng: np.random.Generator,
    seed_key: int = 0,
    origin=None,
    population_cap: int = 2_000_000,
) -> GossipState:
    """Fresh state with the ancestor record at time 0.

    The ancestor point defaults to a uniform draw (statistically irrelevant
    by translation invariance, but it keeps no point special).
    """
    if params.d != spec.d:
        raise GeometryError(
            f"dimension mismatch: torus d={spec.d}, branching d={params.d}"
        )
    state = GossipState(
        spec=spec,
        params=params,
        rng=rng,
        seed_key=seed_key,
        population_cap=population_cap,
    )
    p0 = tuple(origin) if origin is not None else uniform_point(rng, spec)
    state.taus.append(0.0)
    state.ps.append(p0)
    state.qs.append(None)
    state.k_sources.append(-1)
    state.kept.append(True)
    state.redundant.append(False)
    state.cum = [[1.0]] + [[0.0] for _ in range(spec.d)]
    state._ensure_grid(1.0 / params.lam)
    return state


def _sample_source(state: GossipState, t_new: float) -> int:
    """Index l < n with probability proportional to (t_new - tau_l)^d.

    The prefix mass up to L expands binomially over the running power sums,
    so each evaluation is O(d) and the whole draw O(d log n).  The branches
    below unroll the d <= 3 cases used by the torus.
    """
    d = state.spec.d
    n = state.n_records
    u = float(state.rng.random())
    c0 = state.cum[0]
    c1 = state.cum[1]
    t = t_new
    if d == 1:
        total = t * c0[n - 1] - c1[n - 1]
        target = u * total
        lo, hi = 0, n - 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if t * c0[mid] - c1[mid] > target:
                hi = mid
            else:
                lo = mid + 1
        return lo
    c2 = state.cum[2]
    if d == 2:
        a0 = t * t
        a1 = -2.0 * t
        total = a0 * c0[n - 1] + a1 * c1[n - 1] + c2[n - 1]
        target = u * total
        lo, hi = 0, n - 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if a0 * c0[mid] + a1 * c1[mid] + c2[mid] > target:
                hi = mid
            else:
                lo = mid + 1
        return lo
    c3 = state.cum[3]
    a0 = t * t * t
    a1 = -3.0 * t * t
    a2 = 3.0 * t
    total = a0 * c0[n - 1] + a1 * c1[n - 1] + a2 * c2[n - 1] - c3[n - 1]
    target = u * total
    lo, hi = 0, n - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if a0 * c0[mid] + a1 * c1[mid] + a2 * c2[mid] - c3[mid] > target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _covered_by_earlier(state: GossipState, point, t_new: float, before: int) -> bool:
    """True iff some kept disc with index < ``before`` covers ``point`` at
    t_new (squared-distance comparison, first hit wins)."""
    spec = state.spec
    side = spec.side
    half = 0.5 * side
    taus = state.taus
    ps = state.ps
    if spec.d == 1:
        q0 = point[0]
        for idx in state.grid.candidates(point):
            if idx >= before:
                continue
            delta = q0 - ps[idx][0]
            if delta < 0.0:
                delta = -delta
            if delta > half:
                delta = side - delta
            if delta <= t_new - taus[idx]:
                return True
        return False
    for idx in state.grid.candidates(point):
        if idx >= before:
            continue
        acc = 0.0
        for cq, cp in zip(point, ps[idx]):
            delta = cq - cp
            if delta < 0.0:
                delta = -delta
            if delta > half:
                delta = side - delta
            acc += delta * delta
        r = t_new - taus[idx]
        if acc <= r * r:
            return True
    return False


def _step(state: GossipState, t_limit: float) -> bool:
    """Generate the next transmission attempt; commit it iff its time is
    <= t_limit.  On overshoot the pending event is discarded and t_now is set
    to t_limit (exact by memorylessness in compensator scale).  Returns
    whether an event was committed."""
    spec = state.spec
    lam = state.params.lam
    d = spec.d
    rng = state.rng
    cum = state.cum

    e = float(rng.standard_exponential())
    if d == 1:
        # The compensator increment is quadratic in the lambda-scaled step:
        # (S_0/2) x^2 + H_1 x = e, solved in the cancellation-free form.
        s0 = cum[0][-1]
        h1 = lam * (state.t_now * s0 - cum[1][-1])
        x = 2.0 * e / (h1 + math.sqrt(h1 * h1 + 2.0 * s0 * e))
    else:
        pow_sums = [c[-1] for c in cum]
        h = h_scalars_from_pow_sums(pow_sums, state.t_now, lam)
        x = invert_clock_increment(h, e)
    t_new = state.t_now + x / lam
    if t_new > t_limit:
        state.t_now = t_limit
        return False
    if state.n_records >= state.population_cap:
        raise ResourceLimitError(
            f"population cap {state.population_cap} reached at t={state.t_now:.4f}"
        )
    if t_new >= spec.wrap_radius:
        raise GeometryError(
            f"event at t={t_new:.4f} would let the oldest disc reach the "
            f"wrap radius {spec.wrap_radius}"
        )

    k_src = _sample_source(state, t_new)
    q = uniform_in_ball(rng, state.ps[k_src], t_new - state.taus[k_src], spec)
    p = uniform_point(rng, spec)

    # Kept iff the source is kept and no EARLIER kept disc covers the
    # transmitter (the source's own disc always does, so it is the earliest
    # covering record exactly when nothing below it covers q).
    is_kept = False
    if state.kept[k_src]:
        state._ensure_grid(t_new)
        is_kept = not _covered_by_earlier(state, q, t_new, k_src)

    is_red = is_kept and _covered_by_earlier(
        state, p, t_new, state.n_records
    )

    j = state.n_records
    state.taus.append(t_new)
    state.ps.append(p)
    state.qs.append(q)
    state.k_sources.append(k_src)
    state.kept.append(is_kept)
    state.redundant.append(is_red)
    cum[0].append(cum[0][-1] + 1.0)
    tp = 1.0
    for k in range(1, d + 1):
        tp *= t_new
        cum[k].append(cum[k][-1] + tp)
    if is_kept:
        state.grid.insert(j, p)
    state.t_now = t_new
    return True


def next_event(state: GossipState) -> TransmissionRecord:
    """Generate, thin, and append the next transmission attempt."""
    _step(state, math.inf)
    return state.record(state.n_records - 1)


def run_until(state: GossipState, t_target: float, checkpoints=(), observe=None):
    """Advance the state to ``t_target``, visiting ``checkpoints`` on the way.

    ``checkpoints`` must be ascending times <= t_target; after the state
    reaches each one, ``observe(state, t)`` is called (when provided).  The
    final overshooting event is discarded, which is exact by memorylessness.
    """
    if t_target < state.t_now:
        raise GeometryError(
            f"t_target {t_target} precedes current time {state.t_now}"
        )
    if t_target > state.spec.wrap_radius:
        raise GeometryError(
            f"t_target {t_target} exceeds the wrap radius "
            f"{state.spec.wrap_radius}; discs would self-overlap"
        )
    prev = state.t_now
    for c in checkpoints:
        if c < prev or c > t_target:
            raise GeometryError(
                f"checkpoint {c} outside [{prev}, {t_target}] or out of order"
            )
        while _step(state, c):
            pass
        if observe is not None:
            observe(state, c)
        prev = c
    while _step(state, t_target):
        pass
    return state


def isolated_kept_indices(state: GossipState, v: float) -> list:
    """Indices of kept, non-redundant records born by v whose discs are
    pairwise non-intersecting at v within that set (the mass estimator's
    support; its emptiness is a gating condition upstream)."""
    if v > state.t_now:
        raise GeometryError(f"v={v} is in the future of the state ({state.t_now})")
    idx = [
        j
        for j in range(state.n_records)
        if state.kept[j] and not state.redundant[j] and state.taus[j] <= v
    ]
    if len(idx) <= 1:
        return idx
    centers = np.array([state.ps[j] for j in idx], dtype=np.float64)
    births = np.array([state.taus[j] for j in idx], dtype=np.float64)
    radii = v - births
    side = state.spec.side
    out = []
    for i in range(len(idx)):
        delta = np.abs(centers - centers[i])
        np.minimum(delta, side - delta, out=delta)
        dist = np.sqrt((delta * delta).sum(axis=1))
        hit = dist <= radii + radii[i]
        hit[i] = False
        if not hit.any():
            out.append(idx[i])
    return out


def w_hat(state: GossipState, v: float) -> float:
    """Mass estimator over isolated kept discs at time v.

    Sums ``e^{-lam v} sum_{l<=d} (lam (v - tau_j))^l / l!`` over
    :func:`isolated_kept_indices`.  Terms are added with exact summation, so
    the value is invariant under any reordering of the records.
    """
    idx = isolated_kept_indices(state, v)
    if not idx:
        return 0.0
    lam = state.params.lam
    d = state.spec.d
    terms = []
    for j in idx:
        age = lam * (v - state.taus[j])
        term = 1.0
        acc = 1.0
        for l in range(1, d + 1):
            acc = acc * age / l
            term += acc
        terms.append(term)
    return math.exp(-lam * v) * math.fsum(terms)


def w_star(state: GossipState, s: float) -> float:
    """Diagnostic mass over ALL records born by s (no thinning, no isolation)."""
    if s > state.t_now:
        raise GeometryError(f"s={s} is in the future of the state ({state.t_now})")
    lam = state.params.lam
    d = state.spec.d
    cnt = bisect_right(state.taus, s)
    terms = []
    for j in range(cnt):
        age = lam * (s - state.taus[j])
        term = 1.0
        acc = 1.0
        for l in range(1, d + 1):
            acc = acc * age / l
            term += acc
        terms.append(term)
    return math.exp(-lam * s) * math.fsum(terms)


def coverage_fraction(
    state: GossipState,
    t: float,
    m: int,
    rng: np.random.Generator,
    exact: bool = False,
) -> tuple[float, float]:
    """Covered volume fraction of the kept-disc union at time t.

    Monte Carlo over m fresh uniform probes with binomial standard error;
    with ``exact=True`` on the circle the union length is computed exactly
    by the arc sweep and the standard error is zero.
    """
    if t > state.t_now:
        raise GeometryError(f"t={t} is in the future of the state ({state.t_now})")
    kept_idx = [
        j for j in range(state.n_records) if state.kept[j] and state.taus[j] <= t
    ]
    if exact:
        if state.spec.d != 1:
            raise GeometryError("exact coverage is only available for d=1")
        discs = [Disc(state.ps[j], state.taus[j]) for j in kept_idx]
        return arc_union_length(discs, t, state.spec) / state.spec.side, 0.0
    if m <= 0:
        raise ValueError(f"probe count must be positive, got {m}")
    if not kept_idx:
        return 0.0, 0.0
    centers = np.array([state.ps[j] for j in kept_idx], dtype=np.float64)
    births = np.array([state.taus[j] for j in kept_idx], dtype=np.float64)
    probes = rng.random((m, state.spec.d)) * state.spec.side
    times = coverage_times_batch(probes, centers, births, state.spec)
    p_hat = float(np.mean(times <= t))
    se = math.sqrt(p_hat * (1.0 - p_hat) / m)
    return p_hat, se


def process_stats(state: GossipState, t: float) -> ProcessStats:
    """Exact record counts and d-th power age sums at time t."""
    if t > state.t_now:
        raise GeometryError(f"t={t} is in the future of the state ({state.t_now})")
    d = state.spec.d
    cnt = bisect_right(state.taus, t)
    m_kept_terms = []
    m_all_terms = []
    n_kept = 0
    for j in range(cnt):
        age_pow = (t - state.taus[j]) ** d
        m_all_terms.append(age_pow)
        if state.kept[j]:
            n_kept += 1
            m_kept_terms.append(age_pow)
    return ProcessStats(
        n_kept=n_kept,
        m_kept=math.fsum(m_kept_terms),
        n_all=cnt,
        m_all=math.fsum(m_all_terms),
    )


# --- snapshots ------------------------------------------------------------

_SNAP_MAGIC = b"GOSSNAP1"
_SNAP_VERSION = 1
_HEADER = struct.Struct("<HH5dQQ")
_RNG_BLOCK = struct.Struct("<4QBI")


@dataclass(frozen=True)
class Snapshot:
    """Immutable serialized state; integrity-protected by a trailing hash."""

    data: bytes

    @property
    def t_now(self) -> float:
        return _HEADER.unpack_from(self.data, len(_SNAP_MAGIC))[6]

    @property
    def n_records(self) -> int:
        return _HEADER.unpack_from(self.data, len(_SNAP_MAGIC))[7]


def snapshot(state: GossipState) -> Snapshot:
    """Serialize the full state (records, clock, RNG) with a content hash."""
    spec = state.spec
    n = state.n_records
    d = spec.d
    parts = [
        _SNAP_MAGIC,
        _HEADER.pack(
            _SNAP_VERSION,
            d,
            spec.side,
            state.params.rho,
            state.params.nu_k,
            state.params.lam,
            state.t_now,
            n,
            state.seed_key,
        ),
    ]
    taus = np.asarray(state.taus, dtype="<f8")
    ps = np.asarray(state.ps, dtype="<f8").reshape(n, d)
    qs = np.full((n, d), np.nan, dtype="<f8")
    for j, q in enumerate(state.qs):
        if q is not None:
            qs[j] = q
    ksrc = np.asarray(
        [_NO_SOURCE if k < 0 else k for k in state.k_sources], dtype="<u8"
    )
    flags = np.asarray(
        [
            (1 if state.kept[j] else 0) | (2 if state.redundant[j] else 0)
            for j in range(n)
        ],
        dtype="u1",
    )
    parts.extend(
        [taus.tobytes(), ps.tobytes(), ksrc.tobytes(), qs.tobytes(), flags.tobytes()]
    )

    rs = state.rng.bit_generator.state
    if rs["bit_generator"] != "PCG64":
        raise FormatError(f"unsupported generator {rs['bit_generator']}")
    st = rs["state"]["state"]
    inc = rs["state"]["inc"]
    mask = (1 << 64) - 1
    parts.append(
        _RNG_BLOCK.pack(
            st & mask,
            (st >> 64) & mask,
            inc & mask,
            (inc >> 64) & mask,
            1 if rs["has_uint32"] else 0,
            rs["uinteger"],
        )
    )
    body = b"".join(parts)
    return Snapshot(data=body + blake2b(body, digest_size=8).digest())


def restore(snap: Snapshot, population_cap: int = 2_000_000) -> GossipState:
    """Rebuild a state that continues exactly where the snapshot was taken."""
    data = snap.data
    if len(data) < len(_SNAP_MAGIC) + _HEADER.size + 8:
        raise FormatError("snapshot truncated")
    body, digest = data[:-8], data[-8:]
    if blake2b(body, digest_size=8).digest() != digest:
        raise FormatError("snapshot hash mismatch")
    if data[: len(_SNAP_MAGIC)] != _SNAP_MAGIC:
        raise FormatError("snapshot magic mismatch")
    (
        version,
        d,
        side,
        rho,
        nu_k,
        lam,
        t_now,
        n,
        seed_key,
    ) = _HEADER.unpack_from(data, len(_SNAP_MAGIC))
    if version != _SNAP_VERSION:
        raise FormatError(f"snapshot version {version} unsupported")

    off = len(_SNAP_MAGIC) + _HEADER.size
    need = 8 * n + 8 * n * d + 8 * n + 8 * n * d + n + _RNG_BLOCK.size + 8
    if len(data) != off + need:
        raise FormatError(
            f"snapshot length {len(data)} does not match record count {n}"
        )

    def take(count: int, dtype: str) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    taus = take(n, "<f8")
    ps = take(n * d, "<f8").reshape(n, d)
    ksrc = take(n, "<u8")
    qs = take(n * d, "<f8").reshape(n, d)
    flags = take(n, "u1")
    s_lo, s_hi, i_lo, i_hi, has_u32, uint = _RNG_BLOCK.unpack_from(data, off)

    params = CmjParams(d=d, rho=rho, nu_k=nu_k)
    if abs(params.lam - lam) > 1e-9 * max(1.0, lam):
        raise FormatError(
            f"snapshot rate {lam} inconsistent with rho/nu_k ({params.lam})"
        )
    spec = TorusSpec(d=d, side=side)
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": (s_hi << 64) | s_lo, "inc": (i_hi << 64) | i_lo},
        "has_uint32": int(has_u32),
        "uinteger": int(uint),
    }

    state = GossipState(
        spec=spec,
        params=params,
        rng=rng,
        seed_key=int(seed_key),
        t_now=float(t_now),
        population_cap=population_cap,
    )
    state.taus = [float(t) for t in taus]
    state.ps = [tuple(float(c) for c in row) for row in ps]
    state.qs = [
        None if k == _NO_SOURCE else tuple(float(c) for c in qrow)
        for k, qrow in zip(ksrc, qs)
    ]
    state.k_sources = [-1 if k == _NO_SOURCE else int(k) for k in ksrc]
    state.kept = [bool(f & 1) for f in flags]
    state.redundant = [bool(f & 2) for f in flags]
    # Rebuild the prefix power sums in original append order, so every float
    # is reproduced exactly.
    cum = [[] for _ in range(d + 1)]
    for t in state.taus:
        tp = 1.0
        for k in range(d + 1):
            prev = cum[k][-1] if cum[k] else 0.0
            cum[k].append(prev + tp)
            tp *= t
    state.cum = cum
    state._ensure_grid(max(state.t_now, 1.0 / params.lam))
    return state


def save_snapshot(snap: Snapshot, path: str | Path) -> None:
    Path(path).write_bytes(snap.data)


def load_snapshot(path: str | Path) -> Snapshot:
    try:
        return Snapshot(data=Path(path).read_bytes())
    except OSError as exc:
        raise FormatError(f"cannot read snapshot {path}: {exc}") from exc
