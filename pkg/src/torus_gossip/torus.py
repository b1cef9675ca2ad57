"""Geometry of the flat d-dimensional torus (d = 1, 2, 3).

Points live in ``[0, side)^d`` with the wrap-around Euclidean metric, so every
ball of radius ``s <= side/2`` has exactly the Euclidean volume ``nu_k * s^d``.
Radii beyond ``side/2`` would self-overlap around the torus; every operation
treats that as a hard misconfiguration error rather than approximating.

Informed regions are closed balls growing at unit speed from their birth time,
so membership of a probe point reduces to a minimum of ``birth + distance``
over discs (``coverage_time``).  For d = 1 the union of arcs is computed
exactly by an endpoint sweep; higher dimensions are measured by Monte Carlo
probes elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GeometryError

__all__ = [
    "NU_BALL",
    "TorusSpec",
    "TorusPoint",
    "Disc",
    "torus_distance",
    "ball_volume",
    "discs_intersect",
    "uniform_point",
    "uniform_in_ball",
    "coverage_time",
    "arc_union_length",
    "coverage_times_batch",
]

#: Volume of the unit ball in R^d for the supported dimensions.
NU_BALL = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}

#: A point of the torus: a tuple of d coordinates, each in [0, side).
TorusPoint = tuple  # type: ignore[assignment]


@dataclass(frozen=True)
class TorusSpec:
    """Flat torus [0, side)^d; with unit-ball volume and total volume attached."""

    d: int
    side: float
    nu_k: float = field(init=False)
    volume: float = field(init=False)

    def __post_init__(self):
        if self.d not in NU_BALL:
            raise GeometryError(f"dimension must be 1, 2 or 3, got {self.d}")
        side = float(self.side)
        if not (side > 0.0 and math.isfinite(side)):
            raise GeometryError(f"side must be positive and finite, got {self.side}")
        object.__setattr__(self, "side", side)
        object.__setattr__(self, "nu_k", NU_BALL[self.d])
        object.__setattr__(self, "volume", side**self.d)

    @property
    def wrap_radius(self) -> float:
        """Largest radius at which a ball is still an embedded Euclidean ball."""
        return 0.5 * self.side


class Disc(NamedTuple):
    """A closed ball growing at unit speed: radius at time t is t - birth."""

    center: TorusPoint
    birth: float


def _check_point(p: Sequence[float], spec: TorusSpec) -> None:
    if len(p) != spec.d:
        raise GeometryError(f"point has {len(p)} coordinates, spec has d={spec.d}")


def _wrap(x: float, side: float) -> float:
    # Float % can round a tiny negative x up to exactly `side`; the domain
    # is the half-open interval, so fold that edge back to 0.
    x = x % side
    return x if x < side else 0.0


def torus_distance(p: Sequence[float], q: Sequence[float], spec: TorusSpec) -> float:
    """Geodesic distance: per-coordinate wrap min(|dx|, side - |dx|), then Euclidean."""
    _check_point(p, spec)
    _check_point(q, spec)
    side = spec.side
    acc = 0.0
    for a, b in zip(p, q):
        dx = abs(a - b)
        if dx > side - dx:
            dx = side - dx
        acc += dx * dx
    return math.sqrt(acc)


def ball_volume(s: float, spec: TorusSpec) -> float:
    """Volume of a ball of radius s: exactly nu_k * s^d below the wrap radius."""
    if s < 0.0:
        raise GeometryError(f"negative radius {s}")
    if s > spec.wrap_radius:
        raise GeometryError(
            f"radius {s} exceeds the wrap radius side/2 = {spec.wrap_radius}; "
            "the run's parameters are outside the validity regime"
        )
    return spec.nu_k * s**spec.d


def discs_intersect(a: Disc, b: Disc, t: float, spec: TorusSpec) -> bool:
    """Closed balls at time t intersect iff centre distance <= sum of radii."""
    if t < a.birth or t < b.birth:
        raise GeometryError(f"query time {t} precedes a disc birth")
    return torus_distance(a.center, b.center, spec) <= (t - a.birth) + (t - b.birth)


def uniform_point(rng: np.random.Generator, spec: TorusSpec) -> TorusPoint:
    """A point uniform on the torus."""
    return tuple(float(x) for x in rng.random(spec.d) * spec.side)


def uniform_in_ball(
    rng: np.random.Generator, center: Sequence[float], radius: float, spec: TorusSpec
) -> TorusPoint:
    """A point uniform in the closed ball around ``center``.

    Sampled by rejection from the bounding cube (acceptance >= pi/4 for d=2),
    then wrapped into [0, side).  Deterministic given the generator state.
    """
    _check_point(center, spec)
    if radius < 0.0:
        raise GeometryError(f"negative radius {radius}")
    if radius > spec.wrap_radius:
        raise GeometryError(
            f"ball radius {radius} exceeds the wrap radius {spec.wrap_radius}"
        )
    side = spec.side
    if radius == 0.0:
        return tuple(_wrap(float(c), side) for c in center)
    d = spec.d
    r2 = radius * radius
    while True:
        offs = (rng.random(d) * 2.0 - 1.0) * radius
        norm2 = float(offs @ offs)
        if norm2 <= r2:
            return tuple(_wrap(float(c + o), side) for c, o in zip(center, offs))


def coverage_time(probe: Sequence[float], discs: Sequence[Disc], spec: TorusSpec) -> float:
    """Earliest time at which the probe is inside some disc.

    Unit-speed growth makes membership at time t equivalent to
    ``birth + distance(center, probe) <= t``, so the earliest covering time is
    the minimum of that expression over discs.
    """
    if not discs:
        raise GeometryError("coverage_time needs at least one disc")
    return min(d.birth + torus_distance(d.center, probe, spec) for d in discs)


def arc_union_length(discs: Sequence[Disc], t: float, spec: TorusSpec) -> float:
    """Exact length of the union of arcs at time t on the circle (d = 1).

    Each disc contributes the arc [center - r, center + r] with r = t - birth
    (discs born after t contribute nothing).  Arcs are normalized to start in
    [0, side), split at the wrap point, and merged by an endpoint sweep.
    """
    if spec.d != 1:
        raise GeometryError(f"arc_union_length requires d=1, got d={spec.d}")
    side = spec.side
    segments = []
    for disc in discs:
        r = t - disc.birth
        if r <= 0.0:
            continue
        if r > spec.wrap_radius:
            raise GeometryError(
                f"arc radius {r} exceeds the wrap radius {spec.wrap_radius}"
            )
        start = (disc.center[0] - r) % side
        end = start + 2.0 * r
        if end <= side:
            segments.append((start, end))
        else:
            segments.append((start, side))
            segments.append((0.0, end - side))
    if not segments:
        return 0.0
    segments.sort()
    total = 0.0
    cur_lo, cur_hi = segments[0]
    for lo, hi in segments[1:]:
        if lo <= cur_hi:
            if hi > cur_hi:
                cur_hi = hi
        else:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
    total += cur_hi - cur_lo
    return min(total, side)


def coverage_times_batch(
    probes: np.ndarray,
    centers: np.ndarray,
    births: np.ndarray,
    spec: TorusSpec,
    chunk_elems: int = 1 << 24,
) -> np.ndarray:
    """Vectorized ``coverage_time`` for many probes against many discs.

    probes: (m, d) array; centers: (n, d); births: (n,).  Returns (m,) of
    min over discs of (birth + wrap distance).  Work is tiled so no temporary
    exceeds ``chunk_elems`` elements.
    """
    probes = np.asarray(probes, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    births = np.asarray(births, dtype=np.float64)
    m = probes.shape[0]
    n = centers.shape[0]
    if n == 0:
        raise GeometryError("coverage_times_batch needs at least one disc")
    side = spec.side
    out = np.empty(m, dtype=np.float64)
    rows = max(1, int(chunk_elems // max(n, 1)))
    for lo in range(0, m, rows):
        hi = min(lo + rows, m)
        delta = np.abs(probes[lo:hi, None, :] - centers[None, :, :])
        np.minimum(delta, side - delta, out=delta)
        if spec.d == 1:
            dist = delta[:, :, 0]
        else:
            dist = np.sqrt(np.einsum("ijk,ijk->ij", delta, delta))
        np.add(dist, births[None, :], out=dist)
        out[lo:hi] = dist.min(axis=1)
    return out
