"""Typed study configurations and flat TOML-style config files.

Config files are flat key = value text (TOML syntax, no nested tables); every
key maps one-to-one onto a dataclass field below, unknown keys are rejected
rather than ignored, and all range checks live in ``__post_init__`` so a
config object can never exist in an invalid state.  CLI overrides are applied
with :func:`dataclasses.replace`, which re-runs the same validation.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

import tomli

from .errors import ConfigError

__all__ = [
    "CltConfig",
    "CollapseConfig",
    "VarianceConfig",
    "load_config",
    "with_overrides",
    "CONFIG_KINDS",
]

_MAX_SEED = (1 << 64) - 1


def _check_common(cfg, replicates_floor: int = 2) -> None:
    if cfg.d not in (1, 2, 3):
        raise ConfigError(f"d must be 1, 2 or 3, got {cfg.d!r}")
    if not (isinstance(cfg.lam, float) and cfg.lam > 0.0 and math.isfinite(cfg.lam)):
        raise ConfigError(f"lam must be a positive finite float, got {cfg.lam!r}")
    if not (isinstance(cfg.replicates, int) and cfg.replicates >= replicates_floor):
        raise ConfigError(
            f"replicates must be an integer >= {replicates_floor}, got {cfg.replicates!r}"
        )
    if not (isinstance(cfg.master_seed, int) and 0 <= cfg.master_seed <= _MAX_SEED):
        raise ConfigError(f"master_seed must be a u64, got {cfg.master_seed!r}")
    if not (isinstance(cfg.threads, int) and cfg.threads >= 1):
        raise ConfigError(f"threads must be an integer >= 1, got {cfg.threads!r}")
    if cfg.exact_coverage:
        if cfg.d != 1:
            raise ConfigError("exact_coverage requires d = 1 (arc-union measurement)")
    elif not (isinstance(cfg.probes, int) and cfg.probes >= 1):
        raise ConfigError(
            f"probes must be an integer >= 1 when exact_coverage is off, got {cfg.probes!r}"
        )
    us = cfg.u_values
    if not us or any(not (isinstance(u, float) and math.isfinite(u)) for u in us):
        raise ConfigError(f"u_values must be nonempty finite floats, got {us!r}")
    if tuple(sorted(us)) != us or len(set(us)) != len(us):
        raise ConfigError(f"u_values must be strictly increasing, got {us!r}")


def _check_ladder(ladder, name: str) -> None:
    if not ladder:
        raise ConfigError(f"{name} must be a nonempty list")
    for lv in ladder:
        if not (isinstance(lv, float) and lv >= 10.0 and math.isfinite(lv)):
            raise ConfigError(f"every {name} entry must be a float >= 10, got {lv!r}")
    if tuple(sorted(ladder)) != ladder or len(set(ladder)) != len(ladder):
        raise ConfigError(f"{name} must be strictly increasing, got {ladder!r}")


def _as_float(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _as_float_tuple(value, key: str) -> tuple:
    if not isinstance(value, list):
        raise ConfigError(f"{key} must be a list of numbers, got {value!r}")
    return tuple(_as_float(v, key) for v in value)


@dataclass(frozen=True)
class CltConfig:
    """Conditioned-snapshot normal-residual study.

    One trajectory is run to the snapshot time ``v = alpha * log(Lambda) /
    lam`` and gated on its mass estimate; ``replicates`` continuations then
    serve every ``u`` through in-run checkpoints at each coverage-window time
    ``(log(Lambda) + u) / lam``.
    """

    d: int
    lam: float
    big_lambda: float
    alpha: float
    u_values: tuple
    replicates: int
    master_seed: int
    probes: int = 100_000
    w_lo: float = 0.05
    w_hi: float = 20.0
    seed_budget: int = 50
    threads: int = 1
    exact_coverage: bool = False
    phi_cache: str = ""

    def __post_init__(self):
        _check_common(self)
        if not (isinstance(self.big_lambda, float) and self.big_lambda >= 10.0):
            raise ConfigError(f"big_lambda must be a float >= 10, got {self.big_lambda!r}")
        if not 0.0 < self.alpha < 2.0 / 3.0:
            raise ConfigError(
                f"alpha must lie strictly between 0 and 2/3, got {self.alpha!r}"
            )
        if not (0.0 < self.w_lo < self.w_hi and math.isfinite(self.w_hi)):
            raise ConfigError(
                f"gate bounds need 0 < w_lo < w_hi, got [{self.w_lo!r}, {self.w_hi!r}]"
            )
        if not (isinstance(self.seed_budget, int) and self.seed_budget >= 1):
            raise ConfigError(f"seed_budget must be an integer >= 1, got {self.seed_budget!r}")
        log_l = math.log(self.big_lambda)
        if self.u_values[0] <= (self.alpha - 1.0) * log_l:
            raise ConfigError(
                f"u = {self.u_values[0]} places the measurement before the snapshot "
                f"time (needs u > (alpha - 1) * log(big_lambda) = "
                f"{(self.alpha - 1.0) * log_l:.4f})"
            )


@dataclass(frozen=True)
class CollapseConfig:
    """Unconditional coverage-law collapse across a system-size ladder.

    ``replicates`` independent full runs per ladder entry; the empirical
    coverage law at each checkpoint is compared against the limit curve
    evaluated at matched fresh draws of the mass limit.
    """

    d: int
    lam: float
    big_lambdas: tuple
    u_values: tuple
    replicates: int
    master_seed: int
    probes: int = 100_000
    horizon_mult: float = 12.0
    threads: int = 1
    exact_coverage: bool = False
    phi_cache: str = ""

    def __post_init__(self):
        _check_common(self)
        _check_ladder(self.big_lambdas, "big_lambdas")
        if not (isinstance(self.horizon_mult, float) and self.horizon_mult >= 8.0):
            raise ConfigError(
                f"horizon_mult must be a float >= 8, got {self.horizon_mult!r}"
            )


@dataclass(frozen=True)
class VarianceConfig:
    """Conditional-variance scaling study over a system-size ladder.

    Per ladder entry: ``snapshots`` independent trajectories are frozen at
    the conditioning time ``alpha2 * log(Lambda) / lam`` and each is continued
    ``replicates`` times to the coverage-window times; the spread of the
    continuations estimates the conditional variance, compared against the
    moment-bound shape computed from the frozen state.  ``alpha1 < alpha2``
    mirrors the two-exponent regime the scaling prediction is stated in
    (conditioning at exponent alpha2, measurement at exponent 1).
    """

    d: int
    lam: float
    big_lambdas: tuple
    alpha1: float
    alpha2: float
    u_values: tuple
    replicates: int
    snapshots: int
    master_seed: int
    probes: int = 100_000
    threads: int = 1
    exact_coverage: bool = False
    phi_cache: str = ""

    def __post_init__(self):
        _check_common(self)
        _check_ladder(self.big_lambdas, "big_lambdas")
        if not (0.0 < self.alpha1 < self.alpha2 < 1.0):
            raise ConfigError(
                f"exponents need 0 < alpha1 < alpha2 < 1, got "
                f"alpha1={self.alpha1!r}, alpha2={self.alpha2!r}"
            )
        if not (isinstance(self.snapshots, int) and self.snapshots >= 1):
            raise ConfigError(f"snapshots must be an integer >= 1, got {self.snapshots!r}")
        for lv in self.big_lambdas:
            if self.u_values[0] <= (self.alpha2 - 1.0) * math.log(lv):
                raise ConfigError(
                    f"u = {self.u_values[0]} is not after the conditioning time at "
                    f"big_lambda = {lv}"
                )


CONFIG_KINDS = {
    "clt": CltConfig,
    "collapse": CollapseConfig,
    "variance": VarianceConfig,
}

_FLOAT_TUPLE_KEYS = {"u_values", "big_lambdas"}
_FLOAT_KEYS = {
    "lam",
    "big_lambda",
    "alpha",
    "alpha1",
    "alpha2",
    "w_lo",
    "w_hi",
    "horizon_mult",
}


def load_config(path, kind: str):
    """Parse a flat TOML config file into the dataclass for ``kind``.

    The optional ``experiment`` key, when present, must match ``kind``; any
    other unknown key is an error (typos must not silently change a study).
    """
    cls = CONFIG_KINDS.get(kind)
    if cls is None:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    p = Path(path)
    try:
        raw = tomli.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid TOML: {exc}") from exc

    declared = raw.pop("experiment", kind)
    if declared != kind:
        raise ConfigError(
            f"config file {p} declares experiment = {declared!r}, expected {kind!r}"
        )
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"config must be flat; {key!r} is a table")

    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {kind}: {', '.join(unknown)}")

    coerced = {}
    for key, value in raw.items():
        if key in _FLOAT_TUPLE_KEYS:
            coerced[key] = _as_float_tuple(value, key)
        elif key in _FLOAT_KEYS:
            coerced[key] = _as_float(value, key)
        else:
            coerced[key] = value
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"config file {p} is incomplete: {exc}") from exc


def with_overrides(cfg, **overrides):
    """Replace fields (dropping None values); validation re-runs."""
    actual = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **actual) if actual else cfg
