"""Command-line front end.

Subcommands: ``phi-solve``, ``cmj-sample``, ``gossip-run`` (single-artifact
utilities) and ``clt``, ``collapse``, ``variance`` (the config-driven
studies).  Exit codes: 0 success, 1 configuration/usage error, 2 resource
error, 3 threshold failure under ``--check``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

from .branching import CmjParams, sample_w_batch
from .config import load_config, with_overrides
from .errors import ConfigError, ResourceLimitError, SimulationError
from .experiments import (
    _code_version,
    _fmt,
    clt_experiment,
    collapse_experiment,
    make_torus_state,
    provide_curves,
    t_window,
    variance_study,
    write_manifest,
)
from .gossip import (
    coverage_fraction,
    process_stats,
    run_until,
    save_snapshot,
    snapshot,
    w_hat,
)
from .laplace import save_phi_cache, solve_phi_fixed_point
from .rng import StreamRegistry
from .stats import summarize
from .torus import NU_BALL

__all__ = ["main", "check_thresholds"]


class _Parser(argparse.ArgumentParser):
    """argparse's default usage-error exit code is 2; the contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(p, config_required: bool):
    p.add_argument("--config", default=None, required=config_required,
                   help="flat TOML config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--threads", type=int, default=None, help="override worker count")
    p.add_argument("--exact-d1", action="store_true",
                   help="exact arc-union coverage (d = 1 only)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="torus-gossip", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("phi-solve", help="solve the transform fixed point, write a cache")
    p.add_argument("--d", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", default=".")

    p = sub.add_parser("cmj-sample", help="draw the growth-limit variable")
    p.add_argument("--d", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--horizon", type=float, default=12.0,
                   help="sampling horizon in units of 1/lam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")

    p = sub.add_parser("gossip-run", help="one full trajectory with a summary")
    p.add_argument("--d", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--big-lambda", type=float, required=True)
    p.add_argument("--u", type=float, default=0.0, help="stop at (log big-lambda + u)/lam")
    p.add_argument("--snapshot-alpha", type=float, default=None,
                   help="also freeze the state at alpha*log(big-lambda)/lam")
    p.add_argument("--probes", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--exact-d1", action="store_true")

    for name, helptext in (
        ("clt", "conditioned-snapshot normal-residual study"),
        ("collapse", "unconditional curve-collapse study"),
        ("variance", "conditional-variance scaling study"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p, config_required=True)
        p.add_argument("--check", action="store_true",
                       help="apply built-in thresholds; exit 3 on failure")
    return parser


def check_thresholds(kind: str, result, config) -> list:
    """Built-in acceptance-style bands; returns human-readable failures."""
    failures = []
    if kind == "clt":
        for u, st in result.per_u.items():
            s = st.summary
            if abs(s.mean) > 5.0 * s.se_mean:
                failures.append(
                    f"u={u:g}: residual mean {s.mean:.4g} exceeds 5*SE ({s.se_mean:.4g})"
                )
            ratio = s.variance / st.target_sd**2
            if not 0.7 <= ratio <= 1.4:
                failures.append(f"u={u:g}: variance ratio {ratio:.3f} outside [0.7, 1.4]")
            if st.w1 / st.target_sd > 0.15:
                failures.append(
                    f"u={u:g}: W1/sd {st.w1 / st.target_sd:.3f} exceeds 0.15"
                )
    elif kind == "collapse":
        final = config.big_lambdas[-1]
        for u in config.u_values:
            seq = [result.per_u[(bl, u)]["w1"] for bl in config.big_lambdas]
            if any(b > a for a, b in zip(seq, seq[1:])):
                failures.append(f"u={u:g}: W1 not weakly decreasing across the ladder {seq}")
            if result.per_u[(final, u)]["w1"] > 0.05:
                failures.append(
                    f"u={u:g}: final W1 {result.per_u[(final, u)]['w1']:.4f} exceeds 0.05"
                )
    elif kind == "variance":
        predicted = result.extras["predicted_slope"]
        for u in config.u_values:
            slope = result.extras["slopes"][u]
            if abs(slope - predicted) > 0.3:
                failures.append(
                    f"u={u:g}: slope {slope:.3f} not within 0.3 of {predicted:.3f}"
                )
            spread = result.extras["ratio_spreads"][u]
            if spread > 10.0:
                failures.append(f"u={u:g}: variance/bound spread {spread:.2f} exceeds 10")
    return failures


def _cmd_phi_solve(args) -> int:
    started = time.monotonic()
    phi = solve_phi_fixed_point(args.d, tol=args.tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = out / f"phi_d{args.d}.cache"
    save_phi_cache(phi, cache)
    write_manifest(out / "manifest.json", {
        "command": "phi-solve",
        "d": args.d,
        "tol": args.tol,
        "residual": phi.residual,
        "iterations": phi.iterations,
        "m2": phi.m2,
        "cache": cache.name,
        "code_version": _code_version(),
        "wall_time_s": time.monotonic() - started,
    })
    print(f"wrote {cache} (residual {phi.residual:.3e}, {phi.iterations} iterations)")
    return 0


def _cmd_cmj_sample(args) -> int:
    started = time.monotonic()
    params = CmjParams.from_lambda(args.d, 1.0, NU_BALL[args.d])
    registry = StreamRegistry(args.seed)
    draws = sample_w_batch(params, args.horizon, args.count, registry.stream(0, "cmj/sample"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["sample"] + [_fmt(w) for w in draws]
    (out / "w_samples.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    s = summarize(draws)
    write_manifest(out / "manifest.json", {
        "command": "cmj-sample",
        "d": args.d,
        "count": args.count,
        "horizon_mult": args.horizon,
        "master_seed": args.seed,
        "mean": s.mean,
        "variance": s.variance,
        "se_mean": s.se_mean,
        "code_version": _code_version(),
        "wall_time_s": time.monotonic() - started,
    })
    print(f"wrote {out / 'w_samples.csv'} (mean {s.mean:.4f}, variance {s.variance:.4f})")
    return 0


def _cmd_gossip_run(args) -> int:
    started = time.monotonic()
    if args.exact_d1 and args.d != 1:
        raise ConfigError("--exact-d1 requires --d 1")
    lam = 1.0
    registry = StreamRegistry(args.seed)
    state = make_torus_state(
        args.d, args.big_lambda, lam, registry.stream(0, "gossip/run"),
        seed_key=registry.key(0, "gossip/run"),
    )
    t_end = t_window(args.big_lambda, args.u, lam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    frozen = {}

    def observe(st, t):
        frozen["snapshot"] = snapshot(st)
        frozen["t"] = t
        frozen["mass"] = w_hat(st, t)

    checkpoints = ()
    if args.snapshot_alpha is not None:
        if not 0.0 < args.snapshot_alpha < 1.0:
            raise ConfigError("--snapshot-alpha must lie in (0, 1)")
        v = args.snapshot_alpha * math.log(args.big_lambda) / lam
        checkpoints = (v,)
    run_until(state, t_end, checkpoints=checkpoints,
              observe=observe if checkpoints else None)

    probe_rng = None if args.exact_d1 else registry.stream(0, "gossip/probe")
    cov, se = coverage_fraction(state, t_end, args.probes, probe_rng, exact=args.exact_d1)
    stats = process_stats(state, t_end)
    summary = {
        "command": "gossip-run",
        "d": args.d,
        "big_lambda": args.big_lambda,
        "u": args.u,
        "t_end": t_end,
        "master_seed": args.seed,
        "coverage": cov,
        "probe_se": se,
        "n_records": stats.n_all,
        "n_kept": stats.n_kept,
        "code_version": _code_version(),
        "wall_time_s": time.monotonic() - started,
    }
    if "snapshot" in frozen:
        save_snapshot(frozen["snapshot"], out / "snapshot.bin")
        summary["snapshot"] = {
            "file": "snapshot.bin",
            "t": frozen["t"],
            "mass_estimate": frozen["mass"],
        }
    write_manifest(out / "run_summary.json", summary)
    print(f"coverage {cov:.6f} (se {se:.2e}) with {stats.n_all} records -> {out}")
    return 0


_STUDIES = {
    "clt": ("clt", clt_experiment),
    "collapse": ("collapse", collapse_experiment),
    "variance": ("variance", variance_study),
}


def _cmd_study(args) -> int:
    kind, runner = _STUDIES[args.command]
    cfg = load_config(args.config, kind)
    cfg = with_overrides(
        cfg,
        master_seed=args.seed,
        threads=args.threads,
        exact_coverage=True if args.exact_d1 else None,
    )
    out_dir = args.out if args.out is not None else "."
    result = runner(cfg, out_dir=out_dir)
    print(f"{kind}: {len(result.records)} rows -> {Path(out_dir) / 'results.csv'}")
    if args.check:
        failures = check_thresholds(kind, result, cfg)
        if failures:
            for f in failures:
                sys.stderr.write(f"check failure: {f}\n")
            return 3
        print("all checks passed")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "phi-solve":
            return _cmd_phi_solve(args)
        if args.command == "cmj-sample":
            return _cmd_cmj_sample(args)
        if args.command == "gossip-run":
            return _cmd_gossip_run(args)
        return _cmd_study(args)
    except ResourceLimitError as exc:
        sys.stderr.write(f"resource error: {exc}\n")
        return 2
    except MemoryError:
        sys.stderr.write("resource error: out of memory\n")
        return 2
    except (ConfigError, FileNotFoundError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return 1
    except SimulationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
